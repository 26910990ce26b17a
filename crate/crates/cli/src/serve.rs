//! WebSocket bridge between a live-leader session and one console client.
//!
//! The engine thread ticks the session at the configured rate; the calling
//! thread owns the socket. They share bounded queues. Outgoing pose/force
//! frames drop the oldest entry when full, since only the latest state
//! matters; state and calibration events use their own queue so streaming
//! cannot crowd them out.

use std::io::{ErrorKind, Write as _};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam::channel::{bounded, Receiver, Sender};
use crossbeam::queue::ArrayQueue;
use tungstenite::protocol::frame::coding::CloseCode;
use tungstenite::protocol::CloseFrame;
use tungstenite::{Message, WebSocket};

use teleus_core::protocol::{decode, encode, CalibrationUpdate, ForcePose, FrameSender};
use teleus_core::session::ControlCommand;
use teleus_core::{Payload, Phase, Pose, Session, SessionConfig};

use crate::run::{load_config, write_file};
use crate::CliError;

/// Text greeting sent to each client before any binary frame.
pub const HELLO: &str = "teleus-wire v1";
/// Close reason for a frame that fails to decode or is not allowed from a
/// console.
pub const BAD_FRAME: &str = "BadFrame";

const STREAM_CAPACITY: usize = 64;
const EVENT_CAPACITY: usize = 256;
const POLL_INTERVAL: Duration = Duration::from_millis(2);

enum Inbound {
    Connected,
    Control(String),
}

struct Bridge {
    poses: ArrayQueue<Pose>,
    stream: ArrayQueue<Vec<u8>>,
    events: ArrayQueue<Vec<u8>>,
}

impl Bridge {
    fn new() -> Self {
        Self {
            poses: ArrayQueue::new(4),
            stream: ArrayQueue::new(STREAM_CAPACITY),
            events: ArrayQueue::new(EVENT_CAPACITY),
        }
    }

    fn clear_outbound(&self) {
        while self.stream.pop().is_some() {}
        while self.events.pop().is_some() {}
    }
}

pub fn cmd_serve(port: u16, config: Option<&Path>, out: Option<PathBuf>) -> Result<(), CliError> {
    let (_, cfg) = load_config(config, None, None)?;
    let listener = TcpListener::bind(("127.0.0.1", port)).map_err(|e| match e.kind() {
        ErrorKind::AddrInUse => CliError::PortInUse(port),
        _ => CliError::Runtime(format!("bind 127.0.0.1:{port}: {e}")),
    })?;
    let addr = listener
        .local_addr()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    // The banner goes out in one write; a reader that stops listening after
    // it must not take the server down.
    let _ = write!(
        std::io::stdout(),
        "listening={addr}\nconfig_hash={}\n",
        cfg.config_hash()
    );
    let _ = std::io::stdout().flush();

    let out = out.unwrap_or_else(|| PathBuf::from(format!("live_{}.log", cfg.seed)));
    let bridge = Arc::new(Bridge::new());
    let (tx, rx) = bounded(EVENT_CAPACITY);
    let engine_bridge = Arc::clone(&bridge);
    let engine_cfg = cfg.clone();
    thread::Builder::new()
        .name("engine".into())
        .spawn(move || engine_loop(engine_cfg, engine_bridge, rx, out))
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    for stream in listener.incoming() {
        match stream {
            Ok(s) => {
                let peer = s.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                log::info!("client {peer} connected");
                match serve_client(s, &bridge, &tx) {
                    Ok(()) => log::info!("client {peer} left"),
                    Err(e) => log::warn!("client {peer}: {e}"),
                }
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
    Ok(())
}

fn push_event(bridge: &Bridge, stamp: &mut FrameSender, payload: Payload, t_us: u64) {
    match stamp.stamp(payload, t_us).and_then(|m| encode(&m)) {
        Ok(bytes) => {
            bridge.events.force_push(bytes);
        }
        Err(e) => log::error!("cannot encode event: {e}"),
    }
}

fn engine_loop(cfg: SessionConfig, bridge: Arc<Bridge>, inbound: Receiver<Inbound>, out: PathBuf) {
    let mut session = match Session::new_live(cfg.clone()) {
        Ok(s) => s,
        Err(e) => {
            log::error!("{e}");
            return;
        }
    };
    let mut stamp = FrameSender::new();
    let period = Duration::from_secs_f64(1.0 / cfg.tick_rate_hz as f64);
    let mut next = Instant::now();
    let mut announced: Option<Phase> = None;
    // Wire timestamps stay monotone across consecutive sessions.
    let mut base_us = 0u64;
    loop {
        while let Ok(msg) = inbound.try_recv() {
            match msg {
                Inbound::Connected => announced = None,
                Inbound::Control(text) => {
                    let t = base_us + session.now_us();
                    let result = ControlCommand::parse(&text, &session.config().contact)
                        .and_then(|c| session.apply_control(&c));
                    if let Err(e) = result {
                        log::warn!("control {text:?}: {e}");
                        push_event(
                            &bridge,
                            &mut stamp,
                            Payload::Control(format!("ERROR {e}")),
                            t,
                        );
                    }
                }
            }
        }
        let mut latest = None;
        while let Some(p) = bridge.poses.pop() {
            latest = Some(p);
        }
        if let Some(p) = latest {
            session.push_live_pose(p);
        }

        match session.tick() {
            Ok(Some(tick)) => {
                let t = base_us + tick.record.t_us;
                let fp = ForcePose {
                    force: tick.record.force,
                    pose: tick.record.follower,
                };
                match stamp
                    .stamp(Payload::FollowerForcePose(fp), t)
                    .and_then(|m| encode(&m))
                {
                    Ok(bytes) => {
                        bridge.stream.force_push(bytes);
                    }
                    Err(e) => log::error!("cannot encode frame: {e}"),
                }
                if let Some(m) = tick.fitted {
                    push_event(
                        &bridge,
                        &mut stamp,
                        Payload::Calibration(CalibrationUpdate::Fitted(m)),
                        t,
                    );
                }
            }
            Ok(None) => {}
            Err(e) => log::error!("session ended: {e}"),
        }

        let phase = session.phase();
        if announced != Some(phase) {
            let t = base_us + session.now_us();
            push_event(
                &bridge,
                &mut stamp,
                Payload::Control(format!("PHASE {phase}")),
                t,
            );
            if let Phase::AwaitingCalibration(n) = phase {
                push_event(
                    &bridge,
                    &mut stamp,
                    Payload::Calibration(CalibrationUpdate::Step(n)),
                    t,
                );
            }
            announced = Some(phase);
        }

        if session.is_ended() {
            let log = session.to_log(None);
            if !log.records.is_empty() {
                match write_file(&out, &log.to_text()) {
                    Ok(()) => log::info!("wrote {}", out.display()),
                    Err(e) => log::error!("{e}"),
                }
            }
            base_us += session.now_us() + period.as_micros() as u64;
            session = match Session::new_live(cfg.clone()) {
                Ok(s) => s,
                Err(e) => {
                    log::error!("{e}");
                    return;
                }
            };
        }

        next += period;
        let now = Instant::now();
        if next > now {
            thread::sleep(next - now);
        } else {
            // Fell behind; do not try to catch up in a burst.
            next = now;
        }
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

#[allow(clippy::result_large_err)]
fn reject(ws: &mut WebSocket<TcpStream>, why: &str) -> Result<(), tungstenite::Error> {
    log::warn!("closing client: {why}");
    ws.close(Some(CloseFrame {
        code: CloseCode::Policy,
        reason: BAD_FRAME.into(),
    }))?;
    // Let the close handshake finish, but do not wait forever.
    let deadline = Instant::now() + Duration::from_secs(1);
    while Instant::now() < deadline {
        match ws.read() {
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(_) => break,
        }
    }
    Ok(())
}

#[allow(clippy::result_large_err)]
fn serve_client(
    stream: TcpStream,
    bridge: &Bridge,
    tx: &Sender<Inbound>,
) -> Result<(), tungstenite::Error> {
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => {
            tungstenite::Error::Io(std::io::Error::from(ErrorKind::WouldBlock))
        }
    })?;
    ws.get_mut().set_read_timeout(Some(POLL_INTERVAL))?;
    bridge.clear_outbound();
    ws.send(Message::text(HELLO))?;
    let _ = tx.send(Inbound::Connected);

    loop {
        while let Some(f) = bridge.events.pop() {
            ws.write(Message::binary(f))?;
        }
        while let Some(f) = bridge.stream.pop() {
            ws.write(Message::binary(f))?;
        }
        ws.flush()?;

        match ws.read() {
            Ok(Message::Binary(bytes)) => match decode(&bytes) {
                Ok(msg) => match msg.payload {
                    Payload::ExpertPose(p) => {
                        bridge.poses.force_push(p);
                    }
                    Payload::Control(text) => {
                        let _ = tx.send(Inbound::Control(text));
                    }
                    other => {
                        return reject(
                            &mut ws,
                            &format!("{:?} frame from console", other.channel()),
                        );
                    }
                },
                Err(e) => return reject(&mut ws, &e.to_string()),
            },
            Ok(Message::Text(t)) => return reject(&mut ws, &format!("unexpected text {t:?}")),
            Ok(Message::Close(_)) => {}
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                return Ok(())
            }
            Err(e) => return Err(e),
        }
    }
}
