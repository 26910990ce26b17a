//! Teleoperation session engine.
//!
//! A [`Session`] owns both ends of the emulated link. Every tick it samples
//! the leader, streams the expert pose to the follower, advances the follower
//! (scripted calibration presses, then the tracking model), streams the
//! follower's force and pose back, runs the calibration procedure on the
//! leader side and renders the proxy contact force for the leader.
//!
//! Everything is driven by the tick index, so a config and its seeds fully
//! determine the trajectory log.

pub mod calibration;
pub mod follower;
pub mod leader;
pub mod log;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{contact_force, ContactParams, EllipsoidModel, GeometryError};
use crate::netsim::{Link, NetsimError, NetworkPreset};
use crate::pose::{Pose, Vec3};
use crate::protocol::{
    decode, encode, ForcePose, FrameSender, Payload, ProtocolError, WireMessage,
};

use calibration::{
    CalibrationEvent, CalibrationParams, CalibrationProcedure, ForceSample, PressScript,
};
use follower::{FollowerModel, FollowerParams};
use leader::{default_scan, home_pose, VelocityFilter, WaypointTrajectory};
pub use log::{LogHeader, Phase, TrajectoryLog, TrajectoryRecord};

pub const TICK_RATE_RANGE: std::ops::RangeInclusive<u32> = 10..=1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Netsim(#[from] NetsimError),
    #[error("calibration step {step} timed out")]
    CalibrationTimeout { step: u8 },
    #[error("sample stream ended during calibration step {step}")]
    CalibrationIncomplete { step: u8 },
    #[error("cannot {command} while {phase}")]
    InvalidTransition { command: String, phase: String },
    #[error("bad control command: {0}")]
    Control(String),
    #[error("log line {line}: {msg}")]
    Log { line: usize, msg: String },
}

/// Default landmark positions of the simulated patient: xiphoid, extreme
/// left, extreme right, bed.
pub const DEFAULT_LANDMARKS: [[f64; 3]; 4] = [
    [0.0, 0.24, 0.0],
    [0.05, 0.14, -0.16],
    [0.05, 0.14, 0.16],
    [0.2, 0.0, 0.3],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub seed: u64,
    pub tick_rate_hz: u32,
    /// Scripted scan length after calibration.
    pub scan_duration_s: f64,
    /// Leader-to-follower link. Its seed drives that link.
    pub network: NetworkPreset,
    /// Seed of the follower-to-leader link, which otherwise mirrors `network`.
    pub return_seed: u64,
    pub follower: FollowerParams,
    pub contact: ContactParams,
    pub calibration: CalibrationParams,
    pub velocity_cutoff_hz: f64,
    pub landmarks: [[f64; 3]; 4],
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self::seeded(0)
    }
}

impl SessionConfig {
    /// Defaults over the WiFi preset with every seed derived from `seed`.
    pub fn seeded(seed: u64) -> Self {
        let mut cfg = Self {
            seed,
            tick_rate_hz: 100,
            scan_duration_s: 60.0,
            network: NetworkPreset::wifi(seed),
            return_seed: 0,
            follower: FollowerParams::default(),
            contact: ContactParams::default(),
            calibration: CalibrationParams::default(),
            velocity_cutoff_hz: 20.0,
            landmarks: DEFAULT_LANDMARKS,
        };
        cfg.reseed(seed);
        cfg
    }

    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.network.seed = seed;
        self.return_seed = seed ^ 0x005E_ED0F_BAC4;
        self.follower.seed = seed.wrapping_add(1);
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if !TICK_RATE_RANGE.contains(&self.tick_rate_hz) {
            return Err(SessionError::Config(format!(
                "tick_rate out of range ({}..={} Hz): {}",
                TICK_RATE_RANGE.start(),
                TICK_RATE_RANGE.end(),
                self.tick_rate_hz
            )));
        }
        if !(self.scan_duration_s.is_finite() && self.scan_duration_s > 0.0) {
            return Err(SessionError::Config("scan_duration_s must be > 0".into()));
        }
        self.network.validate()?;
        self.follower.validate().map_err(SessionError::Config)?;
        self.contact
            .validate()
            .map_err(|e| SessionError::Config(e.to_string()))?;
        let c = &self.calibration;
        if !(c.force_threshold_n.is_finite() && c.force_threshold_n > 0.0) {
            return Err(SessionError::Config(
                "calibration threshold must be > 0".into(),
            ));
        }
        if !(c.hold_ms >= 0.0 && c.step_timeout_ms > 0.0) {
            return Err(SessionError::Config(
                "calibration hold/timeout must be non-negative".into(),
            ));
        }
        if !(self.velocity_cutoff_hz.is_finite() && self.velocity_cutoff_hz > 0.0) {
            return Err(SessionError::Config(
                "velocity_cutoff_hz must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical rendering of the
    /// config.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn landmark_points(&self) -> [Vec3; 4] {
        self.landmarks.map(Vec3::from)
    }

    pub fn tick_period_us(&self, tick: u64) -> u64 {
        (tick as f64 * 1e6 / self.tick_rate_hz as f64).round() as u64
    }
}

/// Parsed control-channel command. Text form: `VERB key=value ...`.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlCommand {
    Start,
    Stop,
    Freeze,
    Unfreeze,
    /// Ask the follower to press the next calibration landmark.
    CalNext,
    Gains(ContactParams),
}

impl ControlCommand {
    pub fn parse(text: &str, current: &ContactParams) -> Result<Self, SessionError> {
        let mut parts = text.split_ascii_whitespace();
        let verb = parts
            .next()
            .ok_or_else(|| SessionError::Control("empty command".into()))?;
        let cmd = match verb.to_ascii_uppercase().as_str() {
            "START" => ControlCommand::Start,
            "STOP" => ControlCommand::Stop,
            "FREEZE" => ControlCommand::Freeze,
            "UNFREEZE" => ControlCommand::Unfreeze,
            "CAL_NEXT" => ControlCommand::CalNext,
            "GAINS" => {
                let mut params = *current;
                for kv in parts.by_ref() {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| SessionError::Control(format!("bad field {kv:?}")))?;
                    let vals = parse_triplet(v)
                        .ok_or_else(|| SessionError::Control(format!("bad gains {v:?}")))?;
                    match k {
                        "kp" => params.kp = vals,
                        "kd" => params.kd = vals,
                        _ => return Err(SessionError::Control(format!("unknown gain {k:?}"))),
                    }
                }
                params
                    .validate()
                    .map_err(|e| SessionError::Control(e.to_string()))?;
                ControlCommand::Gains(params)
            }
            other => return Err(SessionError::Control(format!("unknown command {other:?}"))),
        };
        if let Some(extra) = parts.next() {
            return Err(SessionError::Control(format!(
                "unexpected argument {extra:?}"
            )));
        }
        Ok(cmd)
    }

    pub fn to_text(&self) -> String {
        match self {
            ControlCommand::Start => "START".into(),
            ControlCommand::Stop => "STOP".into(),
            ControlCommand::Freeze => "FREEZE".into(),
            ControlCommand::Unfreeze => "UNFREEZE".into(),
            ControlCommand::CalNext => "CAL_NEXT".into(),
            ControlCommand::Gains(p) => format!(
                "GAINS kp={},{},{} kd={},{},{}",
                p.kp[0], p.kp[1], p.kp[2], p.kd[0], p.kd[1], p.kd[2]
            ),
        }
    }
}

fn parse_triplet(v: &str) -> Option<[f64; 3]> {
    let vals: Vec<f64> = v
        .split(',')
        .map(|s| s.parse().ok())
        .collect::<Option<_>>()?;
    match vals.as_slice() {
        [x] => Some([*x; 3]),
        [x, y, z] => Some([*x, *y, *z]),
        _ => None,
    }
}

/// Where the leader pose comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaderMode {
    Scripted,
    /// Poses pushed by an operator console.
    Live,
}

/// Snapshot of what one tick produced, for consumers such as the console
/// bridge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickOutput {
    pub record: TrajectoryRecord,
    /// Set on the tick the ellipsoid was fitted.
    pub fitted: Option<EllipsoidModel>,
}

pub struct Session {
    config: SessionConfig,
    mode: LeaderMode,
    phase: Phase,
    ellipsoid: Option<EllipsoidModel>,
    tick_index: u64,
    dt_s: f64,

    forward: Link,
    backward: Link,
    leader_tx: FrameSender,
    follower_tx: FrameSender,

    calibration: CalibrationProcedure,
    presses: PressScript,
    active_press: Option<(usize, u64)>,
    press_requests: u32,

    follower: FollowerModel,
    follower_pose: Pose,
    /// Latest follower report received on the leader side.
    follower_report: Option<ForcePose>,

    leader_pose: Pose,
    live_pose: Option<Pose>,
    scan: Option<WaypointTrajectory>,
    scan_ticks: u64,
    scan_total_ticks: u64,
    velocity: VelocityFilter,
    last_force: Vec3,

    records: Vec<TrajectoryRecord>,
    diagnostic: Option<String>,
}

impl Session {
    /// Scripted session starting with calibration.
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        Self::build(config, LeaderMode::Scripted, Phase::AwaitingCalibration(1))
    }

    /// Live-leader session waiting for a START command.
    pub fn new_live(config: SessionConfig) -> Result<Self, SessionError> {
        Self::build(config, LeaderMode::Live, Phase::Idle)
    }

    /// Scripted session that skips calibration and scans `model` directly.
    pub fn with_model(config: SessionConfig, model: EllipsoidModel) -> Result<Self, SessionError> {
        model.validate()?;
        let mut s = Self::build(config, LeaderMode::Scripted, Phase::Scanning)?;
        s.enter_scanning(model);
        Ok(s)
    }

    fn build(config: SessionConfig, mode: LeaderMode, phase: Phase) -> Result<Self, SessionError> {
        config.validate()?;
        let backward_preset = NetworkPreset {
            seed: config.return_seed,
            ..config.network.clone()
        };
        let dt_s = 1.0 / config.tick_rate_hz as f64;
        let landmarks = config.landmark_points();
        let rest = Pose::from_position(landmarks[0] + Vec3::new(0.0, 0.05, 0.0));
        Ok(Self {
            forward: Link::new(config.network.clone())?,
            backward: Link::new(backward_preset)?,
            leader_tx: FrameSender::new(),
            follower_tx: FrameSender::new(),
            calibration: CalibrationProcedure::new(config.calibration.clone()),
            presses: PressScript::new(landmarks),
            active_press: None,
            press_requests: 0,
            follower: FollowerModel::new(config.follower.clone()),
            follower_pose: rest,
            follower_report: None,
            leader_pose: home_pose(None),
            live_pose: None,
            scan: None,
            scan_ticks: 0,
            scan_total_ticks: (config.scan_duration_s * config.tick_rate_hz as f64).round() as u64,
            velocity: VelocityFilter::new(config.velocity_cutoff_hz, dt_s),
            last_force: Vec3::zeros(),
            records: Vec::new(),
            diagnostic: None,
            ellipsoid: None,
            tick_index: 0,
            dt_s,
            phase,
            mode,
            config,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn ellipsoid(&self) -> Option<&EllipsoidModel> {
        self.ellipsoid.as_ref()
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn diagnostic(&self) -> Option<&str> {
        self.diagnostic.as_deref()
    }

    pub fn follower_offset(&self) -> (Vec3, crate::pose::Quat) {
        self.follower.offset()
    }

    pub fn last_force(&self) -> Vec3 {
        self.last_force
    }

    pub fn follower_report(&self) -> Option<&ForcePose> {
        self.follower_report.as_ref()
    }

    pub fn link_stats(&self) -> (crate::netsim::ChannelStats, crate::netsim::ChannelStats) {
        (self.forward.total_stats(), self.backward.total_stats())
    }

    pub fn now_us(&self) -> u64 {
        self.config.tick_period_us(self.tick_index)
    }

    pub fn is_ended(&self) -> bool {
        self.phase == Phase::Ended
    }

    /// Latest operator pose in live mode. Poses are state, so only the most
    /// recent one matters.
    pub fn push_live_pose(&mut self, pose: Pose) {
        self.live_pose = Some(pose);
    }

    pub fn apply_control(&mut self, command: &ControlCommand) -> Result<(), SessionError> {
        let invalid = |phase: Phase| SessionError::InvalidTransition {
            command: command.to_text(),
            phase: phase.to_string(),
        };
        match (command, self.phase) {
            (ControlCommand::Start, Phase::Idle) => {
                self.phase = Phase::AwaitingCalibration(1);
            }
            (ControlCommand::Stop, _) => self.phase = Phase::Ended,
            (ControlCommand::Freeze, Phase::Scanning) => self.phase = Phase::Frozen,
            (ControlCommand::Unfreeze, Phase::Frozen) => self.phase = Phase::Scanning,
            (ControlCommand::CalNext, Phase::AwaitingCalibration(_)) => self.press_requests += 1,
            (ControlCommand::Gains(p), _) => self.config.contact = *p,
            (_, phase) => return Err(invalid(phase)),
        }
        Ok(())
    }

    fn enter_scanning(&mut self, model: EllipsoidModel) {
        self.ellipsoid = Some(model);
        self.phase = Phase::Scanning;
        self.follower.reset_to(self.follower_pose);
        self.velocity.reset();
        if self.mode == LeaderMode::Scripted {
            self.scan = Some(default_scan(&model, self.config.scan_duration_s));
        }
    }

    fn wire(msg: &WireMessage) -> Result<WireMessage, ProtocolError> {
        decode(&encode(msg)?)
    }

    fn sample_leader(&self, phase: Phase) -> Pose {
        match self.mode {
            LeaderMode::Live => self.live_pose.unwrap_or(self.leader_pose),
            LeaderMode::Scripted => match (phase, &self.scan) {
                (Phase::Scanning | Phase::Frozen, Some(scan)) => {
                    scan.sample(self.scan_ticks as f64 * self.dt_s)
                }
                _ => home_pose(self.ellipsoid.as_ref()),
            },
        }
    }

    /// Follower force and pose during calibration.
    fn calibration_follower(&mut self, step: u8, now: u64) -> (Vec3, Pose) {
        if self.active_press.is_none() {
            let may_press = match self.mode {
                LeaderMode::Scripted => true,
                LeaderMode::Live => self.press_requests > 0,
            };
            if may_press {
                self.press_requests = self.press_requests.saturating_sub(1);
                self.active_press = Some((step as usize - 1, now));
            }
        }
        match self.active_press {
            Some((idx, start)) => {
                let elapsed = now - start;
                let out = self.presses.sample(idx, elapsed);
                if elapsed >= self.presses.press_duration_us() {
                    self.active_press = None;
                }
                out
            }
            None => (Vec3::zeros(), self.follower_pose),
        }
    }

    /// Advance one tick. On error the session ends and keeps the diagnostic.
    pub fn tick(&mut self) -> Result<Option<TickOutput>, SessionError> {
        if self.phase == Phase::Ended {
            return Ok(None);
        }
        match self.tick_inner() {
            Ok(out) => Ok(Some(out)),
            Err(e) => {
                self.diagnostic = Some(e.to_string());
                self.phase = Phase::Ended;
                Err(e)
            }
        }
    }

    fn tick_inner(&mut self) -> Result<TickOutput, SessionError> {
        let now = self.now_us();
        let phase = self.phase;
        let mut fitted = None;

        // Leader streams its pose.
        self.leader_pose = self.sample_leader(phase);
        let msg = self
            .leader_tx
            .stamp(Payload::ExpertPose(self.leader_pose), now)?;
        self.forward.send(Self::wire(&msg)?, now);

        // Follower side.
        for d in self.forward.poll(now) {
            if let Payload::ExpertPose(p) = Self::wire(&d.msg)?.payload {
                self.follower.observe(d.delivery_us, p);
            }
        }
        let follower_force = match phase {
            Phase::AwaitingCalibration(step) => {
                self.follower.delayed_target(now);
                let (f, pose) = self.calibration_follower(step, now);
                self.follower_pose = pose;
                f
            }
            Phase::Scanning | Phase::Frozen => {
                if let Some(p) = self.follower.step(now, self.dt_s) {
                    self.follower_pose = p;
                }
                let model = self.ellipsoid.as_ref().expect("scanning requires a model");
                let tip = self.config.calibration.tip_position(&self.follower_pose);
                // Simulated force sensor: spring term only.
                let spring = ContactParams {
                    kd: [0.0; 3],
                    ..self.config.contact
                };
                match contact_force(model, &tip, &Vec3::zeros(), &spring) {
                    Ok(c) => c.force,
                    Err(GeometryError::DegeneratePoint) => Vec3::zeros(),
                    Err(e) => return Err(e.into()),
                }
            }
            Phase::Idle | Phase::Ended => {
                self.follower.delayed_target(now);
                Vec3::zeros()
            }
        };
        let report = self.follower_tx.stamp(
            Payload::FollowerForcePose(ForcePose {
                force: follower_force,
                pose: self.follower_pose,
            }),
            now,
        )?;
        self.backward.send(Self::wire(&report)?, now);

        // Leader side.
        for d in self.backward.poll(now) {
            let msg = Self::wire(&d.msg)?;
            let Payload::FollowerForcePose(fp) = msg.payload else {
                continue;
            };
            self.follower_report = Some(fp);
            if let Phase::AwaitingCalibration(_) = self.phase {
                let sample = ForceSample {
                    t_us: msg.timestamp_us,
                    force: fp.force,
                    pose: fp.pose,
                };
                match self.calibration.feed(&sample)? {
                    CalibrationEvent::Completed(m) => {
                        fitted = Some(m);
                        self.enter_scanning(m);
                    }
                    CalibrationEvent::Captured { step, .. } => {
                        self.phase = Phase::AwaitingCalibration(step + 1);
                    }
                    CalibrationEvent::Pending => {}
                }
            }
        }

        // Haptic proxy rendering for the leader.
        let force = match (phase.has_contact(), &self.ellipsoid) {
            (true, Some(model)) => {
                let v = self.velocity.update(&self.leader_pose.position);
                match contact_force(model, &self.leader_pose.position, &v, &self.config.contact) {
                    Ok(c) => c.force,
                    Err(GeometryError::DegeneratePoint) => Vec3::zeros(),
                    Err(e) => return Err(e.into()),
                }
            }
            _ => Vec3::zeros(),
        };
        self.last_force = force;

        let record = TrajectoryRecord {
            t_us: now,
            leader: self.leader_pose,
            follower: self.follower_pose,
            force,
            phase,
        };
        self.records.push(record);

        if phase == Phase::Scanning {
            self.scan_ticks += 1;
            if self.mode == LeaderMode::Scripted
                && self.scan_ticks >= self.scan_total_ticks
                && self.phase == Phase::Scanning
            {
                self.phase = Phase::Ended;
            }
        }
        self.tick_index += 1;
        Ok(TickOutput { record, fitted })
    }

    /// Tick a scripted session until it ends.
    pub fn run_to_end(&mut self) -> Result<(), SessionError> {
        if self.mode == LeaderMode::Live {
            return Err(SessionError::Config(
                "live sessions are driven by the console".into(),
            ));
        }
        while !self.is_ended() {
            self.tick()?;
        }
        Ok(())
    }

    pub fn log_header(&self, scan_id: Option<u32>) -> LogHeader {
        LogHeader {
            config_hash: self.config.config_hash(),
            seed: self.config.seed,
            network_seed: self.config.network.seed,
            return_seed: self.config.return_seed,
            follower_seed: self.config.follower.seed,
            tick_rate: self.config.tick_rate_hz,
            scan_id,
            ellipsoid: self.ellipsoid,
        }
    }

    pub fn to_log(&self, scan_id: Option<u32>) -> TrajectoryLog {
        TrajectoryLog {
            header: self.log_header(scan_id),
            records: self.records.clone(),
        }
    }

    pub fn into_log(self, scan_id: Option<u32>) -> TrajectoryLog {
        TrajectoryLog {
            header: self.log_header(scan_id),
            records: self.records,
        }
    }
}

/// Recompute leader forces of a logged session with the given ellipsoid and
/// gains. Velocities are re-estimated from the logged leader positions.
pub fn replay_forces(
    log: &TrajectoryLog,
    model: &EllipsoidModel,
    contact: &ContactParams,
    velocity_cutoff_hz: f64,
) -> Result<TrajectoryLog, SessionError> {
    let rate = log.header.tick_rate.max(1) as f64;
    let mut velocity = VelocityFilter::new(velocity_cutoff_hz, 1.0 / rate);
    let mut out = log.clone();
    out.header.ellipsoid = Some(*model);
    for r in out.records.iter_mut() {
        r.force = if r.phase.has_contact() {
            let v = velocity.update(&r.leader.position);
            match contact_force(model, &r.leader.position, &v, contact) {
                Ok(c) => c.force,
                Err(GeometryError::DegeneratePoint) => Vec3::zeros(),
                Err(e) => return Err(e.into()),
            }
        } else {
            Vec3::zeros()
        };
    }
    Ok(out)
}
