//! Binary frame format shared by the in-process emulator, log replay and the
//! console WebSocket.
//!
//! ```text
//! offset  size  field
//!      0     2  magic, bytes A1 1D
//!      2     1  version (0x01)
//!      3     1  channel
//!      4     4  seq            (u32 LE)
//!      8     8  timestamp_us   (u64 LE)
//!     16     4  payload length (u32 LE)
//!     20     n  payload
//! ```
//!
//! Payloads (all numbers little-endian):
//!
//! * `ExpertPose`: `px py pz qw qx qy qz` as seven binary64, 56 bytes.
//! * `FollowerForcePose`: `fx fy fz` binary64 followed by a pose payload, 80 bytes.
//! * `Control`: u32 text length followed by that many bytes of UTF-8.
//! * `Calibration`: one step byte. `1..=4` announces the step being collected;
//!   `0` means fitting is complete and is followed by the ellipsoid as six
//!   binary64 (`xc yc zc a b c`).
//!
//! Positions are meters, forces Newtons, quaternions `(w, x, y, z)`.

use nalgebra::Quaternion;
use thiserror::Error;

use crate::geometry::{EllipsoidModel, SemiAxes};
use crate::pose::{is_finite_vec, Pose, Quat, Vec3};

pub const MAGIC: [u8; 2] = [0xA1, 0x1D];
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 20;
pub const POSE_PAYLOAD_LEN: usize = 56;
pub const FORCE_POSE_PAYLOAD_LEN: usize = 80;
pub const MAX_CONTROL_LEN: usize = 4096;

/// Encoders require unit quaternions to this tolerance.
pub const ENCODE_UNIT_TOLERANCE: f64 = 1e-6;
/// Decoders renormalize quaternions within this tolerance and reject others.
pub const DECODE_UNIT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown channel {0}")]
    UnknownChannel(u8),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    TruncatedFrame { needed: usize, have: usize },
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("payload length {len} invalid for channel {channel:?}")]
    BadPayloadLength { channel: ChannelId, len: usize },
    #[error("quaternion norm {0} too far from 1")]
    NonUnitQuaternion(f64),
    #[error("non-finite number in payload")]
    NonFinite,
    #[error("control text is not valid UTF-8")]
    BadUtf8,
    #[error("invalid calibration step {0}")]
    BadCalibrationStep(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum ChannelId {
    ExpertPose = 0,
    FollowerForcePose = 1,
    Control = 2,
    Calibration = 3,
}

impl ChannelId {
    pub const ALL: [ChannelId; 4] = [
        ChannelId::ExpertPose,
        ChannelId::FollowerForcePose,
        ChannelId::Control,
        ChannelId::Calibration,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl TryFrom<u8> for ChannelId {
    type Error = ProtocolError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(ChannelId::ExpertPose),
            1 => Ok(ChannelId::FollowerForcePose),
            2 => Ok(ChannelId::Control),
            3 => Ok(ChannelId::Calibration),
            other => Err(ProtocolError::UnknownChannel(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcePose {
    pub force: Vec3,
    pub pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationUpdate {
    /// Collecting landmark `1..=4`.
    Step(u8),
    Fitted(EllipsoidModel),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    ExpertPose(Pose),
    FollowerForcePose(ForcePose),
    Control(String),
    Calibration(CalibrationUpdate),
}

impl Payload {
    pub fn channel(&self) -> ChannelId {
        match self {
            Payload::ExpertPose(_) => ChannelId::ExpertPose,
            Payload::FollowerForcePose(_) => ChannelId::FollowerForcePose,
            Payload::Control(_) => ChannelId::Control,
            Payload::Calibration(_) => ChannelId::Calibration,
        }
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            Payload::ExpertPose(_) => POSE_PAYLOAD_LEN,
            Payload::FollowerForcePose(_) => FORCE_POSE_PAYLOAD_LEN,
            Payload::Control(text) => 4 + text.len(),
            Payload::Calibration(CalibrationUpdate::Step(_)) => 1,
            Payload::Calibration(CalibrationUpdate::Fitted(_)) => 49,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub seq: u32,
    pub timestamp_us: u64,
    pub payload: Payload,
}

impl WireMessage {
    pub fn new(seq: u32, timestamp_us: u64, payload: Payload) -> Self {
        Self {
            seq,
            timestamp_us,
            payload,
        }
    }

    pub fn channel(&self) -> ChannelId {
        self.payload.channel()
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.encoded_len()
    }
}

fn check_pose(pose: &Pose) -> Result<(), ProtocolError> {
    if !pose.is_finite() {
        return Err(ProtocolError::InvalidMessage("non-finite pose".into()));
    }
    let norm = pose.orientation.quaternion().norm();
    if (norm - 1.0).abs() > ENCODE_UNIT_TOLERANCE {
        return Err(ProtocolError::InvalidMessage(format!(
            "quaternion norm {norm} is not unit"
        )));
    }
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, ProtocolError> {
    let mut out = Vec::with_capacity(msg.encoded_len());
    encode_into(msg, &mut out)?;
    Ok(out)
}

/// Append the frame for `msg` to `out`. On error `out` is left unchanged.
pub fn encode_into(msg: &WireMessage, out: &mut Vec<u8>) -> Result<(), ProtocolError> {
    match &msg.payload {
        Payload::ExpertPose(pose) => check_pose(pose)?,
        Payload::FollowerForcePose(fp) => {
            if !is_finite_vec(&fp.force) {
                return Err(ProtocolError::InvalidMessage("non-finite force".into()));
            }
            check_pose(&fp.pose)?
        }
        Payload::Control(text) => {
            if text.len() > MAX_CONTROL_LEN {
                return Err(ProtocolError::InvalidMessage(format!(
                    "control text of {} bytes exceeds {MAX_CONTROL_LEN}",
                    text.len()
                )));
            }
        }
        Payload::Calibration(CalibrationUpdate::Step(step)) => {
            if !(1..=4).contains(step) {
                return Err(ProtocolError::InvalidMessage(format!(
                    "calibration step {step} out of range"
                )));
            }
        }
        Payload::Calibration(CalibrationUpdate::Fitted(m)) => {
            m.validate()
                .map_err(|e| ProtocolError::InvalidMessage(e.to_string()))?;
        }
    }

    let payload_len = msg.payload.encoded_len();
    out.reserve(HEADER_LEN + payload_len);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.channel() as u8);
    out.extend_from_slice(&msg.seq.to_le_bytes());
    out.extend_from_slice(&msg.timestamp_us.to_le_bytes());
    out.extend_from_slice(&(payload_len as u32).to_le_bytes());
    match &msg.payload {
        Payload::ExpertPose(pose) => put_f64s(out, &pose.to_array()),
        Payload::FollowerForcePose(fp) => {
            put_f64s(out, fp.force.as_slice());
            put_f64s(out, &fp.pose.to_array());
        }
        Payload::Control(text) => {
            out.extend_from_slice(&(text.len() as u32).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        Payload::Calibration(CalibrationUpdate::Step(step)) => out.push(*step),
        Payload::Calibration(CalibrationUpdate::Fitted(m)) => {
            out.push(0);
            let s = m.semi_axes;
            put_f64s(out, &[m.center.x, m.center.y, m.center.z, s.a, s.b, s.c]);
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn f64(&mut self) -> f64 {
        let (head, rest) = self.buf.split_at(8);
        self.buf = rest;
        f64::from_le_bytes(head.try_into().unwrap())
    }

    fn finite<const N: usize>(&mut self) -> Result<[f64; N], ProtocolError> {
        let mut out = [0.0; N];
        for v in out.iter_mut() {
            *v = self.f64();
            if !v.is_finite() {
                return Err(ProtocolError::NonFinite);
            }
        }
        Ok(out)
    }
}

fn decode_pose(r: &mut Reader<'_>) -> Result<Pose, ProtocolError> {
    let v: [f64; 7] = r.finite()?;
    let q = Quaternion::new(v[3], v[4], v[5], v[6]);
    let norm = q.norm();
    if norm.is_nan() || (norm - 1.0).abs() > DECODE_UNIT_TOLERANCE {
        return Err(ProtocolError::NonUnitQuaternion(norm));
    }
    // Quaternions that are already unit to working precision pass through
    // untouched so that decode(encode(m)) == m bit for bit.
    let orientation = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
        Quat::new_unchecked(q)
    } else {
        Quat::new_unchecked(q / norm)
    };
    Ok(Pose {
        position: Vec3::new(v[0], v[1], v[2]),
        orientation,
    })
}

/// Decode exactly one frame. Every input either decodes or yields a typed error.
pub fn decode(bytes: &[u8]) -> Result<WireMessage, ProtocolError> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(ProtocolError::TrailingBytes(bytes.len() - used));
    }
    Ok(msg)
}

/// Decode the frame at the start of `bytes`, returning it with the number of
/// bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(WireMessage, usize), ProtocolError> {
    if bytes.len() < 2 {
        return Err(ProtocolError::TruncatedFrame {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    if bytes[0..2] != MAGIC {
        return Err(ProtocolError::BadMagic([bytes[0], bytes[1]]));
    }
    if bytes.len() < HEADER_LEN {
        return Err(ProtocolError::TruncatedFrame {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    if bytes[2] != VERSION {
        return Err(ProtocolError::BadVersion(bytes[2]));
    }
    let channel = ChannelId::try_from(bytes[3])?;
    let seq = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let timestamp_us = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let len = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let total = HEADER_LEN.saturating_add(len);
    if bytes.len() < total {
        return Err(ProtocolError::TruncatedFrame {
            needed: total,
            have: bytes.len(),
        });
    }
    let body = &bytes[HEADER_LEN..total];
    let bad_len = || ProtocolError::BadPayloadLength { channel, len };
    let mut r = Reader { buf: body };

    let payload = match channel {
        ChannelId::ExpertPose => {
            if len != POSE_PAYLOAD_LEN {
                return Err(bad_len());
            }
            Payload::ExpertPose(decode_pose(&mut r)?)
        }
        ChannelId::FollowerForcePose => {
            if len != FORCE_POSE_PAYLOAD_LEN {
                return Err(bad_len());
            }
            let f: [f64; 3] = r.finite()?;
            let pose = decode_pose(&mut r)?;
            Payload::FollowerForcePose(ForcePose {
                force: Vec3::from(f),
                pose,
            })
        }
        ChannelId::Control => {
            if len < 4 {
                return Err(bad_len());
            }
            let inner = u32::from_le_bytes(body[0..4].try_into().unwrap()) as usize;
            if inner != len - 4 || inner > MAX_CONTROL_LEN {
                return Err(bad_len());
            }
            let text = std::str::from_utf8(&body[4..]).map_err(|_| ProtocolError::BadUtf8)?;
            Payload::Control(text.to_owned())
        }
        ChannelId::Calibration => match body.first() {
            None => return Err(bad_len()),
            Some(&step @ 1..=4) => {
                if len != 1 {
                    return Err(bad_len());
                }
                Payload::Calibration(CalibrationUpdate::Step(step))
            }
            Some(0) => {
                if len != 49 {
                    return Err(bad_len());
                }
                r.buf = &body[1..];
                let v: [f64; 6] = r.finite()?;
                let model = EllipsoidModel::new(
                    Vec3::new(v[0], v[1], v[2]),
                    SemiAxes {
                        a: v[3],
                        b: v[4],
                        c: v[5],
                    },
                )
                .map_err(|e| ProtocolError::InvalidMessage(e.to_string()))?;
                Payload::Calibration(CalibrationUpdate::Fitted(model))
            }
            Some(&other) => return Err(ProtocolError::BadCalibrationStep(other)),
        },
    };
    Ok((
        WireMessage {
            seq,
            timestamp_us,
            payload,
        },
        total,
    ))
}

/// Per-sender stamping of sequence numbers and timestamps.
///
/// Sequence numbers increase by one per channel; timestamps never decrease
/// across the sender.
#[derive(Debug, Clone, Default)]
pub struct FrameSender {
    next_seq: [u32; 4],
    last_timestamp_us: u64,
}

impl FrameSender {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stamp(
        &mut self,
        payload: Payload,
        timestamp_us: u64,
    ) -> Result<WireMessage, ProtocolError> {
        if timestamp_us < self.last_timestamp_us {
            return Err(ProtocolError::InvalidMessage(format!(
                "timestamp {timestamp_us} precedes previous {}",
                self.last_timestamp_us
            )));
        }
        let ch = payload.channel().index();
        let seq = self.next_seq[ch];
        self.next_seq[ch] = seq.checked_add(1).ok_or_else(|| {
            ProtocolError::InvalidMessage("sequence number space exhausted".into())
        })?;
        self.last_timestamp_us = timestamp_us;
        Ok(WireMessage {
            seq,
            timestamp_us,
            payload,
        })
    }

    pub fn next_seq(&self, channel: ChannelId) -> u32 {
        self.next_seq[channel.index()]
    }
}
