//! Trajectory log: one text record per tick.
//!
//! ```text
//! # teleus-trajectory v1 config_hash=<16 hex> seed=<u64> network_seed=<u64> return_seed=<u64> follower_seed=<u64> tick_rate=<hz> [scan=<id>] [ellipsoid=xc,yc,zc,a,b,c]
//! # t_us lpx lpy lpz lqw lqx lqy lqz fpx fpy fpz fqw fqx fqy fqz fx fy fz phase
//! 0 0 0.29 0 1 0 0 0 0 0.26 0 1 0 0 0 0 0 0 cal1
//! ```
//!
//! `l*` is the leader pose, `fp*`/`fq*` the follower pose (meters, unit
//! quaternion w,x,y,z), `fx fy fz` the force rendered to the leader in
//! Newtons. Numbers use Rust's shortest round-trip formatting, so parsing a
//! written log recovers every value exactly.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::geometry::{EllipsoidModel, SemiAxes};
use crate::pose::{Pose, Vec3};

use super::SessionError;

pub const LOG_MAGIC: &str = "teleus-trajectory";
pub const LOG_VERSION: &str = "v1";
pub const COLUMNS: &str =
    "t_us lpx lpy lpz lqw lqx lqy lqz fpx fpy fpz fqw fqx fqy fqz fx fy fz phase";
const FIELDS: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Live mode before the operator starts the session.
    Idle,
    /// Collecting landmark 1..=4.
    AwaitingCalibration(u8),
    Scanning,
    /// Image frozen for annotation; the scan clock is paused.
    Frozen,
    Ended,
}

impl Phase {
    pub fn tag(&self) -> String {
        match self {
            Phase::Idle => "idle".into(),
            Phase::AwaitingCalibration(s) => format!("cal{s}"),
            Phase::Scanning => "scan".into(),
            Phase::Frozen => "frozen".into(),
            Phase::Ended => "ended".into(),
        }
    }

    pub fn has_contact(&self) -> bool {
        matches!(self, Phase::Scanning | Phase::Frozen)
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::AwaitingCalibration(s) => write!(f, "AwaitingCalibration step {s}"),
            Phase::Idle => f.write_str("Idle"),
            Phase::Scanning => f.write_str("Scanning"),
            Phase::Frozen => f.write_str("Frozen"),
            Phase::Ended => f.write_str("Ended"),
        }
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "idle" => Ok(Phase::Idle),
            "scan" => Ok(Phase::Scanning),
            "frozen" => Ok(Phase::Frozen),
            "ended" => Ok(Phase::Ended),
            _ => match s.strip_prefix("cal").and_then(|n| n.parse::<u8>().ok()) {
                Some(n @ 1..=4) => Ok(Phase::AwaitingCalibration(n)),
                _ => Err(format!("unknown phase tag {s:?}")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub t_us: u64,
    pub leader: Pose,
    pub follower: Pose,
    pub force: Vec3,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogHeader {
    pub config_hash: String,
    pub seed: u64,
    pub network_seed: u64,
    pub return_seed: u64,
    pub follower_seed: u64,
    pub tick_rate: u32,
    pub scan_id: Option<u32>,
    pub ellipsoid: Option<EllipsoidModel>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    pub records: Vec<TrajectoryRecord>,
}

fn push_nums(out: &mut String, nums: &[f64]) {
    for v in nums {
        let _ = write!(out, " {v}");
    }
}

impl TrajectoryLog {
    pub fn header_line(&self) -> String {
        let h = &self.header;
        let mut s = format!(
            "# {LOG_MAGIC} {LOG_VERSION} config_hash={} seed={} network_seed={} return_seed={} follower_seed={} tick_rate={}",
            h.config_hash, h.seed, h.network_seed, h.return_seed, h.follower_seed, h.tick_rate
        );
        if let Some(id) = h.scan_id {
            let _ = write!(s, " scan={id}");
        }
        if let Some(m) = &h.ellipsoid {
            let SemiAxes { a, b, c } = m.semi_axes;
            let _ = write!(
                s,
                " ellipsoid={},{},{},{a},{b},{c}",
                m.center.x, m.center.y, m.center.z
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(64 + self.records.len() * 200);
        out.push_str(&self.header_line());
        out.push('\n');
        out.push_str("# ");
        out.push_str(COLUMNS);
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{}", r.t_us);
            push_nums(&mut out, &r.leader.to_array());
            push_nums(&mut out, &r.follower.to_array());
            push_nums(&mut out, r.force.as_slice());
            out.push(' ');
            out.push_str(&r.phase.tag());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, SessionError> {
        let err = |line: usize, msg: String| SessionError::Log { line, msg };
        let mut lines = text.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) => parse_header(l).map_err(|m| err(1, m))?,
            None => return Err(err(1, "empty log".into())),
        };
        let mut records = Vec::new();
        let mut last_t: Option<u64> = None;
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_ascii_whitespace().collect();
            if fields.len() != FIELDS {
                return Err(err(
                    lineno,
                    format!("expected {FIELDS} fields, found {}", fields.len()),
                ));
            }
            let t_us: u64 = fields[0]
                .parse()
                .map_err(|_| err(lineno, format!("bad timestamp {:?}", fields[0])))?;
            if last_t.is_some_and(|p| t_us <= p) {
                return Err(err(lineno, "timestamps must strictly increase".into()));
            }
            last_t = Some(t_us);
            let mut nums = [0.0; 17];
            for (slot, f) in nums.iter_mut().zip(&fields[1..18]) {
                *slot = f
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(lineno, format!("bad number {f:?}")))?;
            }
            let phase: Phase = fields[18].parse().map_err(|m| err(lineno, m))?;
            let leader = pose_from(&nums[0..7]).map_err(|m| err(lineno, m))?;
            let follower = pose_from(&nums[7..14]).map_err(|m| err(lineno, m))?;
            records.push(TrajectoryRecord {
                t_us,
                leader,
                follower,
                force: Vec3::new(nums[14], nums[15], nums[16]),
                phase,
            });
        }
        Ok(Self { header, records })
    }
}

fn pose_from(v: &[f64]) -> Result<Pose, String> {
    let q = nalgebra::Quaternion::new(v[3], v[4], v[5], v[6]);
    let n = q.norm();
    if (n - 1.0).abs() > crate::protocol::DECODE_UNIT_TOLERANCE {
        return Err(format!("quaternion norm {n} is not unit"));
    }
    // Keep logged values bit-exact unless visibly off the unit sphere.
    let q = if (n - 1.0).abs() <= 1e-9 { q } else { q / n };
    Ok(Pose::new(
        Vec3::new(v[0], v[1], v[2]),
        crate::pose::Quat::new_unchecked(q),
    ))
}

fn parse_header(line: &str) -> Result<LogHeader, String> {
    let rest = line
        .strip_prefix('#')
        .map(str::trim_start)
        .ok_or("missing header line")?;
    let mut parts = rest.split_ascii_whitespace();
    if parts.next() != Some(LOG_MAGIC) {
        return Err(format!("not a {LOG_MAGIC} log"));
    }
    match parts.next() {
        Some(LOG_VERSION) => {}
        other => return Err(format!("unsupported log version {other:?}")),
    }
    let mut h = LogHeader::default();
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or(format!("bad header field {kv:?}"))?;
        let num = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| format!("bad value for {k}: {v:?}"))
        };
        match k {
            "config_hash" => h.config_hash = v.to_owned(),
            "seed" => h.seed = num(v)?,
            "network_seed" => h.network_seed = num(v)?,
            "return_seed" => h.return_seed = num(v)?,
            "follower_seed" => h.follower_seed = num(v)?,
            "tick_rate" => h.tick_rate = num(v)? as u32,
            "scan" => h.scan_id = Some(num(v)? as u32),
            "ellipsoid" => {
                let vals: Vec<f64> = v
                    .split(',')
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| format!("bad ellipsoid {v:?}"))?;
                if vals.len() != 6 {
                    return Err(format!("ellipsoid needs 6 numbers, got {}", vals.len()));
                }
                let m = EllipsoidModel::new(
                    Vec3::new(vals[0], vals[1], vals[2]),
                    SemiAxes {
                        a: vals[3],
                        b: vals[4],
                        c: vals[5],
                    },
                )
                .map_err(|e| e.to_string())?;
                h.ellipsoid = Some(m);
            }
            // Unknown keys are tolerated so newer writers stay readable.
            _ => {}
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Quat;

    fn sample_log() -> TrajectoryLog {
        let m = EllipsoidModel::new(
            Vec3::new(0.0, 0.12, 0.0),
            SemiAxes {
                a: 0.16,
                b: 0.12,
                c: 10.0,
            },
        )
        .unwrap();
        TrajectoryLog {
            header: LogHeader {
                config_hash: "0123456789abcdef".into(),
                seed: 42,
                network_seed: 42,
                return_seed: 7,
                follower_seed: 43,
                tick_rate: 100,
                scan_id: Some(3),
                ellipsoid: Some(m),
            },
            records: (0..5)
                .map(|k| TrajectoryRecord {
                    t_us: k * 10_000,
                    leader: Pose::new(
                        Vec3::new(0.1 / 3.0, k as f64 * 1e-3, -0.2),
                        Quat::from_scaled_axis(Vec3::new(0.1, 0.2, k as f64 * 0.3)),
                    ),
                    follower: Pose::from_position(Vec3::new(1e-17, 0.3, 0.0)),
                    force: Vec3::new(0.0, 5.0 / 7.0, 0.0),
                    phase: if k < 2 {
                        Phase::AwaitingCalibration(k as u8 + 1)
                    } else {
                        Phase::Scanning
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let log = sample_log();
        let text = log.to_text();
        let back = TrajectoryLog::parse(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let text = sample_log().to_text();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[4] = "10 1 2 3";
        let bad = lines.join("\n");
        match TrajectoryLog::parse(&bad) {
            Err(SessionError::Log { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        assert!(TrajectoryLog::parse("hello\n").is_err());
        assert!(TrajectoryLog::parse("").is_err());
    }

    #[test]
    fn phase_tags_roundtrip() {
        for p in [
            Phase::Idle,
            Phase::AwaitingCalibration(1),
            Phase::AwaitingCalibration(4),
            Phase::Scanning,
            Phase::Frozen,
            Phase::Ended,
        ] {
            assert_eq!(p.tag().parse::<Phase>().unwrap(), p);
        }
        assert!("cal5".parse::<Phase>().is_err());
    }
}
