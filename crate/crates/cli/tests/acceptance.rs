//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use teleus_core::analytics::{aggregate_scans, tracking_report, TrackingReport};
use teleus_core::geometry::{
    fit_ellipsoid, fit_ellipsoid_with, implicit_value, penetration_depth, CalibrationSet,
    EllipsoidModel, GeometryError, NO_INTERSECTION_DEPTH,
};
use teleus_core::protocol::{decode, encode, CalibrationUpdate, ForcePose, MAX_CONTROL_LEN};
use teleus_core::session::follower::rotation_deg;
use teleus_core::{
    Link, NetworkPreset, Payload, Phase, Pose, Quat, Session, SessionConfig, TrajectoryLog,
    TrajectoryRecord, Vec3, WireMessage,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_cal(rng: &mut ChaCha8Rng) -> CalibrationSet {
    let x1 = rng.random_range(-1.0..1.0);
    let y4 = rng.random_range(-0.5..0.5);
    let y1 = y4 + rng.random_range(0.02..0.6);
    let zc = rng.random_range(-1.0..1.0);
    let half = rng.random_range(0.02..0.5);
    CalibrationSet::new(
        Vec3::new(x1, y1, zc + rng.random_range(-0.01..0.01)),
        Vec3::new(
            x1 + rng.random_range(-0.1..0.1),
            rng.random_range(y4..y1),
            zc - half,
        ),
        Vec3::new(
            x1 + rng.random_range(-0.1..0.1),
            rng.random_range(y4..y1),
            zc + half,
        ),
        Vec3::new(rng.random_range(-1.0..1.0), y4, rng.random_range(-1.0..1.0)),
    )
}

fn random_model(rng: &mut ChaCha8Rng) -> EllipsoidModel {
    let cal = random_cal(rng);
    let lateral = ((cal.right.z - cal.left.z) / 2.0).max((cal.xiphoid.y - cal.bed.y) / 2.0);
    let c = if rng.random_bool(0.5) {
        10.0
    } else {
        rng.random_range(lateral..10.0)
    };
    fit_ellipsoid_with(&cal, c).unwrap()
}

/// Axis half-lengths along x, y, z.
fn radii(m: &EllipsoidModel) -> Vec3 {
    Vec3::new(m.semi_axes.c, m.semi_axes.b, m.semi_axes.a)
}

fn oracle_implicit(m: &EllipsoidModel, p: &Vec3) -> f64 {
    let r = radii(m);
    let u = p - m.center;
    (u.x / r.x).powi(2) + (u.y / r.y).powi(2) + (u.z / r.z).powi(2)
}

/// Exit distance along the normalized implicit-function gradient, by
/// bisection on the implicit value.
fn oracle_depth(m: &EllipsoidModel, p: &Vec3) -> f64 {
    let r = radii(m);
    let u = p - m.center;
    let g = Vec3::new(u.x / (r.x * r.x), u.y / (r.y * r.y), u.z / (r.z * r.z)).normalize();
    let f = |t: f64| oracle_implicit(m, &(p + g * t)) - 1.0;
    let (mut lo, mut hi) = (0.0, r.max() * 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn random_interior(rng: &mut ChaCha8Rng, m: &EllipsoidModel) -> Vec3 {
    let r = radii(m);
    loop {
        let s = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if s.norm_squared() < 1.0 && s.norm() > 1e-6 {
            return m.center + s.component_mul(&r);
        }
    }
}

fn geometry_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6E0);
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..10_000 {
        let m = random_model(&mut rng);
        let p = random_interior(&mut rng, &m);
        let d = penetration_depth(&m, &p).unwrap().depth;
        let tol = 1e-6 * m.semi_axes.a.min(m.semi_axes.b);
        let err = (d - oracle_depth(&m, &p)).abs();
        worst = worst.max(err / tol);
        if err > tol {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && elapsed < Duration::from_secs(10),
        format!(
            "10000 points, {failures} over tolerance, worst error {worst:.2e} x tol, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn sign_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x516);
    let mut violations = 0;
    let mut inside = 0;
    for i in 0..10_000 {
        let m = random_model(&mut rng);
        let r = radii(&m);
        let dir = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        // Half in the bulk, half within a hair of the surface.
        let scale = if i % 2 == 0 {
            rng.random_range(0.0..2.0)
        } else {
            1.0 + rng.random_range(-1e-9..1e-9)
        };
        let p = m.center + dir.component_mul(&r) * (scale / dir.norm());
        let d = match penetration_depth(&m, &p) {
            Ok(pen) => pen.depth,
            Err(GeometryError::NoIntersection) => NO_INTERSECTION_DEPTH,
            Err(GeometryError::DegeneratePoint) => continue,
            Err(e) => panic!("{e}"),
        };
        let v = implicit_value(&m, &p);
        if v < 1.0 {
            inside += 1;
        }
        if (d > 0.0) != (v < 1.0) {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("10000 points ({inside} inside), {violations} violations"),
    )
}

fn fit_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF17);
    let mut failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let cal = random_cal(&mut rng);
        let m = fit_ellipsoid(&cal).unwrap();
        let (a, b) = (m.semi_axes.a, m.semi_axes.b);
        let residuals = [
            m.center.y - b - cal.bed.y,
            m.center.y + b - cal.xiphoid.y,
            m.center.z - a - cal.left.z,
            m.center.z + a - cal.right.z,
            m.center.x - cal.xiphoid.x,
            m.semi_axes.c - 10.0,
        ];
        let r = residuals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        worst = worst.max(r);
        if r > 1e-12 {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("1000 sets, {failures} failing, worst residual {worst:.1e}"),
    )
}

fn wander(k: usize) -> Pose {
    let t = k as f64 * 0.01;
    Pose::new(
        Vec3::new(
            0.1 * t.sin(),
            0.25 + 0.02 * (1.3 * t).cos(),
            0.08 * (0.4 * t).sin(),
        ),
        rotation_deg(Vec3::new(0.3, 1.0, -0.2), 25.0 * (0.6 * t).sin())
            * rotation_deg(Vec3::x(), 10.0 * (0.9 * t).cos()),
    )
}

fn offset_cancellation() -> Outcome {
    let offset = Vec3::new(0.012, -0.021, 0.007);
    let rot = rotation_deg(Vec3::new(1.0, -2.0, 0.5), 9.0);
    let records: Vec<_> = (0..6000)
        .map(|k| {
            let l = wander(k);
            TrajectoryRecord {
                t_us: k as u64 * 10_000,
                leader: l,
                follower: Pose::new(l.position + offset, l.orientation * rot),
                force: Vec3::zeros(),
                phase: Phase::Scanning,
            }
        })
        .collect();
    let r = tracking_report(&records).unwrap();
    outcome(
        r.nrmse_pos_mm <= 1e-9 && r.nrmse_ang_deg <= 1e-6,
        format!(
            "nrmse_pos {:.1e} mm, nrmse_ang {:.1e} deg (raw {:.2} mm, {:.2} deg)",
            r.nrmse_pos_mm, r.nrmse_ang_deg, r.rmse_pos_mm, r.rmse_ang_deg
        ),
    )
}

const PUBLISHED_POS: [f64; 11] = [
    31.9, 41.3, 29.8, 30.8, 44.3, 32.7, 22.7, 51.8, 19.3, 22.7, 24.0,
];
const PUBLISHED_NPOS: [f64; 11] = [
    14.2, 6.99, 8.88, 8.09, 18.5, 11.3, 9.13, 11.6, 5.14, 8.90, 7.84,
];

fn published_aggregate() -> Outcome {
    let reports: Vec<TrackingReport> = PUBLISHED_POS
        .iter()
        .zip(PUBLISHED_NPOS)
        .map(|(&p, n)| TrackingReport {
            rmse_pos_mm: p,
            nrmse_pos_mm: n,
            rmse_ang_deg: 0.0,
            nrmse_ang_deg: 0.0,
            mean_offset_mm: Vec3::zeros(),
            mean_rot_offset: Quat::identity(),
            sample_count: 1,
        })
        .collect();
    let agg = aggregate_scans(&reports).unwrap();
    let close = |v: f64, want: f64| (v - want).abs() <= 0.1;

    // The same through the bundled per-scan logs.
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let from_logs: Vec<_> = (1..=11)
        .map(|i| {
            let text = std::fs::read_to_string(dir.join(format!("scan{i:02}.log"))).unwrap();
            tracking_report(&TrajectoryLog::parse(&text).unwrap().records).unwrap()
        })
        .collect();
    let agg_logs = aggregate_scans(&from_logs).unwrap();

    let ok = |a: &teleus_core::ScanAggregate| {
        close(a.rmse_pos_mm.mean, 31.9)
            && close(a.rmse_pos_mm.sd, 10.2)
            && close(a.nrmse_pos_mm.mean, 10.1)
            && close(a.nrmse_pos_mm.sd, 3.7)
    };
    outcome(
        ok(&agg) && ok(&agg_logs),
        format!(
            "raw {:.3} ± {:.3} mm, normalized {:.3} ± {:.3} mm; from logs {:.3} ± {:.3}, {:.3} ± {:.3}",
            agg.rmse_pos_mm.mean,
            agg.rmse_pos_mm.sd,
            agg.nrmse_pos_mm.mean,
            agg.nrmse_pos_mm.sd,
            agg_logs.rmse_pos_mm.mean,
            agg_logs.rmse_pos_mm.sd,
            agg_logs.nrmse_pos_mm.mean,
            agg_logs.nrmse_pos_mm.sd
        ),
    )
}

fn end_to_end_envelope() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..10u64 {
        let start = Instant::now();
        let mut s = Session::new(SessionConfig::seeded(seed)).unwrap();
        s.run_to_end().unwrap();
        let elapsed = start.elapsed();
        slowest = slowest.max(elapsed);
        let r = tracking_report(s.records()).unwrap();
        let offset = s.follower_offset().0.norm();
        let ok = (15.0..=55.0).contains(&r.rmse_pos_mm)
            && (offset == 0.0 || r.nrmse_pos_mm < r.rmse_pos_mm)
            && elapsed < Duration::from_secs(10);
        pass &= ok;
        parts.push(format!("{:.1}/{:.1}", r.rmse_pos_mm, r.nrmse_pos_mm));
    }
    outcome(
        pass,
        format!(
            "raw/normalized mm per seed [{}], slowest {:.2} s",
            parts.join(" "),
            slowest.as_secs_f64()
        ),
    )
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let q = random_quat(rng);
    Pose::new(
        Vec3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        ),
        q,
    )
}

fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
    let axis = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-6 { Vec3::x() } else { axis };
    rotation_deg(axis, rng.random_range(-360.0..360.0))
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let len = if rng.random_bool(0.01) {
        MAX_CONTROL_LEN / 4
    } else {
        rng.random_range(0..64)
    };
    (0..len)
        .map(|_| loop {
            if let Some(c) = char::from_u32(rng.random_range(0..0x11_0000)) {
                break c;
            }
        })
        .collect()
}

fn random_message(rng: &mut ChaCha8Rng) -> WireMessage {
    let payload = match rng.random_range(0..5) {
        0 => Payload::ExpertPose(random_pose(rng)),
        1 => Payload::FollowerForcePose(ForcePose {
            force: Vec3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
            ),
            pose: random_pose(rng),
        }),
        2 => Payload::Control(random_text(rng)),
        3 => Payload::Calibration(CalibrationUpdate::Step(rng.random_range(1..=4))),
        _ => Payload::Calibration(CalibrationUpdate::Fitted(random_model(rng))),
    };
    WireMessage::new(rng.random(), rng.random(), payload)
}

fn codec_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DEC);
    let mut roundtrip_failures = 0;
    let mut valid = Vec::new();
    for i in 0..100_000 {
        let m = random_message(&mut rng);
        let ok = encode(&m)
            .ok()
            .and_then(|b| decode(&b).ok())
            .is_some_and(|d| d == m);
        if !ok {
            roundtrip_failures += 1;
        }
        if i < 256 {
            valid.push(encode(&m).unwrap());
        }
    }

    let mut panics = 0;
    let mut accepted = 0;
    for i in 0..1_000_000u32 {
        let frame: Vec<u8> = match i % 3 {
            0 => {
                let len = rng.random_range(0..128);
                (0..len).map(|_| rng.random()).collect()
            }
            1 => {
                // Plausible header with random channel, length and body.
                let mut f = vec![0xA1, 0x1D, 1, rng.random_range(0..6)];
                f.extend(rng.random::<[u8; 12]>());
                let len: u32 = rng.random_range(0..100);
                f.extend(len.to_le_bytes());
                let body = rng.random_range(0..100);
                f.extend((0..body).map(|_| rng.random::<u8>()));
                f
            }
            _ => {
                // Bit flips and truncations of valid frames.
                let mut f = valid[rng.random_range(0..valid.len())].clone();
                for _ in 0..rng.random_range(1..4) {
                    let idx = rng.random_range(0..f.len());
                    f[idx] ^= 1 << rng.random_range(0..8);
                }
                if rng.random_bool(0.3) {
                    f.truncate(rng.random_range(0..f.len()));
                }
                f
            }
        };
        match catch_unwind(AssertUnwindSafe(|| decode(&frame))) {
            Ok(Ok(_)) => accepted += 1,
            Ok(Err(_)) => {}
            Err(_) => panics += 1,
        }
    }
    outcome(
        roundtrip_failures == 0 && panics == 0,
        format!(
            "100000 round-trips, {roundtrip_failures} failures; 1000000 fuzz frames, {panics} panics, {accepted} decoded"
        ),
    )
}

fn wifi_delays(seed: u64) -> Vec<u64> {
    let mut link = Link::new(NetworkPreset::wifi(seed)).unwrap();
    let mut delays = Vec::with_capacity(10_000);
    for k in 0..10_000u64 {
        let now = k * 10_000;
        let msg = WireMessage::new(k as u32, now, Payload::ExpertPose(Pose::identity()));
        link.send(msg, now);
        for d in link.poll(now + 9_999) {
            delays.push(d.delivery_us - d.msg.timestamp_us);
        }
    }
    for d in link.poll(u64::MAX) {
        delays.push(d.delivery_us - d.msg.timestamp_us);
    }
    delays
}

fn netsim_fidelity() -> Outcome {
    let delays = wifi_delays(11);
    let mean_ms = delays.iter().sum::<u64>() as f64 / delays.len() as f64 / 1000.0;
    let repeat = wifi_delays(11) == delays;
    let differs = wifi_delays(12) != delays;
    let within = (mean_ms / 2.9 - 1.0).abs() <= 0.05;
    outcome(
        within && repeat && differs && delays.len() == 10_000,
        format!(
            "{} delivered, mean {mean_ms:.4} ms ({:+.2}% of 2.9), same seed identical: {repeat}, other seed differs: {differs}",
            delays.len(),
            (mean_ms / 2.9 - 1.0) * 100.0
        ),
    )
}

fn run_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/wifi_scan.toml");
    let mut logs = Vec::new();
    for name in ["first.log", "second.log"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_teleus"))
            .args(["run", "--seed", "42", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(false, String::from_utf8_lossy(&status.stderr).into_owned());
        }
        logs.push(std::fs::read(&out).unwrap());
    }
    outcome(
        logs[0] == logs[1] && !logs[0].is_empty(),
        format!(
            "two runs, {} bytes each, identical: {}",
            logs[0].len(),
            logs[0] == logs[1]
        ),
    )
}

type Check = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("geometry oracle equivalence", geometry_oracle),
        ("sign soundness", sign_soundness),
        ("fit identities", fit_identities),
        ("offset cancellation", offset_cancellation),
        ("published aggregate", published_aggregate),
        ("end-to-end envelope", end_to_end_envelope),
        ("codec robustness", codec_robustness),
        ("netsim fidelity", netsim_fidelity),
        ("run determinism", run_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(check).unwrap_or_else(|_| outcome(false, "panicked"));
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {name}: {}", result.detail);
        if !result.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
