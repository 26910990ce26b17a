//! Regenerates `tests/fixtures/`: eleven scan logs whose tracking errors
//! equal the published per-scan values, plus a two-rater score table.
//!
//! Each log uses a constant error plus a zero-mean alternating term, so
//! rmse² = |mean|² + nrmse² holds exactly for both position and angle.

use std::path::Path;

use teleus_core::geometry::{fit_ellipsoid, CalibrationSet};
use teleus_core::session::follower::rotation_deg;
use teleus_core::session::leader::default_scan;
use teleus_core::session::LogHeader;
use teleus_core::{Phase, Pose, SessionConfig, TrajectoryLog, TrajectoryRecord, Vec3};

/// rmse_pos_mm, nrmse_pos_mm, rmse_ang_deg, nrmse_ang_deg per scan.
const TABLE: [(f64, f64, f64, f64); 11] = [
    (31.9, 14.2, 18.3, 5.70),
    (41.3, 6.99, 11.5, 3.82),
    (29.8, 8.88, 8.04, 3.73),
    (30.8, 8.09, 9.21, 3.72),
    (44.3, 18.5, 15.2, 4.19),
    (32.7, 11.3, 11.5, 10.9),
    (22.7, 9.13, 6.46, 2.63),
    (51.8, 11.6, 15.1, 13.2),
    (19.3, 5.14, 8.89, 5.16),
    (22.7, 8.90, 11.5, 6.94),
    (24.0, 7.84, 9.59, 3.96),
];

/// Per scan, targets 1..=5, (rater 1, rater 2). Zero is "not obtained".
const SCORES: [[(u8, u8); 5]; 11] = [
    [(0, 0), (0, 3), (4, 5), (5, 5), (4, 4)],
    [(0, 0), (0, 0), (3, 0), (4, 4), (5, 5)],
    [(4, 5), (5, 4), (3, 5), (3, 4), (5, 4)],
    [(5, 5), (4, 5), (1, 4), (3, 5), (5, 5)],
    [(4, 0), (5, 4), (4, 5), (3, 4), (5, 5)],
    [(5, 4), (3, 5), (5, 5), (3, 2), (4, 5)],
    [(5, 5), (3, 5), (5, 4), (3, 5), (3, 3)],
    [(5, 5), (5, 5), (5, 5), (5, 5), (5, 5)],
    [(4, 5), (5, 5), (1, 3), (3, 5), (5, 4)],
    [(5, 4), (4, 0), (4, 5), (5, 5), (3, 4)],
    [(3, 5), (5, 5), (3, 4), (2, 4), (4, 5)],
];

const RECORDS: usize = 200;

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    std::fs::create_dir_all(&dir).unwrap();
    let base = SessionConfig::seeded(0);
    let model = fit_ellipsoid(&CalibrationSet::from_points(base.landmark_points())).unwrap();
    let scan = default_scan(&model, 10.0);

    for (i, &(rp, np, ra, na)) in TABLE.iter().enumerate() {
        let id = i as u32 + 1;
        let cfg = SessionConfig::seeded(id as u64);
        // Direction of the constant error and an orthogonal one for the
        // alternating part; varied per scan.
        let th = 0.7 * id as f64;
        let u = Vec3::new(th.cos(), 0.3, th.sin()).normalize();
        let w = u.cross(&Vec3::y()).normalize();
        let axis = Vec3::new(0.2, th.sin(), th.cos()).normalize();
        let mean_mm = (rp * rp - np * np).sqrt();
        let mean_deg = (ra * ra - na * na).sqrt();

        let records = (0..RECORDS)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let leader = scan.sample(3.0 + k as f64 * 0.01);
                let err = (u * mean_mm + w * (sign * np)) / 1000.0;
                let follower = Pose::new(
                    leader.position + err,
                    leader.orientation * rotation_deg(axis, mean_deg + sign * na),
                );
                TrajectoryRecord {
                    t_us: k as u64 * 10_000,
                    leader,
                    follower,
                    force: Vec3::zeros(),
                    phase: Phase::Scanning,
                }
            })
            .collect();
        let log = TrajectoryLog {
            header: LogHeader {
                config_hash: cfg.config_hash(),
                seed: cfg.seed,
                network_seed: cfg.network.seed,
                return_seed: cfg.return_seed,
                follower_seed: cfg.follower.seed,
                tick_rate: cfg.tick_rate_hz,
                scan_id: Some(id),
                ellipsoid: Some(model),
            },
            records,
        };
        std::fs::write(dir.join(format!("scan{id:02}.log")), log.to_text()).unwrap();
    }

    let mut text = String::from(
        "# two raters, five targets per scan; 0 = image not obtained\nscan target rater score\n",
    );
    for (i, row) in SCORES.iter().enumerate() {
        for (t, (r1, r2)) in row.iter().enumerate() {
            text.push_str(&format!(
                "{} {} R1 {r1}\n{} {} R2 {r2}\n",
                i + 1,
                t + 1,
                i + 1,
                t + 1
            ));
        }
    }
    std::fs::write(dir.join("scores.txt"), text).unwrap();
}
