use std::time::Instant;
use teleus_core::{tracking_report, Session, SessionConfig};

fn main() {
    for seed in 0..10u64 {
        let t0 = Instant::now();
        let mut s = Session::new(SessionConfig::seeded(seed)).unwrap();
        s.run_to_end().unwrap();
        let r = tracking_report(s.records()).unwrap();
        println!(
            "seed {seed}: pos {:.1} npos {:.1} ang {:.2} nang {:.2} n={} off={:.1}mm {:?}",
            r.rmse_pos_mm,
            r.nrmse_pos_mm,
            r.rmse_ang_deg,
            r.nrmse_ang_deg,
            r.sample_count,
            s.follower_offset().0.norm() * 1000.0,
            t0.elapsed()
        );
    }
}
