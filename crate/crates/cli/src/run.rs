use std::path::{Path, PathBuf};
use std::time::Instant;

use teleus_core::analytics::tracking_report;
use teleus_core::geometry::{fit_ellipsoid, CalibrationSet};
use teleus_core::session::replay_forces;
use teleus_core::{Session, SessionConfig, TrajectoryLog};

use crate::config::RunConfig;
use crate::CliError;

pub fn load_config(
    path: Option<&Path>,
    seed: Option<u64>,
    preset: Option<String>,
) -> Result<(RunConfig, SessionConfig), CliError> {
    let mut rc = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        rc.seed = s;
    }
    if let Some(p) = preset {
        rc.preset = p;
    }
    let cfg = rc.session_config()?;
    Ok((rc, cfg))
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn read_log(path: &Path) -> Result<TrajectoryLog, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    TrajectoryLog::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn cmd_run(
    config: Option<&Path>,
    seed: Option<u64>,
    preset: Option<String>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let (rc, cfg) = load_config(config, seed, preset)?;
    let out = out
        .or(rc.out.clone())
        .unwrap_or_else(|| PathBuf::from(format!("session_{}.log", cfg.seed)));
    log::info!("config_hash={} out={}", cfg.config_hash(), out.display());

    let start = Instant::now();
    let mut session = Session::new(cfg.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let outcome = session.run_to_end();
    let wall_ms = start.elapsed().as_secs_f64() * 1000.0;
    let log = session.to_log(None);
    // Keep whatever was recorded, even on failure.
    write_file(&out, &log.to_text())?;
    outcome.map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut summary = vec![
        format!("log={}", out.display()),
        format!("config_hash={}", cfg.config_hash()),
        format!("seed={}", cfg.seed),
        format!("network_seed={}", cfg.network.seed),
        format!("return_seed={}", cfg.return_seed),
        format!("follower_seed={}", cfg.follower.seed),
        format!("records={}", log.records.len()),
    ];
    if let Some(m) = session.ellipsoid() {
        summary.push(format!(
            "ellipsoid=center:{},{},{} a:{} b:{} c:{}",
            m.center.x, m.center.y, m.center.z, m.semi_axes.a, m.semi_axes.b, m.semi_axes.c
        ));
    }
    match tracking_report(&log.records) {
        Ok(r) => summary.extend([
            format!("scan_samples={}", r.sample_count),
            format!("rmse_pos_mm={:.3}", r.rmse_pos_mm),
            format!("nrmse_pos_mm={:.3}", r.nrmse_pos_mm),
            format!("rmse_ang_deg={:.3}", r.rmse_ang_deg),
            format!("nrmse_ang_deg={:.3}", r.nrmse_ang_deg),
        ]),
        Err(e) => log::warn!("{e}"),
    }
    let (fwd, back) = session.link_stats();
    summary.push(format!(
        "forward=sent:{} delivered:{} dropped:{}",
        fwd.sent, fwd.delivered, fwd.dropped
    ));
    summary.push(format!(
        "return=sent:{} delivered:{} dropped:{}",
        back.sent, back.delivered, back.dropped
    ));
    summary.push(format!("wall_ms={wall_ms:.1}"));
    let text = summary.join("\n") + "\n";
    print!("{text}");
    write_file(&out.with_extension("summary"), &text)
}

pub fn cmd_replay(
    log_path: &Path,
    config: Option<&Path>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let log = read_log(log_path)?;
    let (_, cfg) = load_config(config, None, None)?;
    let model = match log.header.ellipsoid {
        Some(m) => m,
        None => fit_ellipsoid(&CalibrationSet::from_points(cfg.landmark_points()))
            .map_err(|e| CliError::Config(e.to_string()))?,
    };
    let replayed = replay_forces(&log, &model, &cfg.contact, cfg.velocity_cutoff_hz)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let max_diff = log
        .records
        .iter()
        .zip(&replayed.records)
        .map(|(a, b)| (a.force - b.force).norm())
        .fold(0.0, f64::max);
    let peak = replayed
        .records
        .iter()
        .map(|r| r.force.norm())
        .fold(0.0, f64::max);
    println!("records={}", replayed.records.len());
    println!("max_force_diff_n={max_diff:e}");
    println!("peak_force_n={peak:.6}");
    if let Some(out) = out {
        write_file(&out, &replayed.to_text())?;
        println!("log={}", out.display());
    }
    Ok(())
}
