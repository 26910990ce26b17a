use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use teleus_core::analytics::{
    aggregate_scans, mean_quality_per_scan, parse_scores, quality_summary,
    rmse_quality_correlation, tracking_report, Correlation, MeanSd,
};

use crate::run::{read_log, write_file};
use crate::CliError;

fn pm(m: &MeanSd, digits: usize) -> String {
    format!("{:.*} ± {:.*}", digits, m.mean, digits, m.sd)
}

fn correlation_lines(out: &mut String, key: &str, c: &Correlation) {
    let _ = writeln!(out, "correlation.{key}.n={}", c.n);
    let _ = writeln!(out, "correlation.{key}.pearson_r={:.4}", c.pearson_r);
    let _ = writeln!(out, "correlation.{key}.pearson_p={:.4}", c.pearson_p);
    let _ = writeln!(out, "correlation.{key}.spearman_rho={:.4}", c.spearman_rho);
    let _ = writeln!(out, "correlation.{key}.spearman_p={:.4}", c.spearman_p);
}

pub fn cmd_analyze(
    logs: &[std::path::PathBuf],
    scores: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut report = String::new();
    let mut scans = Vec::new();
    let mut hashes = BTreeSet::new();
    for (i, path) in logs.iter().enumerate() {
        let log = read_log(path)?;
        let r = tracking_report(&log.records)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let id = log.header.scan_id.unwrap_or(i as u32 + 1);
        hashes.insert(log.header.config_hash.clone());
        let _ = writeln!(
            report,
            "scan={id} file={} samples={} rmse_pos_mm={:.3} nrmse_pos_mm={:.3} rmse_ang_deg={:.3} nrmse_ang_deg={:.3} config_hash={}",
            path.display(),
            r.sample_count,
            r.rmse_pos_mm,
            r.nrmse_pos_mm,
            r.rmse_ang_deg,
            r.nrmse_ang_deg,
            log.header.config_hash
        );
        scans.push((id, r));
    }

    let reports: Vec<_> = scans.iter().map(|(_, r)| *r).collect();
    let agg = aggregate_scans(&reports).map_err(|e| CliError::Input(e.to_string()))?;
    let _ = writeln!(report, "aggregate.scans={}", agg.scans);
    for (key, m) in [
        ("rmse_pos_mm", &agg.rmse_pos_mm),
        ("nrmse_pos_mm", &agg.nrmse_pos_mm),
        ("rmse_ang_deg", &agg.rmse_ang_deg),
        ("nrmse_ang_deg", &agg.nrmse_ang_deg),
    ] {
        let _ = writeln!(report, "aggregate.{key}={}", pm(m, 1));
        let _ = writeln!(report, "aggregate.{key}.mean={:.4}", m.mean);
        let _ = writeln!(report, "aggregate.{key}.sd={:.4}", m.sd);
    }

    if let Some(path) = scores {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let (scores, hash) =
            parse_scores(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if let Some(h) = hash {
            if !hashes.contains(&h) {
                log::warn!(
                    "config hash mismatch: {} has {h}, logs have {}",
                    path.display(),
                    hashes.iter().cloned().collect::<Vec<_>>().join(",")
                );
            }
        }
        let q = quality_summary(&scores);
        let _ = writeln!(report, "quality.scores={}", q.total_scores);
        let _ = writeln!(report, "quality.targets={}", q.targets);
        match q.mean_sd {
            Some(m) => {
                let _ = writeln!(report, "quality.mean_sd={}", pm(&m, 2));
                let _ = writeln!(report, "quality.mean={:.4}", m.mean);
                let _ = writeln!(report, "quality.sd={:.4}", m.sd);
            }
            None => {
                let _ = writeln!(report, "quality.mean_sd=none");
            }
        }
        let frac = |f: Option<f64>| f.map_or("none".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            report,
            "quality.fraction_all_ge3={}",
            frac(q.fraction_all_ge3)
        );
        let _ = writeln!(report, "quality.fraction_all_5={}", frac(q.fraction_all_5));
        let dist: Vec<String> = q.distribution.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(report, "quality.distribution_0_5={}", dist.join(","));
        let _ = writeln!(report, "quality.missing_union={}", q.missing_union);
        for (rater, n) in &q.missing_per_rater {
            let _ = writeln!(report, "quality.missing.{rater}={n}");
        }

        let per_scan = mean_quality_per_scan(&scores);
        let paired: Vec<_> = scans
            .iter()
            .filter_map(|(id, r)| per_scan.get(id).map(|q| (r, *q)))
            .collect();
        let quality: Vec<f64> = paired.iter().map(|(_, q)| *q).collect();
        let pos: Vec<f64> = paired.iter().map(|(r, _)| r.rmse_pos_mm).collect();
        let ang: Vec<f64> = paired.iter().map(|(r, _)| r.rmse_ang_deg).collect();
        for (key, x) in [("pos", pos), ("ang", ang)] {
            match rmse_quality_correlation(&x, &quality) {
                Ok(c) => correlation_lines(&mut report, key, &c),
                Err(e) => {
                    log::warn!("correlation {key}: {e}");
                    let _ = writeln!(report, "correlation.{key}=none");
                }
            }
        }
    }

    print!("{report}");
    if let Some(out) = out {
        write_file(out, &report)?;
    }
    Ok(())
}
