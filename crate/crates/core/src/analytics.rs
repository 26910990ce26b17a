//! Tracking-error and image-quality analytics.
//!
//! Position error is the Euclidean distance between follower and leader tips;
//! orientation error is the geodesic angle of `leader⁻¹ ⊗ follower`. The
//! "normalized" variants remove the mean error first (the mean translation,
//! and the chordal mean of the error rotations), which strips a constant
//! misalignment and leaves the dynamic tracking error.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use nalgebra::{Quaternion, Vector4};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::pose::{Quat, Vec3};
use crate::session::{Phase, TrajectoryRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("no scanning-phase data (need at least 2 records, found {0})")]
    EmptyLog(usize),
    #[error("empty list of scan reports")]
    EmptyList,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("score file line {line}: {msg}")]
    BadScores { line: usize, msg: String },
}

/// Per-session tracking errors in millimeters and degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingReport {
    pub rmse_pos_mm: f64,
    pub nrmse_pos_mm: f64,
    pub rmse_ang_deg: f64,
    pub nrmse_ang_deg: f64,
    pub mean_offset_mm: Vec3,
    pub mean_rot_offset: Quat,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionMetrics {
    pub rmse_mm: f64,
    pub nrmse_mm: f64,
    pub mean_offset_mm: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationMetrics {
    pub rmse_deg: f64,
    pub nrmse_deg: f64,
    pub mean_rot_offset: Quat,
}

fn scanning(records: &[TrajectoryRecord]) -> Result<Vec<&TrajectoryRecord>, AnalyticsError> {
    let scan: Vec<_> = records
        .iter()
        .filter(|r| r.phase == Phase::Scanning)
        .collect();
    if scan.len() < 2 {
        return Err(AnalyticsError::EmptyLog(scan.len()));
    }
    Ok(scan)
}

/// Internal meters to reported millimeters.
pub fn m_to_mm(m: f64) -> f64 {
    m * 1000.0
}

pub fn position_metrics(records: &[TrajectoryRecord]) -> Result<PositionMetrics, AnalyticsError> {
    let scan = scanning(records)?;
    let n = scan.len() as f64;
    let errors: Vec<Vec3> = scan
        .iter()
        .map(|r| r.follower.position - r.leader.position)
        .collect();
    let mean = errors.iter().sum::<Vec3>() / n;
    let rmse = (errors.iter().map(|e| e.norm_squared()).sum::<f64>() / n).sqrt();
    let nrmse = (errors
        .iter()
        .map(|e| (e - mean).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(PositionMetrics {
        rmse_mm: m_to_mm(rmse),
        nrmse_mm: m_to_mm(nrmse),
        mean_offset_mm: mean * 1000.0,
    })
}

/// Geodesic rotation angle in radians, in [0, π].
pub fn rotation_angle(q: &Quat) -> f64 {
    let q = q.quaternion();
    // atan2 stays accurate near zero where 2·acos(|w|) loses half the digits.
    2.0 * q.imag().norm().atan2(q.w.abs())
}

fn hemisphere(q: Quaternion<f64>) -> Quaternion<f64> {
    if q.w < 0.0 {
        -q
    } else {
        q
    }
}

/// Normalized arithmetic mean of sign-aligned unit quaternions.
pub fn chordal_mean(rotations: &[Quat]) -> Quat {
    let sum: Vector4<f64> = rotations
        .iter()
        .map(|r| hemisphere(*r.quaternion()).coords)
        .sum();
    if sum.norm() == 0.0 {
        return Quat::identity();
    }
    Quat::from_quaternion(Quaternion::from(sum))
}

pub fn orientation_metrics(
    records: &[TrajectoryRecord],
) -> Result<OrientationMetrics, AnalyticsError> {
    let scan = scanning(records)?;
    let n = scan.len() as f64;
    let errors: Vec<Quat> = scan
        .iter()
        .map(|r| r.leader.orientation.inverse() * r.follower.orientation)
        .collect();
    let rms =
        |angles: &mut dyn Iterator<Item = f64>| (angles.map(|a| a * a).sum::<f64>() / n).sqrt();
    let rmse = rms(&mut errors.iter().map(rotation_angle));
    let mean = chordal_mean(&errors);
    let mean_inv = mean.inverse();
    let nrmse = rms(&mut errors.iter().map(|r| rotation_angle(&(mean_inv * r))));
    Ok(OrientationMetrics {
        rmse_deg: rmse.to_degrees(),
        nrmse_deg: nrmse.to_degrees(),
        mean_rot_offset: Quat::new_unchecked(hemisphere(*mean.quaternion())),
    })
}

pub fn tracking_report(records: &[TrajectoryRecord]) -> Result<TrackingReport, AnalyticsError> {
    let p = position_metrics(records)?;
    let o = orientation_metrics(records)?;
    Ok(TrackingReport {
        rmse_pos_mm: p.rmse_mm,
        nrmse_pos_mm: p.nrmse_mm,
        rmse_ang_deg: o.rmse_deg,
        nrmse_ang_deg: o.nrmse_deg,
        mean_offset_mm: p.mean_offset_mm,
        mean_rot_offset: o.mean_rot_offset,
        sample_count: records
            .iter()
            .filter(|r| r.phase == Phase::Scanning)
            .count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub sd: f64,
}

pub fn mean_sd(values: &[f64]) -> Option<MeanSd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some(MeanSd { mean, sd })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanAggregate {
    pub rmse_pos_mm: MeanSd,
    pub nrmse_pos_mm: MeanSd,
    pub rmse_ang_deg: MeanSd,
    pub nrmse_ang_deg: MeanSd,
    pub scans: usize,
}

pub fn aggregate_scans(reports: &[TrackingReport]) -> Result<ScanAggregate, AnalyticsError> {
    let col = |f: fn(&TrackingReport) -> f64| {
        mean_sd(&reports.iter().map(f).collect::<Vec<_>>()).ok_or(AnalyticsError::EmptyList)
    };
    Ok(ScanAggregate {
        rmse_pos_mm: col(|r| r.rmse_pos_mm)?,
        nrmse_pos_mm: col(|r| r.nrmse_pos_mm)?,
        rmse_ang_deg: col(|r| r.rmse_ang_deg)?,
        nrmse_ang_deg: col(|r| r.nrmse_ang_deg)?,
        scans: reports.len(),
    })
}

/// One radiologist's score for one target image. Zero means "not obtained".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QualityScore {
    pub scan: u32,
    pub target: u8,
    pub rater: String,
    pub value: u8,
}

impl QualityScore {
    pub fn is_missing(&self) -> bool {
        self.value == 0
    }
}

/// Parse a score table: whitespace-separated `scan target rater score` rows,
/// `#` comments, and an optional `scan target rater score` header row.
/// A `# config_hash=<hex>` comment is returned alongside the scores.
pub fn parse_scores(text: &str) -> Result<(Vec<QualityScore>, Option<String>), AnalyticsError> {
    let mut out = Vec::new();
    let mut hash = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if let Some(comment) = line.strip_prefix('#') {
            for kv in comment.split_ascii_whitespace() {
                if let Some(h) = kv.strip_prefix("config_hash=") {
                    hash = Some(h.to_owned());
                }
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_ascii_whitespace().collect();
        if f.len() != 4 {
            return Err(AnalyticsError::BadScores {
                line: lineno,
                msg: format!("expected 4 columns, found {}", f.len()),
            });
        }
        if f[0].eq_ignore_ascii_case("scan") {
            continue;
        }
        let bad = |what: &str, v: &str| AnalyticsError::BadScores {
            line: lineno,
            msg: format!("bad {what} {v:?}"),
        };
        let scan = u32::from_str(f[0]).map_err(|_| bad("scan", f[0]))?;
        let target = u8::from_str(f[1])
            .ok()
            .filter(|t| (1..=5).contains(t))
            .ok_or_else(|| bad("target", f[1]))?;
        let value = u8::from_str(f[3])
            .ok()
            .filter(|v| *v <= 5)
            .ok_or_else(|| bad("score", f[3]))?;
        out.push(QualityScore {
            scan,
            target,
            rater: f[2].to_owned(),
            value,
        });
    }
    Ok((out, hash))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QualitySummary {
    /// Over all scores of targets that no rater marked missing.
    pub mean_sd: Option<MeanSd>,
    /// Fraction of non-missing targets scored ≥ 3 by every rater.
    pub fraction_all_ge3: Option<f64>,
    /// Fraction of non-missing targets scored 5 by every rater.
    pub fraction_all_5: Option<f64>,
    /// Count of each score value 0..=5 over all rows.
    pub distribution: [usize; 6],
    pub total_scores: usize,
    pub targets: usize,
    pub missing_per_rater: BTreeMap<String, usize>,
    pub missing_union: usize,
}

pub fn quality_summary(scores: &[QualityScore]) -> QualitySummary {
    let mut summary = QualitySummary {
        total_scores: scores.len(),
        ..Default::default()
    };
    let raters: BTreeSet<&str> = scores.iter().map(|s| s.rater.as_str()).collect();
    let mut by_target: BTreeMap<(u32, u8), Vec<&QualityScore>> = BTreeMap::new();
    for s in scores {
        summary.distribution[s.value as usize] += 1;
        by_target.entry((s.scan, s.target)).or_default().push(s);
        if s.is_missing() {
            *summary
                .missing_per_rater
                .entry(s.rater.clone())
                .or_default() += 1;
        }
    }
    for r in &raters {
        summary
            .missing_per_rater
            .entry((*r).to_owned())
            .or_default();
    }
    summary.targets = by_target.len();

    let mut values = Vec::new();
    let (mut kept, mut ge3, mut all5) = (0usize, 0usize, 0usize);
    for rows in by_target.values() {
        let rated: BTreeSet<&str> = rows.iter().map(|s| s.rater.as_str()).collect();
        // A rater without a row for this target counts as missing it.
        if rows.iter().any(|s| s.is_missing()) || rated.len() < raters.len() {
            summary.missing_union += 1;
            continue;
        }
        kept += 1;
        values.extend(rows.iter().map(|s| s.value as f64));
        if rows.iter().all(|s| s.value >= 3) {
            ge3 += 1;
        }
        if rows.iter().all(|s| s.value == 5) {
            all5 += 1;
        }
    }
    summary.mean_sd = mean_sd(&values);
    if kept > 0 {
        summary.fraction_all_ge3 = Some(ge3 as f64 / kept as f64);
        summary.fraction_all_5 = Some(all5 as f64 / kept as f64);
    }
    summary
}

/// Mean score per scan over every rating, counting "not obtained" as 0.
pub fn mean_quality_per_scan(scores: &[QualityScore]) -> BTreeMap<u32, f64> {
    let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for s in scores {
        let e = acc.entry(s.scan).or_default();
        e.0 += s.value as f64;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (sum, n))| (k, sum / n as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub n: usize,
    pub pearson_r: f64,
    /// Two-sided, t-distribution on n−2 degrees of freedom.
    pub pearson_p: f64,
    pub spearman_rho: f64,
    pub spearman_p: f64,
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalyticsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalyticsError::InsufficientData("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn t_test_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Relative difference under which two values rank as tied. Metrics
/// recomputed from logs carry rounding noise of a few ulps.
pub const RANK_TIE_TOLERANCE: f64 = 1e-9;

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= RANK_TIE_TOLERANCE * a.abs().max(b.abs())
}

/// 1-based ranks with ties sharing their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && tied(values[idx[j + 1]], values[idx[j]]) {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Pearson and Spearman correlation between per-scan tracking error and
/// per-scan image quality.
pub fn rmse_quality_correlation(x: &[f64], y: &[f64]) -> Result<Correlation, AnalyticsError> {
    if x.len() != y.len() {
        return Err(AnalyticsError::InsufficientData(format!(
            "{} values paired with {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(AnalyticsError::InsufficientData(format!(
            "need at least 3 pairs, have {}",
            x.len()
        )));
    }
    let r = pearson(x, y)?;
    let rho = pearson(&ranks(x), &ranks(y))?;
    Ok(Correlation {
        n: x.len(),
        pearson_r: r,
        pearson_p: t_test_p(r, x.len()),
        spearman_rho: rho,
        spearman_p: t_test_p(rho, x.len()),
    })
}
