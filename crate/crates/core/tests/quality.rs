//! Image-quality statistics on a two-rater fixture for eleven scans of five
//! targets, against the published summary and an independent correlation
//! computation.

use teleus_core::analytics::{
    mean_quality_per_scan, parse_scores, quality_summary, rmse_quality_correlation, QualityScore,
};

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

const POS_RMSE: [f64; 11] = [
    31.9, 41.3, 29.8, 30.8, 44.3, 32.7, 22.7, 51.8, 19.3, 22.7, 24.0,
];
const ANG_RMSE: [f64; 11] = [
    18.3, 11.5, 8.04, 9.21, 15.2, 11.5, 6.46, 15.1, 8.89, 11.5, 9.59,
];

fn scores() -> Vec<QualityScore> {
    let mut out = Vec::new();
    for (i, row) in SCORES.iter().enumerate() {
        for (t, &(r1, r2)) in row.iter().enumerate() {
            for (rater, value) in [("R1", r1), ("R2", r2)] {
                out.push(QualityScore {
                    scan: i as u32 + 1,
                    target: t as u8 + 1,
                    rater: rater.into(),
                    value,
                });
            }
        }
    }
    out
}

#[test]
fn summary_matches_published_figures() {
    let q = quality_summary(&scores());
    let m = q.mean_sd.unwrap();
    assert_eq!(format!("{:.2} ± {:.2}", m.mean, m.sd), "4.28 ± 0.95");
    assert_eq!(
        format!("{:.1}", q.fraction_all_ge3.unwrap() * 100.0),
        "91.7"
    );
    // 15 of 48 is 31.25%, reported rounded half up.
    let all5 = q.fraction_all_5.unwrap();
    assert_eq!(all5, 15.0 / 48.0);
    assert_eq!((all5 * 1000.0).round() / 10.0, 31.3);
    assert_eq!(q.missing_per_rater["R1"], 4);
    assert_eq!(q.missing_per_rater["R2"], 6);
    assert_eq!(q.missing_union, 7);
    assert_eq!(q.targets, 55);
    assert_eq!(q.targets - q.missing_union, 48);
}

#[test]
fn per_scan_extremes() {
    let per_scan = mean_quality_per_scan(&scores());
    let (lo_scan, lo) = per_scan
        .iter()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, v)| (*k, *v))
        .unwrap();
    let (hi_scan, hi) = per_scan
        .iter()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, v)| (*k, *v))
        .unwrap();
    assert_eq!((lo_scan, format!("{lo:.1}")), (2, "2.1".to_string()));
    assert_eq!((hi_scan, format!("{hi:.1}")), (8, "5.0".to_string()));
}

fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Midrank by counting, with exact equality for ties.
fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let below = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

#[test]
fn correlation_matches_independent_computation() {
    let per_scan = mean_quality_per_scan(&scores());
    let q: Vec<f64> = per_scan.values().copied().collect();
    for x in [&POS_RMSE[..], &ANG_RMSE[..]] {
        let c = rmse_quality_correlation(x, &q).unwrap();
        assert!((c.pearson_r - naive_pearson(x, &q)).abs() < 1e-12);
        let rho = naive_pearson(&naive_ranks(x), &naive_ranks(&q));
        assert!((c.spearman_rho - rho).abs() < 1e-12);
        // Not significant at the 5% level.
        assert!(c.pearson_p > 0.05 && c.spearman_p > 0.05);
    }
    // Reference values from an independent statistics package.
    let c = rmse_quality_correlation(&POS_RMSE, &q).unwrap();
    assert!((c.pearson_r - 0.003_895).abs() < 1e-5);
    assert!((c.pearson_p - 0.990_93).abs() < 1e-4);
    assert!((c.spearman_rho - 0.022_989).abs() < 1e-5);
    assert!((c.spearman_p - 0.946_51).abs() < 1e-4);
    let c = rmse_quality_correlation(&ANG_RMSE, &q).unwrap();
    assert!((c.pearson_r + 0.204_37).abs() < 1e-4);
    assert!((c.spearman_rho + 0.439_81).abs() < 1e-5);
    assert!((c.spearman_p - 0.175_85).abs() < 1e-4);
}

#[test]
fn score_table_roundtrip() {
    let mut text = String::from("scan target rater score\n");
    for s in scores() {
        text.push_str(&format!(
            "{} {} {} {}\n",
            s.scan, s.target, s.rater, s.value
        ));
    }
    let (parsed, hash) = parse_scores(&text).unwrap();
    assert_eq!(parsed, scores());
    assert_eq!(hash, None);
}
