//! Prediction sets, coverage metrics and replication reports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LrqrError, Result};
use crate::linalg::Matrix;
use crate::predictors::{score_neg_log_prob, score_one_minus_prob};
use crate::scalar::Scalar;

/// Size convention recorded in every summary.
pub const SIZE_CONVENTION: &str =
    "regression: total interval length 2*max(h(x),0); classification: number of labels";

/// `[f̂(x) − h, f̂(x) + h]`, or `None` when `h < 0`.
pub fn predict_set_regression<T: Scalar>(prediction: T, threshold: T) -> Option<(T, T)> {
    (threshold >= T::zero()).then(|| (prediction - threshold, prediction + threshold))
}

/// Length of the regression set for threshold `h`: `2·max(h, 0)`.
pub fn interval_size<T: Scalar>(threshold: T) -> T {
    T::lit(2.0) * threshold.max(T::zero())
}

/// Classification score variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassScore {
    /// `1 − p_y(x)`.
    OneMinusProb,
    /// `−log p_y(x)`, optionally capped.
    NegLogProb { cap: Option<f64> },
}

impl ClassScore {
    pub fn score<T: Scalar>(&self, probs: &[T], label: usize) -> Result<T> {
        match *self {
            ClassScore::OneMinusProb => score_one_minus_prob(probs, label),
            ClassScore::NegLogProb { cap } => score_neg_log_prob(probs, label, cap.map(T::lit)),
        }
    }
}

/// All (0-based) labels whose score is at most `threshold`.
pub fn predict_set_classification<T: Scalar>(probs: &[T], score: ClassScore, threshold: T) -> Result<Vec<usize>> {
    let mut set = Vec::new();
    for y in 0..probs.len() {
        if score.score(probs, y)? <= threshold {
            set.push(y);
        }
    }
    Ok(set)
}

fn check_pair<T>(a: &[T], b: &[T], context: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(LrqrError::ShapeMismatch {
            context,
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Fraction of points with `score ≤ threshold`.
pub fn coverage<T: Scalar>(scores: &[T], thresholds: &[T]) -> Result<T> {
    check_pair(scores, thresholds, "scores vs thresholds")?;
    if scores.is_empty() {
        return Err(LrqrError::EmptySample("coverage input"));
    }
    let hit = scores.iter().zip(thresholds).filter(|(s, t)| s <= t).count();
    Ok(T::count(hit) / T::count(scores.len()))
}

/// Coverage within each group. `membership` has one 0/1 row per point and
/// one column per group, so groups may overlap. Groups with no members are `None`.
pub fn group_coverage<T: Scalar>(scores: &[T], thresholds: &[T], membership: &Matrix<T>) -> Result<Vec<Option<T>>> {
    check_pair(scores, thresholds, "scores vs thresholds")?;
    if membership.nrows() != scores.len() {
        return Err(LrqrError::ShapeMismatch {
            context: "group membership rows",
            expected: scores.len(),
            got: membership.nrows(),
        });
    }
    let g = membership.ncols();
    let mut hits = vec![0usize; g];
    let mut counts = vec![0usize; g];
    for (i, (s, t)) in scores.iter().zip(thresholds).enumerate() {
        for (k, &m) in membership.row(i).iter().enumerate() {
            if m != T::zero() {
                counts[k] += 1;
                if s <= t {
                    hits[k] += 1;
                }
            }
        }
    }
    Ok(hits
        .into_iter()
        .zip(counts)
        .map(|(h, c)| (c > 0).then(|| T::count(h) / T::count(c)))
        .collect())
}

/// `(1/n) Σ rᵢ · 1[sᵢ ≤ tᵢ]` over a source sample.
pub fn weighted_coverage_check<T: Scalar>(scores: &[T], thresholds: &[T], ratios: &[T]) -> Result<T> {
    check_pair(scores, thresholds, "scores vs thresholds")?;
    check_pair(scores, ratios, "scores vs ratios")?;
    if scores.is_empty() {
        return Err(LrqrError::EmptySample("coverage input"));
    }
    if !ratios.iter().all(|&r| r > T::zero() && r.is_finite()) {
        return Err(LrqrError::param("ratios", "must be positive and finite"));
    }
    let sum: T = scores
        .iter()
        .zip(thresholds)
        .zip(ratios)
        .filter(|((s, t), _)| s <= t)
        .map(|(_, &r)| r)
        .sum();
    Ok(sum / T::count(scores.len()))
}

/// Mean of `interval_size` over the thresholds.
pub fn average_interval_size<T: Scalar>(thresholds: &[T]) -> Result<T> {
    if thresholds.is_empty() {
        return Err(LrqrError::EmptySample("thresholds"));
    }
    Ok(thresholds.iter().map(|&h| interval_size(h)).sum::<T>() / T::count(thresholds.len()))
}

/// One method evaluated on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub method: String,
    pub replication: usize,
    pub coverage: f64,
    pub avg_size: f64,
    /// Regularization used, for LR-QR rows.
    pub lambda: Option<f64>,
    pub seed: u64,
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_coverage: Option<Vec<Option<f64>>>,
    /// `Ê₁[r·1[covered]]` with oracle ratios, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reweighted_source_coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation (`n − 1`); zero for a single value.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd })
    }
}

/// Aggregate over the replications of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub replications: usize,
    pub n_test: usize,
    pub coverage: MeanSd,
    pub avg_size: MeanSd,
    /// Mean per-group coverage over the replications where the group was present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_coverage: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reweighted_source_coverage: Option<MeanSd>,
    /// Number of LR-QR fits that did not converge.
    pub non_converged: usize,
}

impl EvalReport {
    /// Aggregates rows of a single method. Returns `None` for no rows.
    pub fn from_rows(method: &str, rows: &[&ReplicationRow]) -> Option<Self> {
        let coverage = MeanSd::of(&rows.iter().map(|r| r.coverage).collect::<Vec<_>>())?;
        let avg_size = MeanSd::of(&rows.iter().map(|r| r.avg_size).collect::<Vec<_>>())?;
        let reweighted =
            MeanSd::of(&rows.iter().filter_map(|r| r.reweighted_source_coverage).collect::<Vec<_>>());
        let groups = rows.iter().filter_map(|r| r.group_coverage.as_ref()).map(Vec::len).max();
        let group_coverage = groups.map(|g| {
            (0..g)
                .map(|k| {
                    let vals: Vec<f64> = rows
                        .iter()
                        .filter_map(|r| r.group_coverage.as_ref().and_then(|v| v.get(k).copied().flatten()))
                        .collect();
                    MeanSd::of(&vals).map(|m| m.mean)
                })
                .collect()
        });
        Some(Self {
            method: method.to_string(),
            replications: rows.len(),
            n_test: rows[0].n_test,
            coverage,
            avg_size,
            group_coverage,
            reweighted_source_coverage: reweighted,
            non_converged: rows.iter().filter(|r| r.converged == Some(false)).count(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub size_convention: String,
    pub alpha: f64,
    pub target_coverage: f64,
    pub methods: Vec<EvalReport>,
}

/// Groups rows by method in order of first appearance.
pub fn summarize(rows: &[ReplicationRow], alpha: f64) -> Summary {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.method.as_str()) {
            names.push(&r.method);
        }
    }
    let methods = names
        .iter()
        .filter_map(|m| {
            let sel: Vec<&ReplicationRow> = rows.iter().filter(|r| r.method == *m).collect();
            EvalReport::from_rows(m, &sel)
        })
        .collect();
    Summary {
        size_convention: SIZE_CONVENTION.to_string(),
        alpha,
        target_coverage: 1.0 - alpha,
        methods,
    }
}

/// Header of the per-replication CSV.
pub const REPORT_COLUMNS: [&str; 6] = ["method", "replication", "coverage", "avg_size", "lambda", "seed"];

/// Writes one CSV line per row; `lambda` is empty for methods without one.
pub fn write_rows_csv<W: Write>(out: W, rows: &[ReplicationRow]) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.replication.to_string(),
            format!("{:?}", r.coverage),
            format!("{:?}", r.avg_size),
            r.lambda.map(|l| format!("{l:?}")).unwrap_or_default(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the CSV report and a `<stem>.summary.json` companion next to it.
pub fn write_report(csv_path: &Path, rows: &[ReplicationRow], alpha: f64) -> Result<Summary> {
    let file = std::fs::File::create(csv_path).map_err(|source| LrqrError::Io {
        path: csv_path.to_path_buf(),
        source,
    })?;
    write_rows_csv(std::io::BufWriter::new(file), rows).map_err(|source| LrqrError::Csv {
        path: csv_path.to_path_buf(),
        source,
    })?;
    let summary = summarize(rows, alpha);
    let json_path = summary_path(csv_path);
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(&json_path, text + "\n").map_err(|source| LrqrError::Io { path: json_path, source })?;
    Ok(summary)
}

/// `report.csv` → `report.summary.json`.
pub fn summary_path(csv_path: &Path) -> std::path::PathBuf {
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    csv_path.with_file_name(format!("{stem}.summary.json"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn regression_sets() {
        assert_eq!(predict_set_regression(2.0, 0.5), Some((1.5, 2.5)));
        assert_eq!(predict_set_regression(2.0, 0.0), Some((2.0, 2.0)));
        assert_eq!(predict_set_regression(2.0, -0.1), None);
        assert_eq!(interval_size(-0.1), 0.0);
        assert_eq!(interval_size(0.5), 1.0);
    }

    #[test]
    fn classification_sets() {
        let p = [0.7, 0.2, 0.1];
        assert_eq!(predict_set_classification(&p, ClassScore::OneMinusProb, 0.85).unwrap(), vec![0, 1]);
        assert_eq!(predict_set_classification(&p, ClassScore::OneMinusProb, 1.0).unwrap(), vec![0, 1, 2]);
        assert!(predict_set_classification(&p, ClassScore::OneMinusProb, -0.01).unwrap().is_empty());
        let nl = ClassScore::NegLogProb { cap: None };
        assert_eq!(predict_set_classification(&p, nl, 0.5).unwrap(), vec![0]);
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage(&[0.1, 0.2], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(coverage(&[0.1, 0.9], &[0.5, 0.5]).unwrap(), 0.5);
        assert!(coverage::<f64>(&[], &[]).is_err());
        assert!(coverage(&[0.1], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn group_coverage_examples() {
        let s = [0.1, 0.2, 0.3, 0.9, 0.1, 0.9];
        let t = [0.5; 6];
        let one = Matrix::from_rows(&vec![vec![1.0]; 6]).unwrap();
        assert_eq!(group_coverage(&s, &t, &one).unwrap(), vec![Some(coverage(&s, &t).unwrap())]);
        let two = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(group_coverage(&s, &t, &two).unwrap(), vec![Some(0.75), Some(0.5), None]);
    }

    #[test]
    fn reweighted_examples() {
        assert_eq!(weighted_coverage_check(&[0.1, 0.9], &[0.5, 0.5], &[1.6, 0.4]).unwrap(), 0.8);
        assert_eq!(
            weighted_coverage_check(&[0.1, 0.9], &[0.5, 0.5], &[1.0, 1.0]).unwrap(),
            coverage(&[0.1, 0.9], &[0.5, 0.5]).unwrap()
        );
        assert_eq!(weighted_coverage_check(&[0.1, 0.2], &[0.5, 0.5], &[1.5, 0.5]).unwrap(), 1.0);
        assert!(weighted_coverage_check(&[0.1], &[0.5], &[1.0, 1.0]).is_err());
        assert!(weighted_coverage_check(&[0.1], &[0.5], &[0.0]).is_err());
    }

    fn row(method: &str, rep: usize, cov: f64) -> ReplicationRow {
        ReplicationRow {
            method: method.into(),
            replication: rep,
            coverage: cov,
            avg_size: 1.0,
            lambda: None,
            seed: 7,
            n_test: 10,
            group_coverage: Some(vec![Some(cov), None]),
            reweighted_source_coverage: None,
            converged: None,
        }
    }

    #[test]
    fn summary_groups_by_method() {
        let rows = vec![row("split", 0, 0.8), row("lrqr", 0, 0.9), row("split", 1, 1.0)];
        let s = summarize(&rows, 0.1);
        assert_eq!(s.methods.len(), 2);
        assert_eq!(s.methods[0].method, "split");
        assert!((s.methods[0].coverage.mean - 0.9).abs() < 1e-12);
        assert!((s.methods[0].coverage.sd - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.methods[1].coverage.sd, 0.0);
        assert_eq!(s.methods[0].group_coverage, Some(vec![Some(0.9), None]));
        assert!(s.size_convention.contains("2*max"));
    }

    #[test]
    fn csv_has_fixed_columns() {
        let mut r = row("lrqr", 3, 0.9);
        r.lambda = Some(0.25);
        let mut buf = Vec::new();
        write_rows_csv(&mut buf, &[r, row("split", 3, 0.5)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "method,replication,coverage,avg_size,lambda,seed");
        assert_eq!(lines[1], "lrqr,3,0.9,1.0,0.25,7");
        assert_eq!(lines[2], "split,3,0.5,1.0,,7");
    }

    #[test]
    fn report_files_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_report(&p, &[row("split", 0, 0.9)], 0.1).unwrap();
        assert!(p.exists());
        let json = std::fs::read_to_string(dir.path().join("out.summary.json")).unwrap();
        let s: Summary = serde_json::from_str(&json).unwrap();
        assert_eq!(s.methods[0].replications, 1);
    }

    proptest! {
        #[test]
        fn raising_thresholds_never_hurts(pairs in prop::collection::vec((0.0f64..1.0, -0.5f64..1.0, 0.0f64..0.5), 1..100)) {
            let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let t: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let t2: Vec<f64> = pairs.iter().map(|p| p.1 + p.2).collect();
            prop_assert!(coverage(&s, &t2).unwrap() >= coverage(&s, &t).unwrap());
            prop_assert!(average_interval_size(&t2).unwrap() >= average_interval_size(&t).unwrap());
        }

        #[test]
        fn coverage_in_unit_interval(pairs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..50)) {
            let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let t: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let c = coverage(&s, &t).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!(average_interval_size(&t).unwrap() >= 0.0);
        }
    }
}
