//! Replication harness: re-split, fit each method, evaluate on held-out test rows.
//!
//! Test scores are only read after every threshold has been fitted.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{split_conformal_threshold, WeightedQuantile};
use crate::basis::Basis;
use crate::bundle::CalibrationBundle;
use crate::data::{median_split, Dataset, SyntheticData, SyntheticSpec};
use crate::error::{LrqrError, Result};
use crate::eval::{average_interval_size, coverage, group_coverage, weighted_coverage_check, ReplicationRow};
use crate::linalg::Matrix;
use crate::predictors::{default_ridge_grid, ridge_cv_fit};
use crate::ratio::{fit_domain_classifier, RatioOptions};
use crate::scalar::Scalar;
use crate::solver::{solve, LrqrConfig};
use crate::tuning::{cross_validate, TuneOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Split,
    Weighted,
    Lrqr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Split => "split",
            Method::Weighted => "weighted",
            Method::Lrqr => "lrqr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = LrqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "split" => Ok(Method::Split),
            "weighted" => Ok(Method::Weighted),
            "lrqr" => Ok(Method::Lrqr),
            other => Err(LrqrError::UnknownMethod(other.to_string())),
        }
    }
}

/// Parses a comma-separated method list, dropping duplicates.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let m: Method = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(LrqrError::param("methods", "no method given"));
    }
    Ok(out)
}

/// Source of likelihood-ratio weights for weighted conformal prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// Generator's true ratio (synthetic data only).
    Oracle,
    /// Logistic domain classifier fitted on the unlabeled samples.
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum LambdaChoice<T> {
    Fixed { lambda: T },
    Tuned { options: TuneOptions<T> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisChoice {
    /// Group indicators for group scenarios, otherwise linear with intercept.
    #[default]
    Auto,
    Constant,
    Linear,
    Indicators,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BenchConfig<T> {
    pub methods: Vec<Method>,
    pub replications: usize,
    pub seed: u64,
    pub weights: WeightSource,
    pub lambda: LambdaChoice<T>,
    pub basis: BasisChoice,
    /// Template for every LR-QR fit; `alpha` applies to all methods and the
    /// per-replication seed overrides `seed`.
    pub solver: LrqrConfig<T>,
    pub ratio: RatioOptions<T>,
}

impl<T: Scalar> BenchConfig<T> {
    pub fn new(methods: Vec<Method>, solver: LrqrConfig<T>, replications: usize, seed: u64) -> Self {
        Self {
            methods,
            replications,
            seed,
            weights: WeightSource::Oracle,
            lambda: LambdaChoice::Tuned { options: TuneOptions::default() },
            basis: BasisChoice::Auto,
            solver,
            ratio: RatioOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(LrqrError::param("methods", "no method given"));
        }
        if self.replications == 0 {
            return Err(LrqrError::param("replications", "must be at least 1"));
        }
        self.solver.validate()
    }
}

/// Seed of replication `r`, a SplitMix64 mix of the base seed and the index.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    let mut z = seed.wrapping_add((r as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything one replication needs, with test scores kept apart.
struct Split<'a, T> {
    s1_x: &'a Matrix<T>,
    s1_scores: &'a [T],
    s2_x: &'a Matrix<T>,
    s3_x: &'a Matrix<T>,
    test_x: &'a Matrix<T>,
    /// Oracle ratios on `S₁` and the test rows, when known.
    oracle: Option<(&'a [T], &'a [T])>,
    /// Test rows double as group membership rows.
    groups: bool,
}

struct Fitted<T> {
    test_thresholds: Vec<T>,
    source_thresholds: Option<Vec<T>>,
    lambda: Option<f64>,
    converged: Option<bool>,
}

fn choose_basis<T: Scalar>(choice: BasisChoice, split: &Split<'_, T>) -> Result<Basis<T>> {
    let p = split.s1_x.ncols();
    match choice {
        BasisChoice::Constant => Ok(Basis::constant()),
        BasisChoice::Indicators => Basis::group_indicators(p),
        BasisChoice::Linear => Ok(Basis::raw_with_intercept(p)),
        BasisChoice::Auto if split.groups => Basis::group_indicators(p),
        BasisChoice::Auto => Basis::precomputed(p, true)?.with_standardization(split.s1_x),
    }
}

fn fit_method<T: Scalar>(method: Method, split: &Split<'_, T>, cfg: &BenchConfig<T>, seed: u64) -> Result<Fitted<T>> {
    let alpha = cfg.solver.alpha;
    match method {
        Method::Split => {
            let t = split_conformal_threshold(split.s1_scores, alpha)?;
            Ok(Fitted {
                test_thresholds: vec![t; split.test_x.nrows()],
                source_thresholds: Some(vec![t; split.s1_x.nrows()]),
                lambda: None,
                converged: None,
            })
        }
        Method::Weighted => {
            let (cal_w, test_w) = match (cfg.weights, split.oracle) {
                (WeightSource::Oracle, Some((c, t))) => (c.to_vec(), t.to_vec()),
                (WeightSource::Oracle, None) => {
                    return Err(LrqrError::param("weights", "oracle ratios are only known for synthetic data"))
                }
                (WeightSource::Logistic, _) => {
                    let model = fit_domain_classifier(split.s3_x, split.s2_x, &cfg.ratio)?;
                    (model.ratios(split.s1_x)?, model.ratios(split.test_x)?)
                }
            };
            let wq = WeightedQuantile::new(split.s1_scores, &cal_w, alpha)?;
            let test_thresholds = test_w.iter().map(|&w| wq.threshold(w)).collect::<Result<Vec<_>>>()?;
            Ok(Fitted {
                test_thresholds,
                source_thresholds: None,
                lambda: None,
                converged: None,
            })
        }
        Method::Lrqr => {
            let basis = choose_basis(cfg.basis, split)?;
            let bundle = CalibrationBundle::new(
                basis.eval_rows(split.s1_x)?,
                split.s1_scores.to_vec(),
                basis.eval_rows(split.s2_x)?,
                basis.eval_rows(split.s3_x)?,
            )?;
            let mut solver = cfg.solver.clone();
            solver.seed = seed;
            let (model, diag) = match &cfg.lambda {
                LambdaChoice::Fixed { lambda } => solve(&solver.with_lambda(*lambda), &bundle, &basis)?,
                LambdaChoice::Tuned { options } => {
                    let r = cross_validate(&bundle, &basis, &solver, options)?;
                    (r.final_model, r.final_diagnostics)
                }
            };
            Ok(Fitted {
                test_thresholds: model.thresholds_phi(&basis.eval_rows(split.test_x)?)?,
                source_thresholds: Some(model.thresholds_phi(bundle.s1_phi())?),
                lambda: Some(model.lambda.to_f64_lossy()),
                converged: Some(diag.converged),
            })
        }
    }
}

fn evaluate<T: Scalar>(
    split: &Split<'_, T>,
    test_scores: &[T],
    label: String,
    fitted: Fitted<T>,
    replication: usize,
    seed: u64,
) -> Result<ReplicationRow> {
    let th = &fitted.test_thresholds;
    let group = if split.groups {
        Some(
            group_coverage(test_scores, th, split.test_x)?
                .into_iter()
                .map(|g| g.map(Scalar::to_f64_lossy))
                .collect(),
        )
    } else {
        None
    };
    let reweighted = match (split.oracle, &fitted.source_thresholds) {
        (Some((r1, _)), Some(src)) => Some(weighted_coverage_check(split.s1_scores, src, r1)?.to_f64_lossy()),
        _ => None,
    };
    Ok(ReplicationRow {
        method: label,
        replication,
        coverage: coverage(test_scores, th)?.to_f64_lossy(),
        avg_size: average_interval_size(th)?.to_f64_lossy(),
        lambda: fitted.lambda,
        seed,
        n_test: th.len(),
        group_coverage: group,
        reweighted_source_coverage: reweighted,
        converged: fitted.converged,
    })
}

fn synthetic_replication<T: Scalar>(
    data: &SyntheticData<T>,
    cfg: &BenchConfig<T>,
    replication: usize,
    seed: u64,
) -> Result<Vec<ReplicationRow>> {
    let split = Split {
        s1_x: &data.source_x,
        s1_scores: &data.source_scores,
        s2_x: &data.target_x,
        s3_x: &data.source_unlabeled_x,
        test_x: &data.test_x,
        oracle: Some((&data.source_r, &data.test_r)),
        groups: data.test_groups.is_some(),
    };
    let fitted = cfg
        .methods
        .iter()
        .map(|&m| fit_method(m, &split, cfg, seed).map(|f| (m, f)))
        .collect::<Result<Vec<_>>>()?;
    fitted
        .into_iter()
        .map(|(m, f)| evaluate(&split, &data.test_scores, m.name().to_string(), f, replication, seed))
        .collect()
}

fn in_order<F>(replications: usize, f: F) -> Result<Vec<ReplicationRow>>
where
    F: Fn(usize) -> Result<Vec<ReplicationRow>> + Sync + Send,
{
    // indexed parallel collect keeps replication order
    let per_rep = (0..replications).into_par_iter().map(f).collect::<Result<Vec<_>>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

/// Runs `cfg.replications` independent draws of `spec`, replication `r`
/// using seed `replication_seed(cfg.seed, r)`. Rows come back ordered by
/// replication, then by method as listed.
pub fn run_synthetic<T: Scalar>(spec: &SyntheticSpec<T>, cfg: &BenchConfig<T>) -> Result<Vec<ReplicationRow>> {
    cfg.validate()?;
    spec.validate()?;
    in_order(cfg.replications, |r| {
        let seed = replication_seed(cfg.seed, r);
        let data = spec.with_seed(seed).generate()?;
        synthetic_replication(&data, cfg, r, seed)
    })
}

/// One covariate-shift scenario of the tabular pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Feature column whose median defines the shift.
    pub column: usize,
}

/// Tabular pipeline: each replication draws a random half of the rows to fit
/// a ridge predictor (5-fold CV over the default grid), then for every
/// scenario splits the remaining rows on the median of its column. Rows at
/// or below the median are the labeled source (used as both `S₁` and, without
/// labels, `S₃`); rows above are halved into unlabeled target `S₂` and
/// labeled test rows. Method labels are `method:scenario`.
pub fn run_tabular<T: Scalar>(
    dataset: &Dataset<T>,
    scenarios: &[Scenario],
    cfg: &BenchConfig<T>,
) -> Result<Vec<ReplicationRow>> {
    cfg.validate()?;
    let labels = dataset
        .labels
        .as_ref()
        .ok_or_else(|| LrqrError::param("label", "the tabular pipeline needs a label column"))?;
    if cfg.weights == WeightSource::Oracle && cfg.methods.contains(&Method::Weighted) {
        return Err(LrqrError::param("weights", "oracle ratios are only known for synthetic data"));
    }
    if scenarios.is_empty() {
        return Err(LrqrError::param("scenarios", "need at least one split column"));
    }
    for s in scenarios {
        if s.column >= dataset.features.ncols() {
            return Err(LrqrError::ShapeMismatch {
                context: "scenario column",
                expected: dataset.features.ncols(),
                got: s.column,
            });
        }
    }
    let n = dataset.len();
    if n < 20 {
        return Err(LrqrError::param("dataset", format!("need at least 20 rows, got {n}")));
    }
    in_order(cfg.replications, |r| {
        let seed = replication_seed(cfg.seed, r);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (train, rest) = order.split_at(n / 2);
        let ytrain: Vec<T> = train.iter().map(|&i| labels[i]).collect();
        let ridge = ridge_cv_fit(&dataset.features.select_rows(train), &ytrain, &default_ridge_grid(), 5, seed)?;
        let xrest = dataset.features.select_rows(rest);
        let scores: Vec<T> = rest
            .iter()
            .enumerate()
            .map(|(k, &i)| ridge.predict(xrest.row(k)).map(|p| (labels[i] - p).abs()))
            .collect::<Result<_>>()?;

        let mut rows = Vec::new();
        for sc in scenarios {
            let parts = median_split(&xrest, sc.column, seed ^ sc.column as u64)?;
            if parts.target_unlabeled.is_empty() || parts.target_labeled.is_empty() {
                return Err(LrqrError::DegenerateSplit(format!("scenario {} has too few target rows", sc.name)));
            }
            let s1_x = xrest.select_rows(&parts.source);
            let s1_scores: Vec<T> = parts.source.iter().map(|&i| scores[i]).collect();
            let s2_x = xrest.select_rows(&parts.target_unlabeled);
            let test_x = xrest.select_rows(&parts.target_labeled);
            let split = Split {
                s1_x: &s1_x,
                s1_scores: &s1_scores,
                s2_x: &s2_x,
                s3_x: &s1_x,
                test_x: &test_x,
                oracle: None,
                groups: false,
            };
            let fitted = cfg
                .methods
                .iter()
                .map(|&m| fit_method(m, &split, cfg, seed).map(|f| (m, f)))
                .collect::<Result<Vec<_>>>()?;
            let test_scores: Vec<T> = parts.target_labeled.iter().map(|&i| scores[i]).collect();
            for (m, f) in fitted {
                rows.push(evaluate(&split, &test_scores, format!("{m}:{}", sc.name), f, r, seed)?);
            }
        }
        Ok(rows)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::Alpha;

    fn cfg(methods: Vec<Method>, reps: usize) -> BenchConfig<f64> {
        let mut c = BenchConfig::new(methods, LrqrConfig::new(Alpha::new(0.1).unwrap(), 0.0), reps, 11);
        c.lambda = LambdaChoice::Fixed { lambda: 0.5 };
        c
    }

    #[test]
    fn method_parsing() {
        assert_eq!(parse_methods("split,lrqr").unwrap(), vec![Method::Split, Method::Lrqr]);
        assert_eq!(parse_methods(" Weighted ,split,split").unwrap(), vec![Method::Weighted, Method::Split]);
        assert!(matches!(parse_methods("split,dro"), Err(LrqrError::UnknownMethod(m)) if m == "dro"));
        assert!(parse_methods("").is_err());
    }

    #[test]
    fn replication_seeds_differ() {
        let s: Vec<u64> = (0..100).map(|r| replication_seed(5, r)).collect();
        let mut d = s.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 100);
        assert_eq!(replication_seed(5, 3), s[3]);
    }

    #[test]
    fn synthetic_rows_are_ordered_and_deterministic() {
        let spec = SyntheticSpec::<f64>::five_group_shift(200, 0);
        let c = cfg(vec![Method::Split, Method::Weighted, Method::Lrqr], 3);
        let a = run_synthetic(&spec, &c).unwrap();
        let b = run_synthetic(&spec, &c).unwrap();
        assert_eq!(a, b);
        let labels: Vec<(usize, &str)> = a.iter().map(|r| (r.replication, r.method.as_str())).collect();
        assert_eq!(labels[..3], [(0, "split"), (0, "weighted"), (0, "lrqr")]);
        assert_eq!(labels[8], (2, "lrqr"));
        for r in &a {
            assert!((0.0..=1.0).contains(&r.coverage));
            assert_eq!(r.group_coverage.as_ref().unwrap().len(), 5);
        }
        assert_eq!(a[2].lambda, Some(0.5));
        assert!(a[0].reweighted_source_coverage.is_some());
        assert!(a[1].reweighted_source_coverage.is_none());
    }

    #[test]
    fn logistic_weights_run_on_gaussian_shift() {
        let spec = SyntheticSpec::<f64>::gaussian(vec![0.5, 0.0], [150, 150, 150, 150], 0);
        let mut c = cfg(vec![Method::Weighted], 2);
        c.weights = WeightSource::Logistic;
        let rows = run_synthetic(&spec, &c).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.group_coverage.is_none()));
    }

    #[test]
    fn zero_replications_rejected() {
        let spec = SyntheticSpec::<f64>::five_group_shift(50, 0);
        assert!(run_synthetic(&spec, &cfg(vec![Method::Split], 0)).is_err());
    }

    fn toy_dataset(n: usize) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        use rand_distr::{Distribution, StandardNormal};
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let labels = rows
            .iter()
            .map(|x: &Vec<f64>| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x[0] - 2.0 * x[1] + (1.0 + x[2].abs()) * e
            })
            .collect();
        Dataset {
            feature_names: vec!["a".into(), "b".into(), "c".into()],
            features: Matrix::from_rows(&rows).unwrap(),
            labels: Some(labels),
            scores: None,
            groups: None,
        }
    }

    #[test]
    fn tabular_pipeline_labels_scenarios() {
        let ds = toy_dataset(400);
        let mut c = cfg(vec![Method::Split, Method::Lrqr], 2);
        c.weights = WeightSource::Logistic;
        let sc = vec![
            Scenario { name: "a".into(), column: 0 },
            Scenario { name: "c".into(), column: 2 },
        ];
        let rows = run_tabular(&ds, &sc, &c).unwrap();
        let names: Vec<&str> = rows.iter().take(4).map(|r| r.method.as_str()).collect();
        assert_eq!(names, ["split:a", "lrqr:a", "split:c", "lrqr:c"]);
        assert_eq!(rows.len(), 8);
        // 200 rest rows: 100 source, 100 target split 50 / 50
        assert!(rows.iter().all(|r| r.n_test == 50));
        assert_eq!(rows, run_tabular(&ds, &sc, &c).unwrap());
    }

    #[test]
    fn tabular_rejects_oracle_weights() {
        let ds = toy_dataset(100);
        let c = cfg(vec![Method::Weighted], 1);
        assert!(run_tabular(&ds, &[Scenario { name: "a".into(), column: 0 }], &c).is_err());
    }
}
