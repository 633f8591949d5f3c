//! Synthetic covariate-shift generators, the median-split shift construction,
//! and CSV ingestion.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{LrqrError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Shift family of a synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum ShiftKind<T> {
    /// Source `X ~ N(0, I)`, target `X ~ N(μ, I)`;
    /// `S | x ~ Uniform(0, base·exp(slope·x₁))`.
    GaussianMeanShift { mu: Vec<T>, base: T, slope: T },
    /// Groups drawn with probabilities `p` (source) and `q` (target);
    /// `S | g ~ Uniform(0, b_g)`.
    GroupShift {
        source_probs: Vec<T>,
        target_probs: Vec<T>,
        score_scales: Vec<T>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SyntheticSpec<T> {
    pub shift: ShiftKind<T>,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub n_test: usize,
    pub seed: u64,
}

/// One generated scenario. Group scenarios use one-hot membership rows as features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SyntheticData<T> {
    /// Labeled source features (`S₁`).
    pub source_x: Matrix<T>,
    pub source_scores: Vec<T>,
    /// Unlabeled target features (`S₂`).
    pub target_x: Matrix<T>,
    /// Unlabeled source features (`S₃`).
    pub source_unlabeled_x: Matrix<T>,
    /// Labeled target test rows.
    pub test_x: Matrix<T>,
    pub test_scores: Vec<T>,
    /// Oracle likelihood ratio on each sample.
    pub source_r: Vec<T>,
    pub target_r: Vec<T>,
    pub source_unlabeled_r: Vec<T>,
    pub test_r: Vec<T>,
    /// 1-based group labels when the scenario is group-structured.
    pub source_groups: Option<Vec<usize>>,
    pub test_groups: Option<Vec<usize>>,
}

impl<T: Scalar> SyntheticSpec<T> {
    pub fn gaussian(mu: Vec<T>, sizes: [usize; 4], seed: u64) -> Self {
        Self {
            shift: ShiftKind::GaussianMeanShift {
                mu,
                base: T::one(),
                slope: T::lit(0.5),
            },
            n1: sizes[0],
            n2: sizes[1],
            n3: sizes[2],
            n_test: sizes[3],
            seed,
        }
    }

    pub fn groups(source_probs: Vec<T>, target_probs: Vec<T>, score_scales: Vec<T>, sizes: [usize; 4], seed: u64) -> Self {
        Self {
            shift: ShiftKind::GroupShift {
                source_probs,
                target_probs,
                score_scales,
            },
            n1: sizes[0],
            n2: sizes[1],
            n3: sizes[2],
            n_test: sizes[3],
            seed,
        }
    }

    /// Five groups, uniform source, target tilted toward high-variance groups,
    /// with per-group score scales growing with the likelihood ratio.
    pub fn five_group_shift(n: usize, seed: u64) -> Self {
        let p = vec![T::lit(0.2); 5];
        let q = [0.05, 0.1, 0.2, 0.3, 0.35].map(T::lit).to_vec();
        let b = [0.25, 0.5, 1.0, 1.5, 1.75].map(T::lit).to_vec();
        Self::groups(p, q, b, [n; 4], seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 || self.n3 == 0 || self.n_test == 0 {
            return Err(LrqrError::param("sizes", "n1, n2, n3 and n_test must all be positive"));
        }
        match &self.shift {
            ShiftKind::GaussianMeanShift { mu, base, slope } => {
                if mu.is_empty() {
                    return Err(LrqrError::param("mu", "dimension must be at least 1"));
                }
                if !(mu.iter().all(|m| m.is_finite()) && *base > T::zero() && slope.is_finite()) {
                    return Err(LrqrError::param("gaussian spec", "mu finite, base > 0, slope finite"));
                }
            }
            ShiftKind::GroupShift {
                source_probs,
                target_probs,
                score_scales,
            } => {
                let g = source_probs.len();
                if g == 0 || target_probs.len() != g || score_scales.len() != g {
                    return Err(LrqrError::InvalidSimplex(format!(
                        "need equal, non-zero lengths (p: {g}, q: {}, scales: {})",
                        target_probs.len(),
                        score_scales.len()
                    )));
                }
                check_simplex("source_probs", source_probs)?;
                check_simplex("target_probs", target_probs)?;
                for k in 0..g {
                    if target_probs[k] > T::zero() && source_probs[k] <= T::zero() {
                        return Err(LrqrError::InvalidSimplex(format!(
                            "group {} has target mass but no source mass; the likelihood ratio does not exist",
                            k + 1
                        )));
                    }
                }
                if !score_scales.iter().all(|&b| b > T::zero() && b.is_finite()) {
                    return Err(LrqrError::param("score_scales", "must be finite and > 0"));
                }
            }
        }
        Ok(())
    }

    /// Oracle conditional `level`-quantile of the score at a feature row.
    pub fn conditional_quantile(&self, x: &[T], level: T) -> T {
        match &self.shift {
            ShiftKind::GaussianMeanShift { base, slope, .. } => level * *base * (*slope * x[0]).exp(),
            ShiftKind::GroupShift { score_scales, .. } => {
                let g = x.iter().position(|&v| v == T::one()).unwrap_or(0);
                level * score_scales[g]
            }
        }
    }

    /// Draws every sample. Fully determined by `seed`.
    pub fn generate(&self) -> Result<SyntheticData<T>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        match &self.shift {
            ShiftKind::GaussianMeanShift { mu, base, slope } => {
                let zero = vec![T::zero(); mu.len()];
                let draw_x = |rng: &mut ChaCha8Rng, n: usize, mean: &[T]| -> Matrix<T> {
                    let d = mean.len();
                    let mut data = Vec::with_capacity(n * d);
                    for _ in 0..n {
                        for &m in mean {
                            let z: f64 = StandardNormal.sample(rng);
                            data.push(m + T::lit(z));
                        }
                    }
                    Matrix::new(n, d, data).expect("sized buffer")
                };
                let draw_s = |rng: &mut ChaCha8Rng, x: &Matrix<T>| -> Vec<T> {
                    x.iter_rows()
                        .map(|r| {
                            let u: f64 = rng.gen();
                            T::lit(u) * *base * (*slope * r[0]).exp()
                        })
                        .collect()
                };
                let ratio = |x: &Matrix<T>| -> Vec<T> {
                    x.iter_rows()
                        .map(|r| oracle_gaussian_ratio(mu, r).expect("dimensions agree"))
                        .collect()
                };
                let source_x = draw_x(&mut rng, self.n1, &zero);
                let source_scores = draw_s(&mut rng, &source_x);
                let target_x = draw_x(&mut rng, self.n2, mu);
                let source_unlabeled_x = draw_x(&mut rng, self.n3, &zero);
                let test_x = draw_x(&mut rng, self.n_test, mu);
                let test_scores = draw_s(&mut rng, &test_x);
                Ok(SyntheticData {
                    source_r: ratio(&source_x),
                    target_r: ratio(&target_x),
                    source_unlabeled_r: ratio(&source_unlabeled_x),
                    test_r: ratio(&test_x),
                    source_x,
                    source_scores,
                    target_x,
                    source_unlabeled_x,
                    test_x,
                    test_scores,
                    source_groups: None,
                    test_groups: None,
                })
            }
            ShiftKind::GroupShift {
                source_probs,
                target_probs,
                score_scales,
            } => {
                let g = source_probs.len();
                let p: Vec<f64> = source_probs.iter().map(|v| v.to_f64_lossy()).collect();
                let q: Vec<f64> = target_probs.iter().map(|v| v.to_f64_lossy()).collect();
                let src = WeightedIndex::new(&p).map_err(|e| LrqrError::InvalidSimplex(e.to_string()))?;
                let tgt = WeightedIndex::new(&q).map_err(|e| LrqrError::InvalidSimplex(e.to_string()))?;
                let ratios: Vec<T> = (0..g)
                    .map(|k| {
                        if source_probs[k] > T::zero() {
                            target_probs[k] / source_probs[k]
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let draw_groups = |rng: &mut ChaCha8Rng, n: usize, dist: &WeightedIndex<f64>| -> Vec<usize> {
                    (0..n).map(|_| dist.sample(rng) + 1).collect()
                };
                let one_hot = |groups: &[usize]| -> Matrix<T> {
                    let mut m = Matrix::zeros(groups.len(), g);
                    for (i, &k) in groups.iter().enumerate() {
                        m[(i, k - 1)] = T::one();
                    }
                    m
                };
                let draw_s = |rng: &mut ChaCha8Rng, groups: &[usize]| -> Vec<T> {
                    groups
                        .iter()
                        .map(|&k| {
                            let u: f64 = rng.gen();
                            T::lit(u) * score_scales[k - 1]
                        })
                        .collect()
                };
                let r_of = |groups: &[usize]| -> Vec<T> { groups.iter().map(|&k| ratios[k - 1]).collect() };

                let g1 = draw_groups(&mut rng, self.n1, &src);
                let source_scores = draw_s(&mut rng, &g1);
                let g2 = draw_groups(&mut rng, self.n2, &tgt);
                let g3 = draw_groups(&mut rng, self.n3, &src);
                let gt = draw_groups(&mut rng, self.n_test, &tgt);
                let test_scores = draw_s(&mut rng, &gt);
                Ok(SyntheticData {
                    source_x: one_hot(&g1),
                    source_scores,
                    target_x: one_hot(&g2),
                    source_unlabeled_x: one_hot(&g3),
                    test_x: one_hot(&gt),
                    test_scores,
                    source_r: r_of(&g1),
                    target_r: r_of(&g2),
                    source_unlabeled_r: r_of(&g3),
                    test_r: r_of(&gt),
                    source_groups: Some(g1),
                    test_groups: Some(gt),
                })
            }
        }
    }
}

fn check_simplex<T: Scalar>(name: &str, p: &[T]) -> Result<()> {
    if p.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
        return Err(LrqrError::InvalidSimplex(format!("{name} has a negative or non-finite entry")));
    }
    let total: T = p.iter().copied().sum();
    if (total - T::one()).abs() > T::lit(1e-9) {
        return Err(LrqrError::InvalidSimplex(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

/// `exp(μᵀx − ‖μ‖²/2)`: density ratio of `N(μ, I)` to `N(0, I)` at `x`.
pub fn oracle_gaussian_ratio<T: Scalar>(mu: &[T], x: &[T]) -> Result<T> {
    if mu.len() != x.len() {
        return Err(LrqrError::ShapeMismatch {
            context: "gaussian ratio dimension",
            expected: mu.len(),
            got: x.len(),
        });
    }
    let mx: T = mu.iter().zip(x).map(|(&m, &v)| m * v).sum();
    let mm: T = mu.iter().map(|&m| m * m).sum();
    Ok((mx - T::lit(0.5) * mm).exp())
}

/// Row partition produced by [`median_split`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SplitScenario<T> {
    pub column: usize,
    pub median: T,
    /// Rows with value `≤ median`.
    pub source: Vec<usize>,
    /// Target rows used without labels (`⌊n/2⌋` of the target).
    pub target_unlabeled: Vec<usize>,
    /// Target rows held out for evaluation (`⌈n/2⌉` of the target).
    pub target_labeled: Vec<usize>,
}

/// Splits rows on the sample median of one feature column.
///
/// Only the feature matrix is consulted, so the split cannot depend on labels.
pub fn median_split<T: Scalar>(features: &Matrix<T>, column: usize, seed: u64) -> Result<SplitScenario<T>> {
    if column >= features.ncols() {
        return Err(LrqrError::ShapeMismatch {
            context: "median split column",
            expected: features.ncols(),
            got: column,
        });
    }
    let values = features.column_values(column);
    if values.is_empty() {
        return Err(LrqrError::DegenerateSplit("no rows".into()));
    }
    let median = sample_median(&values);
    let (source, mut target): (Vec<usize>, Vec<usize>) = (0..values.len()).partition(|&i| values[i] <= median);
    if target.is_empty() {
        return Err(LrqrError::DegenerateSplit(format!(
            "no value of column {column} lies strictly above the median {median}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    target.shuffle(&mut rng);
    let half = target.len() / 2;
    let target_labeled = target.split_off(half);
    Ok(SplitScenario {
        column,
        median,
        source,
        target_unlabeled: target,
        target_labeled,
    })
}

/// Sample median: middle value, or mean of the two middle values for even `n`.
pub fn sample_median<T: Scalar>(values: &[T]) -> T {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::lit(2.0)
    }
}

/// Which CSV columns carry which role. Empty `features` means "every column
/// not claimed by another role".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub features: Vec<String>,
    pub label: Option<String>,
    pub score: Option<String>,
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dataset<T> {
    pub feature_names: Vec<String>,
    pub features: Matrix<T>,
    pub labels: Option<Vec<T>>,
    /// Precomputed nonconformity scores; when present no predictor is needed.
    pub scores: Option<Vec<T>>,
    /// 1-based group labels.
    pub groups: Option<Vec<usize>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let pick = |v: &Vec<T>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            feature_names: self.feature_names.clone(),
            features: self.features.select_rows(idx),
            labels: self.labels.as_ref().map(pick),
            scores: self.scores.as_ref().map(pick),
            groups: self.groups.as_ref().map(|g| idx.iter().map(|&i| g[i]).collect()),
        }
    }
}

/// Reads a UTF-8 CSV with a header row; every used cell must parse as a number.
pub fn load_csv<T: Scalar>(path: &Path, schema: &CsvSchema) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let lookup = |name: &str| -> Result<usize> {
        index.get(name).copied().ok_or_else(|| LrqrError::Parse {
            path: path.to_path_buf(),
            row: 1,
            column: name.to_string(),
            message: "column not found in header".into(),
        })
    };
    let label_idx = schema.label.as_deref().map(lookup).transpose()?;
    let score_idx = schema.score.as_deref().map(lookup).transpose()?;
    let group_idx = schema.group.as_deref().map(lookup).transpose()?;
    let feature_idx: Vec<usize> = if schema.features.is_empty() {
        (0..header.len())
            .filter(|i| Some(*i) != label_idx && Some(*i) != score_idx && Some(*i) != group_idx)
            .collect()
    } else {
        schema.features.iter().map(|f| lookup(f)).collect::<Result<_>>()?
    };

    let mut data = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    let mut scores = score_idx.map(|_| Vec::new());
    let mut groups = group_idx.map(|_| Vec::new());
    let mut n = 0;
    for (r, rec) in reader.records().enumerate() {
        // header is line 1
        let line = r + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let cell = |j: usize| -> Result<T> {
            let raw = rec.get(j).unwrap_or("").trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(T::lit)
                .ok_or_else(|| LrqrError::Parse {
                    path: path.to_path_buf(),
                    row: line,
                    column: header[j].clone(),
                    message: if raw.is_empty() {
                        "missing value".into()
                    } else {
                        format!("`{raw}` is not a finite number")
                    },
                })
        };
        for &j in &feature_idx {
            data.push(cell(j)?);
        }
        if let (Some(j), Some(v)) = (label_idx, labels.as_mut()) {
            v.push(cell(j)?);
        }
        if let (Some(j), Some(v)) = (score_idx, scores.as_mut()) {
            v.push(cell(j)?);
        }
        if let (Some(j), Some(v)) = (group_idx, groups.as_mut()) {
            let raw = rec.get(j).unwrap_or("").trim();
            let g = raw.parse::<usize>().ok().filter(|&g| g >= 1).ok_or_else(|| LrqrError::Parse {
                path: path.to_path_buf(),
                row: line,
                column: header[j].clone(),
                message: format!("`{raw}` is not a positive group index"),
            })?;
            v.push(g);
        }
        n += 1;
    }
    Ok(Dataset {
        feature_names: feature_idx.iter().map(|&j| header[j].clone()).collect(),
        features: Matrix::new(n, feature_idx.len(), data)?,
        labels,
        scores,
        groups,
    })
}

fn csv_err(path: &Path, source: csv::Error) -> LrqrError {
    LrqrError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes named numeric columns as CSV with full round-trip precision.
pub fn write_csv<T: Scalar>(path: &Path, names: &[&str], columns: &[Vec<T>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(names).map_err(|e| csv_err(path, e))?;
    let n = columns.first().map_or(0, Vec::len);
    for i in 0..n {
        let rec: Vec<String> = columns.iter().map(|c| format_real(c[i])).collect();
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| LrqrError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Shortest decimal that parses back to the same value.
pub fn format_real<T: Scalar>(v: T) -> String {
    format!("{:?}", v.to_f64_lossy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn median_split_examples() {
        let m = Matrix::column(&[1.0, 2.0, 3.0, 4.0]);
        let s = median_split(&m, 0, 1).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.source, vec![0, 1]);
        let mut t: Vec<usize> = s.target_unlabeled.iter().chain(&s.target_labeled).copied().collect();
        t.sort();
        assert_eq!(t, vec![2, 3]);
        assert_eq!(s.target_unlabeled.len(), 1);

        let m = Matrix::column(&[1.0, 2.0, 3.0]);
        let s = median_split(&m, 0, 1).unwrap();
        assert_eq!(s.median, 2.0);
        assert_eq!(s.source, vec![0, 1]);
        assert_eq!(s.target_labeled, vec![2]);
        assert!(s.target_unlabeled.is_empty());

        let m = Matrix::column(&[5.0, 5.0, 5.0]);
        assert!(matches!(median_split(&m, 0, 1), Err(LrqrError::DegenerateSplit(_))));
        assert!(median_split(&m, 1, 1).is_err());
    }

    #[test]
    fn median_split_halves_are_floor_and_ceil() {
        let vals: Vec<f64> = (0..11).map(f64::from).collect();
        let s = median_split(&Matrix::column(&vals), 0, 3).unwrap();
        // median 5 -> source has 6 rows, target 5 rows split 2 / 3
        assert_eq!(s.source.len(), 6);
        assert_eq!(s.target_unlabeled.len(), 2);
        assert_eq!(s.target_labeled.len(), 3);
    }

    #[test]
    fn no_shift_gaussian_has_unit_oracle() {
        let d = SyntheticSpec::<f64>::gaussian(vec![0.0, 0.0], [20, 20, 20, 20], 5).generate().unwrap();
        for r in [&d.source_r, &d.target_r, &d.source_unlabeled_r, &d.test_r] {
            assert!(r.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn group_shift_oracle_is_probability_ratio() {
        let spec = SyntheticSpec::<f64>::groups(vec![0.5, 0.5], vec![0.8, 0.2], vec![1.0, 2.0], [50, 50, 50, 50], 9);
        let d = spec.generate().unwrap();
        let g = d.source_groups.as_ref().unwrap();
        for (i, &k) in g.iter().enumerate() {
            let expected = if k == 1 { 1.6 } else { 0.4 };
            assert!((d.source_r[i] - expected).abs() < 1e-15);
            assert!(d.source_scores[i] >= 0.0 && d.source_scores[i] <= spec_scale(k));
        }
        fn spec_scale(k: usize) -> f64 {
            if k == 1 { 1.0 } else { 2.0 }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::<f64>::five_group_shift(100, 42);
        assert_eq!(spec.generate().unwrap(), spec.generate().unwrap());
        let g = SyntheticSpec::<f64>::gaussian(vec![0.5], [10, 10, 10, 10], 1);
        assert_eq!(g.generate().unwrap(), g.generate().unwrap());
        assert_ne!(spec.generate().unwrap(), spec.with_seed(43).generate().unwrap());
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = SyntheticSpec::<f64>::groups(vec![0.5, 0.6], vec![0.5, 0.5], vec![1.0, 1.0], [5; 4], 0);
        assert!(matches!(bad.generate(), Err(LrqrError::InvalidSimplex(_))));
        let no_ac = SyntheticSpec::<f64>::groups(vec![1.0, 0.0], vec![0.5, 0.5], vec![1.0, 1.0], [5; 4], 0);
        assert!(matches!(no_ac.generate(), Err(LrqrError::InvalidSimplex(_))));
        let zero = SyntheticSpec::<f64>::gaussian(vec![0.0], [0, 5, 5, 5], 0);
        assert!(zero.generate().is_err());
    }

    #[test]
    fn gaussian_ratio_values() {
        assert!((oracle_gaussian_ratio(&[1.0], &[1.0]).unwrap() - 0.5f64.exp()).abs() < 1e-15);
        assert!((oracle_gaussian_ratio(&[1.0], &[0.0]).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(oracle_gaussian_ratio(&[0.0, 0.0], &[3.0, -2.0]).unwrap(), 1.0);
        assert!(oracle_gaussian_ratio(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn change_of_measure_on_generated_groups() {
        let spec = SyntheticSpec::<f64>::five_group_shift(4000, 11);
        let d = spec.generate().unwrap();
        let n = d.source_x.nrows() as f64;
        let tol = 4.0 / n.sqrt();
        // g = 1
        let lhs: f64 = d.source_r.iter().sum::<f64>() / n;
        assert!((lhs - 1.0).abs() <= tol, "{lhs}");
        // g = each basis coordinate
        for k in 0..5 {
            let lhs: f64 = d.source_x.iter_rows().zip(&d.source_r).map(|(x, r)| r * x[k]).sum::<f64>() / n;
            let rhs: f64 = d.target_x.iter_rows().map(|x| x[k]).sum::<f64>() / d.target_x.nrows() as f64;
            assert!((lhs - rhs).abs() <= tol, "group {k}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let mut f = std::fs::File::create(&p).unwrap();
        writeln!(f, "a,b,y,s").unwrap();
        writeln!(f, "1,2,3,0.5").unwrap();
        writeln!(f, "4,5,6,0.25").unwrap();
        drop(f);
        let schema = CsvSchema {
            features: vec!["a".into(), "b".into()],
            label: Some("y".into()),
            score: Some("s".into()),
            group: None,
        };
        let d: Dataset<f64> = load_csv(&p, &schema).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.features.row(1), &[4.0, 5.0]);
        assert_eq!(d.labels.unwrap(), vec![3.0, 6.0]);
        assert_eq!(d.scores.unwrap(), vec![0.5, 0.25]);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "a,b\n1,2\n3,x\n").unwrap();
        let err = load_csv::<f64>(&bad, &CsvSchema::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 3") && msg.contains("`b`") && msg.contains("`x`"), "{msg}");

        let missing = dir.path().join("m.csv");
        std::fs::write(&missing, "a,b\n1,\n").unwrap();
        assert!(load_csv::<f64>(&missing, &CsvSchema::default()).unwrap_err().to_string().contains("missing"));
    }

    #[test]
    fn write_csv_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        let v = vec![0.1 + 0.2, 1.0 / 3.0, 1e-300];
        write_csv(&p, &["v"], &[v.clone()]).unwrap();
        let d: Dataset<f64> = load_csv(&p, &CsvSchema::default()).unwrap();
        assert_eq!(d.features.column_values(0), v);
    }
}
