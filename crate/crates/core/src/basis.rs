//! Feature maps `Φ : X -> R^d` spanning the linear threshold class `h = <γ, Φ>`.

use serde::{Deserialize, Serialize};

use crate::error::{LrqrError, Result};
use crate::linalg::{dot, norm2, Matrix};
use crate::scalar::Scalar;

/// Per-column affine standardization, fitted on source rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Standardization<T> {
    pub means: Vec<T>,
    pub scales: Vec<T>,
}

impl<T: Scalar> Standardization<T> {
    /// Column means and standard deviations of `source`; zero-variance columns get scale 1.
    pub fn fit(source: &Matrix<T>) -> Result<Self> {
        if source.nrows() == 0 {
            return Err(LrqrError::EmptySample("standardization source"));
        }
        let means = source.column_means();
        let n = T::count(source.nrows());
        let mut scales = vec![T::zero(); source.ncols()];
        for r in source.iter_rows() {
            for ((s, &x), &m) in scales.iter_mut().zip(r).zip(&means) {
                *s += (x - m) * (x - m);
            }
        }
        for s in scales.iter_mut() {
            let sd = (*s / n).sqrt();
            *s = if sd > T::epsilon() { sd } else { T::one() };
        }
        Ok(Self { means, scales })
    }
}

/// A fixed basis. Group indicators consume a per-sample 0/1 membership vector,
/// so overlapping groups are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Basis<T> {
    /// `Φ(x) = (1, x₁, …, x_p)`. With `n_features = 0` this is the constant basis.
    RawWithIntercept { n_features: usize },
    /// `Φ(x) = (1[x ∈ G₁], …, 1[x ∈ G_d])`, input is the membership vector.
    GroupIndicators { n_groups: usize },
    /// Opaque real columns (e.g. embeddings), optionally standardized and
    /// optionally prefixed with an intercept.
    PrecomputedColumns {
        n_columns: usize,
        intercept: bool,
        #[serde(default)]
        standardization: Option<Standardization<T>>,
    },
}

impl<T: Scalar> Basis<T> {
    pub fn constant() -> Self {
        Basis::RawWithIntercept { n_features: 0 }
    }

    pub fn raw_with_intercept(n_features: usize) -> Self {
        Basis::RawWithIntercept { n_features }
    }

    pub fn group_indicators(n_groups: usize) -> Result<Self> {
        if n_groups == 0 {
            return Err(LrqrError::param("n_groups", "must be at least 1"));
        }
        Ok(Basis::GroupIndicators { n_groups })
    }

    pub fn precomputed(n_columns: usize, intercept: bool) -> Result<Self> {
        if n_columns == 0 && !intercept {
            return Err(LrqrError::param("n_columns", "basis would have dimension 0"));
        }
        Ok(Basis::PrecomputedColumns {
            n_columns,
            intercept,
            standardization: None,
        })
    }

    /// Fits per-column standardization on `source` (raw input rows).
    /// Only meaningful for precomputed columns; other kinds are returned unchanged.
    pub fn with_standardization(self, source: &Matrix<T>) -> Result<Self> {
        match self {
            Basis::PrecomputedColumns {
                n_columns,
                intercept,
                ..
            } => {
                check_arity(n_columns, source.ncols())?;
                Ok(Basis::PrecomputedColumns {
                    n_columns,
                    intercept,
                    standardization: Some(Standardization::fit(source)?),
                })
            }
            other => Ok(other),
        }
    }

    /// Dimension `d` of `Φ(x)`.
    pub fn dim(&self) -> usize {
        match self {
            Basis::RawWithIntercept { n_features } => n_features + 1,
            Basis::GroupIndicators { n_groups } => *n_groups,
            Basis::PrecomputedColumns {
                n_columns,
                intercept,
                ..
            } => n_columns + usize::from(*intercept),
        }
    }

    /// Number of raw input values `eval` expects.
    pub fn input_arity(&self) -> usize {
        match self {
            Basis::RawWithIntercept { n_features } => *n_features,
            Basis::GroupIndicators { n_groups } => *n_groups,
            Basis::PrecomputedColumns { n_columns, .. } => *n_columns,
        }
    }

    /// Index of the constant coordinate, if the basis has one.
    pub fn intercept_index(&self) -> Option<usize> {
        match self {
            Basis::RawWithIntercept { .. } => Some(0),
            Basis::PrecomputedColumns { intercept: true, .. } => Some(0),
            _ => None,
        }
    }

    /// Writes `Φ(x)` into `out` (length `dim`).
    pub fn eval_into(&self, x: &[T], out: &mut [T]) -> Result<()> {
        check_arity(self.input_arity(), x.len())?;
        debug_assert_eq!(out.len(), self.dim());
        match self {
            Basis::RawWithIntercept { .. } => {
                out[0] = T::one();
                out[1..].copy_from_slice(x);
            }
            Basis::GroupIndicators { .. } => {
                let mut any = false;
                for (o, &m) in out.iter_mut().zip(x) {
                    if m == T::one() {
                        any = true;
                    } else if m != T::zero() {
                        return Err(LrqrError::param(
                            "group membership",
                            format!("entries must be 0 or 1, got {m}"),
                        ));
                    }
                    *o = m;
                }
                if !any {
                    return Err(LrqrError::param(
                        "group membership",
                        "row belongs to no group",
                    ));
                }
            }
            Basis::PrecomputedColumns {
                intercept,
                standardization,
                ..
            } => {
                let off = usize::from(*intercept);
                if *intercept {
                    out[0] = T::one();
                }
                match standardization {
                    Some(st) => {
                        for (j, &v) in x.iter().enumerate() {
                            out[off + j] = (v - st.means[j]) / st.scales[j];
                        }
                    }
                    None => out[off..].copy_from_slice(x),
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.dim()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// Evaluates `Φ` on every row of `x`.
    pub fn eval_rows(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        check_arity(self.input_arity(), x.ncols())?;
        let mut out = Matrix::zeros(x.nrows(), self.dim());
        for i in 0..x.nrows() {
            self.eval_into(x.row(i), out.row_mut(i))?;
        }
        Ok(out)
    }
}

fn check_arity(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(LrqrError::ShapeMismatch {
            context: "basis input arity",
            expected,
            got,
        });
    }
    Ok(())
}

/// 0/1 membership row for the given 1-based group labels.
pub fn group_membership<T: Scalar>(n_groups: usize, groups: &[usize]) -> Result<Vec<T>> {
    let mut row = vec![T::zero(); n_groups];
    for &g in groups {
        if g == 0 || g > n_groups {
            return Err(LrqrError::param(
                "group",
                format!("label {g} outside 1..={n_groups}"),
            ));
        }
        row[g - 1] = T::one();
    }
    Ok(row)
}

/// Coefficients `γ` of a threshold `h(x) = <γ, Φ(x)>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "T: Scalar")]
pub struct Hypothesis<T> {
    pub gamma: Vec<T>,
}

impl<T: Scalar> Hypothesis<T> {
    pub fn new(gamma: Vec<T>) -> Self {
        Self { gamma }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gamma: vec![T::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// `‖h‖ = ‖γ‖₂`.
    pub fn norm(&self) -> T {
        norm2(&self.gamma)
    }

    /// `<γ, φ>` for an already-evaluated basis row.
    #[inline]
    pub fn at_phi(&self, phi: &[T]) -> T {
        dot(&self.gamma, phi)
    }

    /// `h` on every row of an evaluated basis matrix.
    pub fn on_rows(&self, phi: &Matrix<T>) -> Vec<T> {
        phi.mul_vec(&self.gamma)
    }
}

/// `h(x) = <γ, Φ(x)>`.
pub fn eval_h<T: Scalar>(basis: &Basis<T>, hyp: &Hypothesis<T>, x: &[T]) -> Result<T> {
    if hyp.dim() != basis.dim() {
        return Err(LrqrError::ShapeMismatch {
            context: "hypothesis dimension",
            expected: basis.dim(),
            got: hyp.dim(),
        });
    }
    Ok(hyp.at_phi(&basis.eval(x)?))
}
