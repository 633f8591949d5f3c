//! Ridge regression and the nonconformity scores built on predictors.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LrqrError, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RidgeModel<T> {
    pub coefficients: Vec<T>,
    pub intercept: T,
    pub penalty: T,
}

impl<T: Scalar> RidgeModel<T> {
    pub fn predict(&self, x: &[T]) -> Result<T> {
        if x.len() != self.coefficients.len() {
            return Err(LrqrError::ShapeMismatch {
                context: "ridge features",
                expected: self.coefficients.len(),
                got: x.len(),
            });
        }
        Ok(dot(&self.coefficients, x) + self.intercept)
    }

    pub fn predict_rows(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        x.iter_rows().map(|r| self.predict(r)).collect()
    }
}

/// Solves `(X̃ᵀX̃ + penalty·I) β = X̃ᵀỹ` on centered data; the intercept is
/// `ȳ − x̄ᵀβ` and is not penalized.
pub fn ridge_fit<T: Scalar>(x: &Matrix<T>, y: &[T], penalty: T) -> Result<RidgeModel<T>> {
    let n = x.nrows();
    if n == 0 {
        return Err(LrqrError::EmptySample("ridge training rows"));
    }
    if y.len() != n {
        return Err(LrqrError::ShapeMismatch { context: "ridge targets", expected: n, got: y.len() });
    }
    if !(penalty >= T::zero()) || !penalty.is_finite() {
        return Err(LrqrError::param("penalty", "must be finite and non-negative"));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(LrqrError::NonFinite("ridge training data"));
    }
    let p = x.ncols();
    let means = x.column_means();
    let y_mean = y.iter().copied().sum::<T>() / T::count(n);

    let mut gram = Matrix::zeros(p, p);
    let mut rhs = vec![T::zero(); p];
    let mut centered = vec![T::zero(); p];
    for (row, &yi) in x.iter_rows().zip(y) {
        for (c, (&v, &m)) in centered.iter_mut().zip(row.iter().zip(&means)) {
            *c = v - m;
        }
        let yc = yi - y_mean;
        for a in 0..p {
            rhs[a] += centered[a] * yc;
            for b in a..p {
                gram[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..p {
        gram[(a, a)] += penalty;
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let coefficients = if p == 0 {
        Vec::new()
    } else {
        Cholesky::factor(&gram)
            .map_err(|_| LrqrError::Singular("ridge normal equations are not positive definite".into()))?
            .solve(&rhs)
    };
    let intercept = y_mean - dot(&means, &coefficients);
    Ok(RidgeModel { coefficients, intercept, penalty })
}

/// Thirteen log-spaced penalties from `1e-4` to `1e2`.
pub fn default_ridge_grid<T: Scalar>() -> Vec<T> {
    (0..13).map(|k| T::lit(10f64.powf(-4.0 + 0.5 * k as f64))).collect()
}

/// Chooses the penalty with the smallest pooled held-out squared error over
/// `folds` seeded folds (first minimum in grid order), then refits on all rows.
pub fn ridge_cv_fit<T: Scalar>(x: &Matrix<T>, y: &[T], grid: &[T], folds: usize, seed: u64) -> Result<RidgeModel<T>> {
    if grid.is_empty() {
        return Err(LrqrError::param("penalty_grid", "must not be empty"));
    }
    if folds < 2 {
        return Err(LrqrError::param("folds", "need at least 2 folds"));
    }
    let n = x.nrows();
    if n < folds {
        return Err(LrqrError::TooFewRows { sample: "ridge training".into(), rows: n, folds });
    }
    if y.len() != n {
        return Err(LrqrError::ShapeMismatch { context: "ridge targets", expected: n, got: y.len() });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assign = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assign[i] = pos % folds;
    }
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| (0..n).partition(|&i| assign[i] != f))
        .collect();

    let mut best: Option<(T, T)> = None;
    for &penalty in grid {
        let mut sse = T::zero();
        for (train, held) in &splits {
            let yt: Vec<T> = train.iter().map(|&i| y[i]).collect();
            let model = ridge_fit(&x.select_rows(train), &yt, penalty)?;
            for &i in held {
                let e = y[i] - model.predict(x.row(i))?;
                sse += e * e;
            }
        }
        let mse = sse / T::count(n);
        if best.map_or(true, |(_, b)| mse < b) {
            best = Some((penalty, mse));
        }
    }
    let (penalty, _) = best.expect("grid is non-empty");
    ridge_fit(x, y, penalty)
}

/// `|y − f̂(x)|`.
pub fn score_abs_residual<T: Scalar>(model: &RidgeModel<T>, x: &[T], y: T) -> Result<T> {
    Ok((y - model.predict(x)?).abs())
}

fn check_probs<T: Scalar>(probs: &[T], label: usize) -> Result<()> {
    if label >= probs.len() {
        return Err(LrqrError::ShapeMismatch { context: "label index", expected: probs.len(), got: label });
    }
    if probs.iter().any(|&p| !(p >= T::zero()) || !p.is_finite()) {
        return Err(LrqrError::param("probs", "entries must be finite and non-negative"));
    }
    let total = probs.iter().copied().sum::<T>();
    if (total - T::one()).abs() > T::lit(1e-6) {
        return Err(LrqrError::param("probs", "must sum to 1 within 1e-6"));
    }
    Ok(())
}

/// `−log p_label`. A zero probability gives `cap` when set, else `+∞`.
pub fn score_neg_log_prob<T: Scalar>(probs: &[T], label: usize, cap: Option<T>) -> Result<T> {
    check_probs(probs, label)?;
    let p = probs[label];
    let s = if p > T::zero() { -p.ln() } else { T::infinity() };
    Ok(match cap {
        Some(c) => s.min(c),
        None => s,
    })
}

/// `1 − p_label`, always in `[0, 1]`.
pub fn score_one_minus_prob<T: Scalar>(probs: &[T], label: usize) -> Result<T> {
    check_probs(probs, label)?;
    Ok((T::one() - probs[label]).max(T::zero()).min(T::one()))
}
