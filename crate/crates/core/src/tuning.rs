//! Regularization grid and cross-validated choice of `λ`.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::bundle::CalibrationBundle;
use crate::error::{LrqrError, Result};
use crate::scalar::Scalar;
use crate::solver::{gradient_norm_measure, solve, LrqrConfig, SolveDiagnostics, ThresholdModel};

/// Number of grid points.
pub const GRID_SIZE: usize = 10;

/// `c0 · n1^(-1/3) · (1/n2 + 1/n3)^(-1/3)`.
pub fn lambda_star<T: Scalar>(n1: usize, n2: usize, n3: usize, c0: T) -> Result<T> {
    if n1 == 0 || n2 == 0 || n3 == 0 {
        return Err(LrqrError::param("sample sizes", "all counts must be at least 1"));
    }
    if !(c0 > T::zero()) || !c0.is_finite() {
        return Err(LrqrError::param("c0", "must be positive and finite"));
    }
    let third = T::one() / T::lit(3.0);
    let inv = T::one() / T::count(n2) + T::one() / T::count(n3);
    Ok(c0 * T::count(n1).powf(-third) * inv.powf(-third))
}

/// Ten equally spaced values from `λ*/10` to `λ*`, both endpoints exact.
pub fn lambda_grid<T: Scalar>(lambda_star: T) -> Result<Vec<T>> {
    if !(lambda_star > T::zero()) || !lambda_star.is_finite() {
        return Err(LrqrError::param("lambda_star", "must be positive and finite"));
    }
    let n = T::count(GRID_SIZE);
    Ok((1..=GRID_SIZE)
        .map(|k| if k == GRID_SIZE { lambda_star } else { lambda_star * T::count(k) / n })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions<T> {
    pub folds: usize,
    pub c0: T,
}

impl<T: Scalar> Default for TuneOptions<T> {
    fn default() -> Self {
        Self { folds: 3, c0: T::one() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TuneResult<T> {
    pub lambda_star: T,
    pub grid: Vec<T>,
    /// `fold_scores[i][j]`: held-out gradient norm for `grid[i]` on fold `j`.
    pub fold_scores: Vec<Vec<T>>,
    pub mean_scores: Vec<T>,
    pub chosen_lambda: T,
    pub folds: usize,
    /// Seed of the fold shuffle.
    pub seed: u64,
    pub final_model: ThresholdModel<T>,
    pub final_diagnostics: SolveDiagnostics<T>,
}

fn fold_assignment(n: usize, folds: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

fn split(assign: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (i, &f) in assign.iter().enumerate() {
        if f == fold {
            held.push(i);
        } else {
            train.push(i);
        }
    }
    (train, held)
}

/// Picks `λ` from the grid below `λ*` by `folds`-fold cross-validation of the
/// held-out gradient norm, then refits on the whole bundle.
///
/// All three samples are folded with one seeded shuffle each (seed taken from
/// `config.seed`). Fits run in parallel; the argmin scans the grid in
/// ascending order and keeps the first minimum, so ties go to the smaller `λ`.
pub fn cross_validate<T: Scalar>(
    bundle: &CalibrationBundle<T>,
    basis: &Basis<T>,
    config: &LrqrConfig<T>,
    options: &TuneOptions<T>,
) -> Result<TuneResult<T>> {
    let folds = options.folds;
    if folds < 2 {
        return Err(LrqrError::param("folds", "need at least 2 folds to hold data out"));
    }
    for (name, rows) in [("S1", bundle.n1()), ("S2", bundle.n2()), ("S3", bundle.n3())] {
        if rows < folds {
            return Err(LrqrError::TooFewRows { sample: name, rows, folds });
        }
    }
    let lambda_star = lambda_star(bundle.n1(), bundle.n2(), bundle.n3(), options.c0)?;
    let grid = lambda_grid(lambda_star)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let a1 = fold_assignment(bundle.n1(), folds, &mut rng);
    let a2 = fold_assignment(bundle.n2(), folds, &mut rng);
    let a3 = fold_assignment(bundle.n3(), folds, &mut rng);
    let mut pairs = Vec::with_capacity(folds);
    for f in 0..folds {
        let (t1, h1) = split(&a1, f);
        let (t2, h2) = split(&a2, f);
        let (t3, h3) = split(&a3, f);
        pairs.push((bundle.subset(&t1, &t2, &t3)?, bundle.subset(&h1, &h2, &h3)?));
    }

    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|i| (0..folds).map(move |f| (i, f))).collect();
    let scores: Vec<Result<T>> = jobs
        .par_iter()
        .map(|&(i, f)| {
            let (train, held) = &pairs[f];
            let cfg = config.with_lambda(grid[i]);
            let (model, diag) = solve(&cfg, train, basis)?;
            if !diag.converged {
                warn!("fold {f} fit at lambda {:?} did not converge", grid[i]);
            }
            gradient_norm_measure(&model, held)
        })
        .collect();
    let mut fold_scores = vec![Vec::with_capacity(folds); grid.len()];
    for ((i, _), score) in jobs.iter().zip(scores) {
        fold_scores[*i].push(score?);
    }
    let mean_scores: Vec<T> = fold_scores
        .iter()
        .map(|row| row.iter().copied().sum::<T>() / T::count(folds))
        .collect();

    let mut best = 0;
    for (i, &m) in mean_scores.iter().enumerate() {
        if m < mean_scores[best] {
            best = i;
        }
    }
    let chosen_lambda = grid[best];
    let (final_model, final_diagnostics) = solve(&config.with_lambda(chosen_lambda), bundle, basis)?;
    Ok(TuneResult {
        lambda_star,
        grid,
        fold_scores,
        mean_scores,
        chosen_lambda,
        folds,
        seed: config.seed,
        final_model,
        final_diagnostics,
    })
}
