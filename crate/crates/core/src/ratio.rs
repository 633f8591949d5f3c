//! Density-ratio estimates from a logistic domain classifier.

use serde::{Deserialize, Serialize};

use crate::basis::Standardization;
use crate::error::{LrqrError, Result};
use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

pub use crate::data::oracle_gaussian_ratio;

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` before taking odds.
pub const P_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioOptions<T> {
    /// Penalty `l2/2 · ‖w‖²` on the non-intercept weights.
    pub l2_penalty: T,
    /// Multiply the odds by `n_source / n_target`.
    pub prior_correction: bool,
    /// Standardize columns on the pooled sample before fitting.
    pub standardize: bool,
    pub max_iter: usize,
    /// Stop once the gradient norm is at most this.
    pub tol: T,
}

impl<T: Scalar> Default for RatioOptions<T> {
    fn default() -> Self {
        Self {
            l2_penalty: T::lit(1e-4),
            prior_correction: true,
            standardize: true,
            max_iter: 20_000,
            tol: T::lit(1e-6),
        }
    }
}

/// Logistic model of `P(target | x)`; `ratio_at` turns it into `r̂(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RatioModel<T> {
    pub weights: Vec<T>,
    pub intercept: T,
    pub standardization: Option<Standardization<T>>,
    pub prior_correction: bool,
    pub n_source: usize,
    pub n_target: usize,
    pub iterations: usize,
    pub gradient_norm: T,
    pub converged: bool,
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

// log(1 + e^z) without overflow
fn softplus<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Logistic<'a, T> {
    rows: Vec<&'a [T]>,
    labels: Vec<T>,
    l2: T,
}

impl<T: Scalar> Logistic<'_, T> {
    fn n(&self) -> T {
        T::count(self.rows.len())
    }

    // params = (w..., b)
    fn loss(&self, params: &[T]) -> T {
        let d = params.len() - 1;
        let (w, b) = (&params[..d], params[d]);
        let nll = self
            .rows
            .iter()
            .zip(&self.labels)
            .map(|(x, &y)| {
                let z = dot(w, x) + b;
                softplus(z) - y * z
            })
            .sum::<T>()
            / self.n();
        nll + T::lit(0.5) * self.l2 * dot(w, w)
    }

    fn gradient(&self, params: &[T]) -> Vec<T> {
        let d = params.len() - 1;
        let (w, b) = (&params[..d], params[d]);
        let mut g = vec![T::zero(); d + 1];
        for (x, &y) in self.rows.iter().zip(&self.labels) {
            let e = sigmoid(dot(w, x) + b) - y;
            for (gk, &xk) in g[..d].iter_mut().zip(x.iter()) {
                *gk += e * xk;
            }
            g[d] += e;
        }
        let n = self.n();
        for (k, gk) in g.iter_mut().enumerate() {
            *gk /= n;
            if k < d {
                *gk += self.l2 * w[k];
            }
        }
        g
    }
}

/// Fits the source-vs-target classifier (source = 0, target = 1) by gradient
/// descent with backtracking, returning the model and the per-iteration loss.
pub fn fit_domain_classifier_traced<T: Scalar>(
    source_phi: &Matrix<T>,
    target_phi: &Matrix<T>,
    options: &RatioOptions<T>,
) -> Result<(RatioModel<T>, Vec<T>)> {
    if source_phi.nrows() == 0 {
        return Err(LrqrError::EmptySample("classifier source rows"));
    }
    if target_phi.nrows() == 0 {
        return Err(LrqrError::EmptySample("classifier target rows"));
    }
    if source_phi.ncols() != target_phi.ncols() {
        return Err(LrqrError::ShapeMismatch {
            context: "classifier source vs target columns",
            expected: source_phi.ncols(),
            got: target_phi.ncols(),
        });
    }
    if !(options.l2_penalty >= T::zero()) || !options.l2_penalty.is_finite() {
        return Err(LrqrError::param("l2_penalty", "must be finite and non-negative"));
    }
    if !source_phi.all_finite() || !target_phi.all_finite() {
        return Err(LrqrError::NonFinite("classifier features"));
    }
    let d = source_phi.ncols();

    let standardization = if options.standardize {
        let mut pooled = Vec::with_capacity((source_phi.nrows() + target_phi.nrows()) * d);
        pooled.extend_from_slice(source_phi.as_slice());
        pooled.extend_from_slice(target_phi.as_slice());
        let pooled = Matrix::new(source_phi.nrows() + target_phi.nrows(), d, pooled)?;
        Some(Standardization::fit(&pooled)?)
    } else {
        None
    };
    let transform = |m: &Matrix<T>| -> Matrix<T> {
        let mut out = m.clone();
        if let Some(st) = &standardization {
            for i in 0..out.nrows() {
                for (k, v) in out.row_mut(i).iter_mut().enumerate() {
                    *v = (*v - st.means[k]) / st.scales[k];
                }
            }
        }
        out
    };
    let xs = transform(source_phi);
    let xt = transform(target_phi);
    let problem = Logistic {
        rows: xs.iter_rows().chain(xt.iter_rows()).collect(),
        labels: std::iter::repeat(T::zero())
            .take(xs.nrows())
            .chain(std::iter::repeat(T::one()).take(xt.nrows()))
            .collect(),
        l2: options.l2_penalty,
    };

    // 1/L with L = mean ‖(x, 1)‖² / 4 + l2 bounds the curvature
    let mean_sq = problem.rows.iter().map(|x| dot(x, x) + T::one()).sum::<T>() / problem.n();
    let base_step = T::one() / (T::lit(0.25) * mean_sq + options.l2_penalty);

    let mut params = vec![T::zero(); d + 1];
    let mut loss = problem.loss(&params);
    let mut trace = vec![loss];
    let mut step = base_step;
    let mut grad = problem.gradient(&params);
    let mut gnorm = dot(&grad, &grad).sqrt();
    let mut iterations = 0;
    while iterations < options.max_iter && gnorm > options.tol {
        iterations += 1;
        step = step * T::lit(2.0);
        let sq = gnorm * gnorm;
        let (next, next_loss) = loop {
            let cand: Vec<T> = params.iter().zip(&grad).map(|(&p, &g)| p - step * g).collect();
            let l = problem.loss(&cand);
            if l <= loss - T::lit(0.5) * step * sq {
                break (cand, l);
            }
            step = step * T::lit(0.5);
            if step < base_step * T::lit(1e-12) {
                break (params.clone(), loss);
            }
        };
        if next_loss >= loss {
            break;
        }
        params = next;
        loss = next_loss;
        trace.push(loss);
        grad = problem.gradient(&params);
        gnorm = dot(&grad, &grad).sqrt();
    }

    let model = RatioModel {
        weights: params[..d].to_vec(),
        intercept: params[d],
        standardization,
        prior_correction: options.prior_correction,
        n_source: source_phi.nrows(),
        n_target: target_phi.nrows(),
        iterations,
        gradient_norm: gnorm,
        converged: gnorm <= options.tol,
    };
    Ok((model, trace))
}

pub fn fit_domain_classifier<T: Scalar>(
    source_phi: &Matrix<T>,
    target_phi: &Matrix<T>,
    options: &RatioOptions<T>,
) -> Result<RatioModel<T>> {
    fit_domain_classifier_traced(source_phi, target_phi, options).map(|(m, _)| m)
}

impl<T: Scalar> RatioModel<T> {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Clamped `P(target | x)`.
    pub fn probability(&self, phi_x: &[T]) -> Result<T> {
        if phi_x.len() != self.dim() {
            return Err(LrqrError::ShapeMismatch {
                context: "ratio model features",
                expected: self.dim(),
                got: phi_x.len(),
            });
        }
        let z = match &self.standardization {
            Some(st) => {
                phi_x
                    .iter()
                    .zip(&self.weights)
                    .enumerate()
                    .map(|(k, (&x, &w))| w * (x - st.means[k]) / st.scales[k])
                    .sum::<T>()
                    + self.intercept
            }
            None => dot(&self.weights, phi_x) + self.intercept,
        };
        let eps = T::lit(P_CLAMP);
        Ok(sigmoid(z).max(eps).min(T::one() - eps))
    }

    /// `r̂(x) = p̂/(1 − p̂)`, times `n_source/n_target` under prior correction.
    pub fn ratio_at(&self, phi_x: &[T]) -> Result<T> {
        let p = self.probability(phi_x)?;
        let odds = p / (T::one() - p);
        Ok(if self.prior_correction {
            odds * T::count(self.n_source) / T::count(self.n_target)
        } else {
            odds
        })
    }

    pub fn ratios(&self, rows: &Matrix<T>) -> Result<Vec<T>> {
        rows.iter_rows().map(|r| self.ratio_at(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn model(intercept: f64, correction: bool, ns: usize, nt: usize) -> RatioModel<f64> {
        RatioModel {
            weights: vec![0.0],
            intercept,
            standardization: None,
            prior_correction: correction,
            n_source: ns,
            n_target: nt,
            iterations: 0,
            gradient_norm: 0.0,
            converged: true,
        }
    }

    #[test]
    fn odds_examples() {
        assert!((model(0.0, false, 1, 1).ratio_at(&[0.3]).unwrap() - 1.0).abs() < 1e-15);
        // logit(0.75) = ln 3
        assert!((model(3f64.ln(), false, 1, 1).ratio_at(&[0.0]).unwrap() - 3.0).abs() < 1e-12);
        assert!((model(0.0, true, 200, 100).ratio_at(&[0.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn ratio_is_positive_and_finite_at_extremes() {
        for b in [-1e4, -50.0, 0.0, 50.0, 1e4] {
            let r = model(b, false, 1, 1).ratio_at(&[0.0]).unwrap();
            assert!(r > 0.0 && r.is_finite());
        }
    }

    #[test]
    fn shape_mismatch() {
        assert!(model(0.0, false, 1, 1).ratio_at(&[1.0, 2.0]).is_err());
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(fit_domain_classifier(&a, &b, &RatioOptions::default()).is_err());
    }

    #[test]
    fn negative_penalty_rejected() {
        let a = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let opts = RatioOptions { l2_penalty: -1.0, ..RatioOptions::default() };
        assert!(fit_domain_classifier(&a, &a, &opts).is_err());
    }

    #[test]
    fn identical_rows_give_class_frequency() {
        let s = Matrix::<f64>::from_rows(&vec![vec![1.0, 2.0]; 30]).unwrap();
        let t = Matrix::from_rows(&vec![vec![1.0, 2.0]; 10]).unwrap();
        let opts = RatioOptions { prior_correction: false, ..RatioOptions::default() };
        let m = fit_domain_classifier(&s, &t, &opts).unwrap();
        let p = m.probability(&[1.0, 2.0]).unwrap();
        assert!((p - 0.25).abs() < 1e-4, "{p}");
    }

    #[test]
    fn first_step_follows_mean_difference() {
        let s = Matrix::from_rows(&[vec![-1.0], vec![0.0]]).unwrap();
        let t = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let opts = RatioOptions { max_iter: 1, standardize: false, ..RatioOptions::default() };
        let m = fit_domain_classifier(&s, &t, &opts).unwrap();
        assert!(m.weights[0] > 0.0);
        let s2 = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let t2 = Matrix::from_rows(&[vec![-1.0], vec![0.0]]).unwrap();
        let m2 = fit_domain_classifier(&s2, &t2, &opts).unwrap();
        assert!(m2.weights[0] < 0.0);
    }

    fn gaussian(n: usize, shift: f64, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                vec![z + shift]
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn loss_trace_non_increasing_and_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = gaussian(500, 0.0, &mut rng);
        let t = gaussian(300, 1.0, &mut rng);
        let (m, trace) = fit_domain_classifier_traced(&s, &t, &RatioOptions::default()).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(m.converged, "gradient norm {}", m.gradient_norm);
    }

    #[test]
    fn same_distribution_gives_unit_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = gaussian(4000, 0.0, &mut rng);
        let t = gaussian(4000, 0.0, &mut rng);
        let m = fit_domain_classifier(&s, &t, &RatioOptions::default()).unwrap();
        for x in [-1.5, 0.0, 1.5] {
            let r = m.ratio_at(&[x]).unwrap();
            assert!((r - 1.0).abs() < 0.15, "r({x}) = {r}");
        }
    }

    #[test]
    fn corrected_ratio_self_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = gaussian(3000, 0.0, &mut rng);
        let t = gaussian(1500, 0.7, &mut rng);
        let m = fit_domain_classifier(&s, &t, &RatioOptions::default()).unwrap();
        let fresh = gaussian(3000, 0.0, &mut rng);
        let mean = m.ratios(&fresh).unwrap().iter().sum::<f64>() / 3000.0;
        assert!((mean - 1.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn serde_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = gaussian(50, 0.0, &mut rng);
        let t = gaussian(50, 1.0, &mut rng);
        let m = fit_domain_classifier(&s, &t, &RatioOptions::default()).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: RatioModel<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
