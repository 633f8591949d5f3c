//! Empirical LR-QR objective, its gradient, and the constrained solver.
//!
//! The objective over `h = <γ, Φ>` and scalar `β` is
//!
//! ```text
//! L(γ, β) = Ê₁[ℓ_α(h(X), S)] + λ Ê₃[β² h(X)²] − λ Ê₂[2β h(X)]
//! ```
//!
//! minimized over the box `‖γ‖₂ ≤ B`, `β ∈ [β_min, β_max]`. It is convex in `γ`
//! for fixed `β` and quadratic in `β` for fixed `γ`, but not jointly convex, so
//! [`solve`] alternates an exact clipped `β` step with a `γ` block step.

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{Basis, Hypothesis};
use crate::bundle::{CalibrationBundle, Moments};
use crate::error::{LrqrError, Result};
use crate::linalg::{axpy, dot, lu_solve, norm2, symmetric_eigenvalues, Cholesky, Matrix};
use crate::loss::{pinball, Alpha};
use crate::scalar::Scalar;

/// How the `γ` block is minimized for fixed `β`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaStep {
    /// Proximal-point iterations, each solved exactly by dual coordinate ascent.
    #[default]
    Proximal,
    /// Projected subgradient with step `step0/√t` and iterate averaging.
    Subgradient,
}

/// Solver configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LrqrConfig<T> {
    pub alpha: Alpha<T>,
    pub lambda: T,
    /// Radius `B` of the `γ` ball. `None` uses `10·‖γ₀‖₂ + 10`.
    pub radius: Option<T>,
    pub beta_min: T,
    pub beta_max: T,
    pub max_outer: usize,
    pub max_inner: usize,
    pub step0: T,
    pub tol_stationarity: T,
    pub tol_objective: T,
    pub seed: u64,
    #[serde(default)]
    pub gamma_step: GammaStep,
}

impl<T: Scalar> LrqrConfig<T> {
    pub fn new(alpha: Alpha<T>, lambda: T) -> Self {
        Self {
            alpha,
            lambda,
            radius: None,
            beta_min: T::lit(1e-3),
            beta_max: T::lit(1e3),
            max_outer: 200,
            max_inner: 500,
            step0: T::one(),
            tol_stationarity: T::lit(1e-4),
            tol_objective: T::lit(1e-8),
            seed: 0,
            gamma_step: GammaStep::Proximal,
        }
    }

    pub fn with_lambda(&self, lambda: T) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= T::zero() && self.lambda.is_finite()) {
            return Err(LrqrError::param("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if let Some(b) = self.radius {
            if !(b > T::zero() && b.is_finite()) {
                return Err(LrqrError::param("radius", format!("must be finite and > 0, got {b}")));
            }
        }
        if !(self.beta_min > T::zero() && self.beta_min <= self.beta_max && self.beta_max.is_finite()) {
            return Err(LrqrError::param(
                "beta interval",
                format!("need 0 < beta_min <= beta_max, got [{}, {}]", self.beta_min, self.beta_max),
            ));
        }
        for (name, v) in [
            ("step0", self.step0),
            ("tol_stationarity", self.tol_stationarity),
            ("tol_objective", self.tol_objective),
        ] {
            if !(v > T::zero() && v.is_finite()) {
                return Err(LrqrError::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(LrqrError::param("max_outer/max_inner", "must be at least 1"));
        }
        Ok(())
    }
}

/// A fitted threshold `ĥ = <γ, Φ>` with its normalizing scalar `β̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ThresholdModel<T> {
    pub basis: Basis<T>,
    pub gamma: Hypothesis<T>,
    pub beta: T,
    pub lambda: T,
    pub alpha: Alpha<T>,
}

impl<T: Scalar> ThresholdModel<T> {
    /// `ĥ(x)` for a raw input row.
    pub fn threshold(&self, x: &[T]) -> Result<T> {
        crate::basis::eval_h(&self.basis, &self.gamma, x)
    }

    /// `ĥ` on every row of an evaluated basis matrix.
    pub fn thresholds_phi(&self, phi: &Matrix<T>) -> Result<Vec<T>> {
        check_dim(self.gamma.dim(), phi.ncols(), "model vs basis matrix")?;
        Ok(self.gamma.on_rows(phi))
    }
}

/// Which constraints are active at the returned point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryActivity {
    pub gamma_on_ball: bool,
    pub beta_at_min: bool,
    pub beta_at_max: bool,
}

impl BoundaryActivity {
    pub fn any(&self) -> bool {
        self.gamma_on_ball || self.beta_at_min || self.beta_at_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SolveDiagnostics<T> {
    pub outer_iters: usize,
    pub final_objective: T,
    pub stationarity_residual: T,
    /// Objective after initialization, then after every outer iteration.
    pub objective_trace: Vec<T>,
    pub converged: bool,
    /// Radius `B` actually used.
    pub radius: T,
    pub boundary: BoundaryActivity,
}

/// Model plus diagnostics, as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelFile<T> {
    #[serde(flatten)]
    pub model: ThresholdModel<T>,
    pub diagnostics: Option<SolveDiagnostics<T>>,
}

fn check_dim(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected != got {
        return Err(LrqrError::ShapeMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

/// Objective pieces with the S₂/S₃ moments cached.
struct Problem<'a, T> {
    bundle: &'a CalibrationBundle<T>,
    moments: Moments<T>,
    alpha: Alpha<T>,
    lambda: T,
}

impl<'a, T: Scalar> Problem<'a, T> {
    fn new(bundle: &'a CalibrationBundle<T>, alpha: Alpha<T>, lambda: T) -> Self {
        Self {
            bundle,
            moments: bundle.moments(),
            alpha,
            lambda,
        }
    }

    fn n1(&self) -> T {
        T::count(self.bundle.n1())
    }

    fn pinball_mean(&self, h1: &[T]) -> T {
        let scores = self.bundle.s1_scores();
        h1.iter()
            .zip(scores)
            .map(|(&h, &s)| pinball(h, s, self.alpha))
            .sum::<T>()
            / self.n1()
    }

    /// `Ê₃[β²h²] − 2Ê₂[βh]`
    fn regularizer(&self, gamma: &[T], beta: T) -> T {
        beta * beta * self.moments.source_mean_h2(gamma)
            - T::lit(2.0) * beta * self.moments.target_mean_h(gamma)
    }

    fn objective(&self, gamma: &[T], beta: T) -> T {
        let h1 = self.bundle.s1_phi().mul_vec(gamma);
        self.pinball_mean(&h1) + self.lambda * self.regularizer(gamma, beta)
    }

    /// Gradient with the closed-indicator convention for ties.
    fn gradient(&self, gamma: &[T], beta: T) -> (Vec<T>, T) {
        let d = gamma.len();
        let two = T::lit(2.0);
        let mut g = vec![T::zero(); d];
        let phi = self.bundle.s1_phi();
        let scores = self.bundle.s1_scores();
        let level = self.alpha.level();
        for (i, &s) in scores.iter().enumerate() {
            let row = phi.row(i);
            let h = dot(gamma, row);
            let w = if s <= h { T::one() } else { T::zero() } - level;
            axpy(w, row, &mut g);
        }
        let n1 = self.n1();
        g.iter_mut().for_each(|v| *v /= n1);
        let sg = self.moments.source_second_times(gamma);
        let lam = self.lambda;
        for k in 0..d {
            g[k] += two * lam * beta * beta * sg[k] - two * lam * beta * self.moments.target_mean[k];
        }
        let e3 = dot(gamma, &sg);
        let e2 = self.moments.target_mean_h(gamma);
        let gb = two * lam * beta * e3 - two * lam * e2;
        (g, gb)
    }

    /// Unclipped `Ê₂[h]/Ê₃[h²]`, or `None` when `Ê₃[h²] = 0`.
    fn beta_ratio(&self, gamma: &[T]) -> Option<T> {
        let e3 = self.moments.source_mean_h2(gamma);
        if e3 > T::zero() && e3.is_finite() {
            Some(self.moments.target_mean_h(gamma) / e3)
        } else {
            None
        }
    }
}

fn check_model_bundle<T: Scalar>(model: &ThresholdModel<T>, bundle: &CalibrationBundle<T>) -> Result<()> {
    check_dim(model.basis.dim(), model.gamma.dim(), "model gamma vs basis")?;
    check_dim(model.gamma.dim(), bundle.dim(), "model vs bundle dimension")?;
    if !model.gamma.gamma.iter().all(|v| v.is_finite()) || !model.beta.is_finite() {
        return Err(LrqrError::NonFinite("model parameters"));
    }
    Ok(())
}

/// `Ê₁[ℓ_α(h(X),S)] + λ Ê₃[β²h²] − λ Ê₂[2βh]` at the model's `(γ, β, λ)`.
pub fn empirical_objective<T: Scalar>(model: &ThresholdModel<T>, bundle: &CalibrationBundle<T>) -> Result<T> {
    check_model_bundle(model, bundle)?;
    let p = Problem::new(bundle, model.alpha, model.lambda);
    Ok(p.objective(&model.gamma.gamma, model.beta))
}

/// Gradient `(∂γ, ∂β)` of [`empirical_objective`]; pinball ties use `1[s ≤ h] − (1−α)`.
pub fn empirical_gradient<T: Scalar>(
    model: &ThresholdModel<T>,
    bundle: &CalibrationBundle<T>,
) -> Result<(Vec<T>, T)> {
    check_model_bundle(model, bundle)?;
    let p = Problem::new(bundle, model.alpha, model.lambda);
    Ok(p.gradient(&model.gamma.gamma, model.beta))
}

/// Exact minimizer in `β` for fixed `h`: `clip(Ê₂[h]/Ê₃[h²], β_min, β_max)`.
pub fn beta_star<T: Scalar>(
    hyp: &Hypothesis<T>,
    bundle: &CalibrationBundle<T>,
    beta_min: T,
    beta_max: T,
) -> Result<T> {
    check_dim(bundle.dim(), hyp.dim(), "hypothesis vs bundle dimension")?;
    let m = bundle.moments();
    let e3 = m.source_mean_h2(&hyp.gamma);
    if !e3.is_finite() {
        return Err(LrqrError::NonFinite("E3[h^2]"));
    }
    if e3 <= T::zero() {
        return Err(LrqrError::DegenerateHypothesis);
    }
    Ok(clip(m.target_mean_h(&hyp.gamma) / e3, beta_min, beta_max))
}

/// `min_β (Ê₃[β²h²] − 2Ê₂[βh]) = −Ê₂[h]²/Ê₃[h²]` over unrestricted `β`.
pub fn regularizer_value<T: Scalar>(hyp: &Hypothesis<T>, bundle: &CalibrationBundle<T>) -> Result<T> {
    check_dim(bundle.dim(), hyp.dim(), "hypothesis vs bundle dimension")?;
    let m = bundle.moments();
    let e3 = m.source_mean_h2(&hyp.gamma);
    if e3 <= T::zero() {
        return Err(LrqrError::DegenerateHypothesis);
    }
    let e2 = m.target_mean_h(&hyp.gamma);
    Ok(-(e2 * e2) / e3)
}

/// `‖(∂γ, ∂β)‖₂` of the objective on a (held-out) bundle.
pub fn gradient_norm_measure<T: Scalar>(model: &ThresholdModel<T>, heldout: &CalibrationBundle<T>) -> Result<T> {
    let (g, gb) = empirical_gradient(model, heldout)?;
    Ok((dot(&g, &g) + gb * gb).sqrt())
}

#[inline]
fn clip<T: Scalar>(v: T, lo: T, hi: T) -> T {
    v.max(lo).min(hi)
}

/// Distance from zero to the subdifferential of the constrained objective.
///
/// Scores within `1e-7·max(1,|s|)` of `h(x)` are treated as ties whose pinball
/// derivative ranges over `[−(1−α), α]`. The ball's normal cone is included when
/// `‖γ‖ = radius`, and the `β` part is the projected-gradient residual on
/// `[β_min, β_max]`.
pub fn stationarity_residual<T: Scalar>(
    model: &ThresholdModel<T>,
    bundle: &CalibrationBundle<T>,
    radius: T,
    beta_min: T,
    beta_max: T,
) -> Result<T> {
    check_model_bundle(model, bundle)?;
    let p = Problem::new(bundle, model.alpha, model.lambda);
    Ok(residual_inner(&p, &model.gamma.gamma, model.beta, radius, beta_min, beta_max))
}

fn residual_inner<T: Scalar>(p: &Problem<'_, T>, gamma: &[T], beta: T, radius: T, beta_min: T, beta_max: T) -> T {
    let d = gamma.len();
    let two = T::lit(2.0);
    let n1 = p.n1();
    let alpha = p.alpha.value();
    let level = p.alpha.level();
    let phi = p.bundle.s1_phi();
    let scores = p.bundle.s1_scores();

    // fixed part: non-tied pinball derivatives plus the smooth regularizer
    let mut g = vec![T::zero(); d];
    let mut ties: Vec<usize> = Vec::new();
    for (i, &s) in scores.iter().enumerate() {
        let row = phi.row(i);
        let h = dot(gamma, row);
        let tol = T::lit(1e-7) * T::one().max(s.abs());
        if (s - h).abs() <= tol {
            ties.push(i);
        } else if s < h {
            axpy(alpha / n1, row, &mut g);
        } else {
            axpy(-level / n1, row, &mut g);
        }
    }
    let lam = p.lambda;
    let sg = p.moments.source_second_times(gamma);
    for k in 0..d {
        g[k] += two * lam * beta * beta * sg[k] - two * lam * beta * p.moments.target_mean[k];
    }

    // columns with box constraints: ties in [−(1−α), α]/n₁, normal cone t ≥ 0 on γ
    let mut cols: Vec<(Vec<T>, T, T)> = ties
        .iter()
        .map(|&i| (phi.row(i).iter().map(|&v| v / n1).collect(), -level, alpha))
        .collect();
    let gnorm = norm2(gamma);
    if gnorm >= radius * (T::one() - T::lit(1e-9)) && gnorm > T::zero() {
        cols.push((gamma.to_vec(), T::zero(), T::infinity()));
    }
    let mut r = g;
    if !cols.is_empty() {
        let mut coef = vec![T::zero(); cols.len()];
        // start ties at the closed-indicator value so r begins at the convention gradient
        for (c, col) in coef.iter_mut().zip(&cols) {
            if col.2.is_finite() {
                *c = col.2;
                axpy(col.2, &col.0, &mut r);
            }
        }
        let norms: Vec<T> = cols.iter().map(|c| dot(&c.0, &c.0)).collect();
        for _sweep in 0..2000 {
            let mut max_change = T::zero();
            for (j, col) in cols.iter().enumerate() {
                if norms[j] <= T::zero() {
                    continue;
                }
                let target = coef[j] - dot(&r, &col.0) / norms[j];
                let new = clip(target, col.1, col.2);
                let delta = new - coef[j];
                if delta != T::zero() {
                    axpy(delta, &col.0, &mut r);
                    coef[j] = new;
                    max_change = max_change.max(delta.abs() * norms[j].sqrt());
                }
            }
            if max_change <= T::lit(1e-15) {
                break;
            }
        }
    }

    let e3 = dot(gamma, &sg);
    let e2 = p.moments.target_mean_h(gamma);
    let gb = two * lam * beta * e3 - two * lam * e2;
    let rb = beta - clip(beta - gb, beta_min, beta_max);
    (dot(&r, &r) + rb * rb).sqrt()
}

/// Starting point: the split-conformal solution `h ≡ q̂`, where `q̂` is the
/// empirical `(1−α)`-quantile of the labeled scores. Without an intercept
/// column the constant is fitted by least squares on `S₁`.
fn initial_gamma<T: Scalar>(bundle: &CalibrationBundle<T>, basis: &Basis<T>, alpha: Alpha<T>) -> Vec<T> {
    let q = empirical_quantile(bundle.s1_scores(), alpha.level());
    let d = bundle.dim();
    let mut gamma = vec![T::zero(); d];
    if let Some(k) = basis.intercept_index() {
        gamma[k] = q;
        return gamma;
    }
    let phi = bundle.s1_phi();
    let mut gram = phi.second_moment();
    let mean = phi.column_means();
    let ridge = T::lit(1e-10) * (0..d).map(|k| gram[(k, k)]).fold(T::zero(), T::max).max(T::one());
    for k in 0..d {
        gram[(k, k)] += ridge;
    }
    match Cholesky::factor(&gram) {
        Ok(ch) => ch.solve(&mean.iter().map(|&m| m * q).collect::<Vec<_>>()),
        Err(_) => gamma,
    }
}

/// Smallest sample value `v` with `#{s ≤ v}/n ≥ level` (the lower empirical quantile).
pub fn empirical_quantile<T: Scalar>(scores: &[T], level: T) -> T {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    let k = (level * T::count(n)).ceil().to_usize().unwrap_or(n).clamp(1, n);
    v[k - 1]
}

fn project_ball<T: Scalar>(gamma: &mut [T], radius: T) -> bool {
    let nrm = norm2(gamma);
    if nrm > radius {
        let mut scale = radius / nrm;
        gamma.iter_mut().for_each(|g| *g *= scale);
        // rounding can leave the norm a hair above the radius
        while norm2(gamma) > radius {
            scale = T::one() - T::epsilon() * T::lit(4.0);
            gamma.iter_mut().for_each(|g| *g *= scale);
        }
        true
    } else {
        false
    }
}

/// Exact minimization of `F(γ) = Ê₁ℓ_α + ½γᵀQγ − bᵀγ` over the ball, for fixed `β`.
struct ProximalGammaSolver<'p, 'a, T> {
    p: &'p Problem<'a, T>,
    q: Matrix<T>,
    b: Vec<T>,
    rho: T,
    radius: T,
    tol: T,
    max_prox: usize,
    rng: ChaCha8Rng,
}

struct SubSolution<T> {
    gamma: Vec<T>,
}

impl<'p, 'a, T: Scalar> ProximalGammaSolver<'p, 'a, T> {
    fn new(p: &'p Problem<'a, T>, beta: T, radius: T, tol: T, max_prox: usize, seed: u64) -> Self {
        let d = p.bundle.dim();
        let two = T::lit(2.0);
        let mut q = p.moments.source_second.clone();
        let scale = two * p.lambda * beta * beta;
        for a in 0..d {
            for c in 0..d {
                q[(a, c)] *= scale;
            }
        }
        let b: Vec<T> = p
            .moments
            .target_mean
            .iter()
            .map(|&m| two * p.lambda * beta * m)
            .collect();
        // proximal weight relative to the average squared feature norm of S₁
        let phi = p.bundle.s1_phi();
        let avg_sq = phi.iter_rows().map(|r| dot(r, r)).sum::<T>() / p.n1();
        let rho = T::lit(1e-2) * avg_sq.max(T::lit(1e-12));
        Self {
            p,
            q,
            b,
            rho,
            radius,
            tol,
            max_prox,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn block_value(&self, gamma: &[T]) -> T {
        let h1 = self.p.bundle.s1_phi().mul_vec(gamma);
        let qg = self.q.mul_vec(gamma);
        self.p.pinball_mean(&h1) + T::lit(0.5) * dot(gamma, &qg) - dot(&self.b, gamma)
    }

    /// Solves `min F(γ) + ρ/2‖γ − z‖² + μ/2‖γ‖²` by dual coordinate ascent,
    /// warm-started from `duals`.
    fn solve_sub(&mut self, center: &[T], mu: T, duals: &mut [T]) -> Result<SubSolution<T>> {
        let p = self.p;
        let d = center.len();
        let n = p.bundle.n1();
        let nf = p.n1();
        let alpha = p.alpha.value();
        let level = p.alpha.level();
        let phi = p.bundle.s1_phi();
        let scores = p.bundle.s1_scores();

        let mut m = self.q.clone();
        for k in 0..d {
            m[(k, k)] += self.rho + mu;
        }
        let chol = Cholesky::factor(&m)?;
        let c: Vec<T> = self.b.iter().zip(center).map(|(&b, &z)| b + self.rho * z).collect();

        let mut z_rows = Vec::with_capacity(n * d);
        let mut kappa = Vec::with_capacity(n);
        for i in 0..n {
            let zi = chol.solve(phi.row(i));
            kappa.push(dot(phi.row(i), &zi));
            z_rows.extend(zi);
        }

        let rebuild = |duals: &[T]| -> Vec<T> {
            let mut v = c.clone();
            for i in 0..n {
                axpy(duals[i] / nf, phi.row(i), &mut v);
            }
            chol.solve(&v)
        };
        let mut gamma = rebuild(duals);

        // gap tolerance so that ρ‖γ − γ*‖ stays well under the certificate tolerance
        let gap_tol = (self.tol * self.tol / (T::lit(2.0) * (self.rho + mu))).max(T::epsilon() * T::lit(16.0));
        let mut order: Vec<usize> = (0..n).collect();
        for pass in 0..5000 {
            order.shuffle(&mut self.rng);
            for &i in &order {
                let ki = kappa[i];
                if ki <= T::zero() {
                    continue;
                }
                let row = phi.row(i);
                let resid = scores[i] - dot(row, &gamma);
                let new = clip(duals[i] + nf * resid / ki, -alpha, level);
                let delta = new - duals[i];
                if delta != T::zero() {
                    duals[i] = new;
                    axpy(delta / nf, &z_rows[i * d..(i + 1) * d], &mut gamma);
                }
            }
            if pass % 16 == 15 {
                gamma = rebuild(duals);
            }
            let gap = (0..n)
                .map(|i| {
                    let h = dot(phi.row(i), &gamma);
                    pinball(h, scores[i], p.alpha) - duals[i] * (scores[i] - h)
                })
                .sum::<T>()
                / nf;
            if gap <= gap_tol {
                break;
            }
        }
        Ok(SubSolution { gamma })
    }

    /// Proximal subproblem with the ball constraint enforced through its multiplier.
    fn solve_prox(&mut self, center: &[T], duals: &mut [T]) -> Result<Vec<T>> {
        let sol = self.solve_sub(center, T::zero(), duals)?;
        if norm2(&sol.gamma) <= self.radius {
            return Ok(sol.gamma);
        }
        let mut lo = T::zero();
        let mut hi = self.rho.max(T::lit(1e-8));
        let mut best = loop {
            let s = self.solve_sub(center, hi, duals)?;
            if norm2(&s.gamma) <= self.radius {
                break s.gamma;
            }
            lo = hi;
            hi = hi * T::lit(4.0);
            if hi > T::lit(1e30) {
                break s.gamma;
            }
        };
        for _ in 0..60 {
            let mid = T::lit(0.5) * (lo + hi);
            let s = self.solve_sub(center, mid, duals)?;
            let nrm = norm2(&s.gamma);
            if nrm <= self.radius {
                hi = mid;
                best = s.gamma;
            } else {
                lo = mid;
            }
            if (hi - lo) <= T::lit(1e-12) * hi || (self.radius - nrm).abs() <= T::lit(1e-10) * self.radius {
                break;
            }
        }
        project_ball(&mut best, self.radius);
        Ok(best)
    }

    /// Exact KKT solve on the tie set identified by the duals.
    ///
    /// Points whose dual is strictly inside `(−α, 1−α)` are forced onto
    /// `h(x) = s`; the rest keep the pinball slope given by their residual sign.
    /// Returns `None` unless the solution is sign-consistent and feasible.
    /// Active-set refinement of the block minimizer. Points are either tied
    /// (`h_i = s_i`, multiplier free in the box) or pinned to one side of
    /// their kink with a fixed slope.
    fn polish(&self, gamma: &[T], duals: &[T]) -> Option<Vec<T>> {
        let p = self.p;
        let d = gamma.len();
        let nf = p.n1();
        let alpha = p.alpha.value();
        let level = p.alpha.level();
        let phi = p.bundle.s1_phi();
        let scores = p.bundle.s1_scores();
        let margin = T::lit(1e-9);

        // side: Some(slope) for pinned points, None for ties
        let mut side: Vec<Option<T>> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let a = duals[i];
                let r = s - dot(phi.row(i), gamma);
                if a > -alpha + margin && a < level - margin {
                    None
                } else if r > T::zero() {
                    Some(level)
                } else if r < T::zero() {
                    Some(-alpha)
                } else {
                    None
                }
            })
            .collect();
        let mut current = gamma.to_vec();

        for _ in 0..4 * d + 20 {
            let ties: Vec<usize> = (0..side.len()).filter(|&i| side[i].is_none()).collect();
            let k = ties.len();
            if k > d {
                let worst = *ties.iter().max_by(|&&x, &&y| {
                    let rx = (scores[x] - dot(phi.row(x), &current)).abs();
                    let ry = (scores[y] - dot(phi.row(y), &current)).abs();
                    rx.partial_cmp(&ry).unwrap_or(std::cmp::Ordering::Equal)
                })?;
                let r = scores[worst] - dot(phi.row(worst), &current);
                side[worst] = Some(if r >= T::zero() { level } else { -alpha });
                continue;
            }
            let mut rhs = self.b.clone();
            for (i, sl) in side.iter().enumerate() {
                if let Some(sl) = sl {
                    axpy(*sl / nf, phi.row(i), &mut rhs);
                }
            }
            let size = d + k;
            let mut kkt = Matrix::zeros(size, size);
            for a in 0..d {
                for c in 0..d {
                    kkt[(a, c)] = self.q[(a, c)];
                }
            }
            for (j, &i) in ties.iter().enumerate() {
                for a in 0..d {
                    let v = phi[(i, a)];
                    kkt[(a, d + j)] = -v / nf;
                    kkt[(d + j, a)] = v;
                }
            }
            rhs.extend(ties.iter().map(|&i| scores[i]));
            let sol = match lu_solve(&kkt, &rhs) {
                Ok(sol) => sol,
                Err(_) => {
                    // underdetermined: tie the pinned point closest to its kink
                    let next = (0..side.len()).filter(|&i| side[i].is_some()).min_by(|&x, &y| {
                        let rx = (scores[x] - dot(phi.row(x), &current)).abs();
                        let ry = (scores[y] - dot(phi.row(y), &current)).abs();
                        rx.partial_cmp(&ry).unwrap_or(std::cmp::Ordering::Equal)
                    })?;
                    side[next] = None;
                    continue;
                }
            };
            let cand = sol[..d].to_vec();
            if !cand.iter().all(|v| v.is_finite()) {
                return None;
            }

            // multipliers outside the box release their tie
            let mut changed = false;
            for (j, &i) in ties.iter().enumerate() {
                let a = sol[d + j];
                if a < -alpha - margin {
                    side[i] = Some(-alpha);
                    changed = true;
                } else if a > level + margin {
                    side[i] = Some(level);
                    changed = true;
                }
            }
            // pinned points that crossed their kink become ties
            let mut worst: Option<(usize, T)> = None;
            for (i, sl) in side.iter().enumerate() {
                if let Some(sl) = *sl {
                    let r = scores[i] - dot(phi.row(i), &cand);
                    let crossed = (sl == level && r < T::zero()) || (sl == -alpha && r > T::zero());
                    if crossed && worst.map_or(true, |(_, w)| r.abs() > w) {
                        worst = Some((i, r.abs()));
                    }
                }
            }
            if let Some((i, _)) = worst {
                side[i] = None;
                changed = true;
            }
            if !changed {
                return (norm2(&cand) <= self.radius).then_some(cand);
            }
            current = cand;
        }
        None
    }

    fn run(&mut self, start: &[T], duals: &mut [T]) -> Result<Vec<T>> {
        let mut center = start.to_vec();
        for k in 0..self.max_prox {
            let next = self.solve_prox(&center, duals)?;
            let diff: Vec<T> = next.iter().zip(&center).map(|(&a, &b)| a - b).collect();
            let cert = self.rho * norm2(&diff);
            center = next;
                if cert <= self.tol {
                debug!("proximal gamma step converged after {} iterations", k + 1);
                break;
            }
        }
        if let Some(polished) = self.polish(&center, duals) {
            if self.block_value(&polished) <= self.block_value(&center) {
                center = polished;
            }
        }
        Ok(center)
    }
}

/// Projected subgradient on the `γ` block with `η_t = step0/√t` and averaging.
fn subgradient_gamma_step<T: Scalar>(p: &Problem<'_, T>, beta: T, start: &[T], radius: T, step0: T, iters: usize) -> Vec<T> {
    let mut gamma = start.to_vec();
    let mut avg = start.to_vec();
    for t in 1..=iters {
        let (g, _) = p.gradient(&gamma, beta);
        let eta = step0 / T::count(t).sqrt();
        axpy(-eta, &g, &mut gamma);
        project_ball(&mut gamma, radius);
        let w = T::one() / T::count(t + 1);
        for (a, &x) in avg.iter_mut().zip(&gamma) {
            *a += w * (x - *a);
        }
    }
    project_ball(&mut avg, radius);
    // keep whichever candidate is best so the block step never ascends
    [avg, gamma, start.to_vec()]
        .into_iter()
        .map(|c| (p.objective(&c, beta), c))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(_, c)| c)
        .unwrap_or_else(|| start.to_vec())
}

struct Endpoint<T> {
    beta: T,
    // slope as used by regula falsi, halved by the Illinois rule
    eff: T,
    gamma: Vec<T>,
}

fn exact_beta<T: Scalar>(p: &Problem<'_, T>, gamma: &[T], fallback: T, config: &LrqrConfig<T>) -> T {
    p.beta_ratio(gamma)
        .map_or(fallback, |b| clip(b, config.beta_min, config.beta_max))
}

/// Points whose residual `s − h` vanishes up to rounding.
fn exact_ties<T: Scalar>(p: &Problem<'_, T>, gamma: &[T]) -> Vec<usize> {
    let phi = p.bundle.s1_phi();
    p.bundle
        .s1_scores()
        .iter()
        .enumerate()
        .filter(|(i, &s)| (s - dot(phi.row(*i), gamma)).abs() <= T::lit(1e-9) * T::one().max(s.abs()))
        .map(|(i, _)| i)
        .collect()
}

/// Active-set search for a joint first-order point in `(γ, β)`, starting
/// from the tie set `ties`. Non-tied points keep the side they are on at
/// `gamma0` unless they cross their kink, in which case they become ties.
fn joint_polish<T: Scalar>(
    p: &Problem<'_, T>,
    gamma0: &[T],
    beta0: T,
    ties: &[usize],
    radius: T,
    config: &LrqrConfig<T>,
) -> Option<(Vec<T>, T)> {
    if p.lambda <= T::zero() {
        return None;
    }
    let d = gamma0.len();
    let alpha = p.alpha.value();
    let level = p.alpha.level();
    let phi = p.bundle.s1_phi();
    let scores = p.bundle.s1_scores();
    let margin = T::lit(1e-9);

    let mut side: Vec<Option<T>> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let r = s - dot(phi.row(i), gamma0);
            Some(if r > T::zero() { level } else { -alpha })
        })
        .collect();
    for &i in ties {
        side[i] = None;
    }
    let mut start = (gamma0.to_vec(), beta0);
    for _ in 0..2 * d + 10 {
        let ties: Vec<usize> = (0..side.len()).filter(|&i| side[i].is_none()).collect();
        if ties.len() > d + 1 {
            return None;
        }
        let (gamma, mult, beta) = joint_newton(p, &start.0, start.1, &ties, &side, config)?;
        let mut changed = false;
        for (j, &i) in ties.iter().enumerate() {
            if mult[j] < -alpha - margin {
                side[i] = Some(-alpha);
                changed = true;
            } else if mult[j] > level + margin {
                side[i] = Some(level);
                changed = true;
            }
        }
        let mut worst: Option<(usize, T)> = None;
        for (i, sl) in side.iter().enumerate() {
            if let Some(sl) = *sl {
                let r = scores[i] - dot(phi.row(i), &gamma);
                let crossed = (sl == level && r < T::zero()) || (sl == -alpha && r > T::zero());
                if crossed && worst.map_or(true, |(_, w)| r.abs() > w) {
                    worst = Some((i, r.abs()));
                }
            }
        }
        if let Some((i, _)) = worst {
            side[i] = None;
            changed = true;
        }
        if !changed {
            let ok = beta >= config.beta_min && beta <= config.beta_max && norm2(&gamma) <= radius;
            return ok.then_some((gamma, beta));
        }
        start = (gamma, beta.max(config.beta_min).min(config.beta_max));
    }
    None
}

/// Newton on the smooth first-order equations for a fixed tie set. `β` is a
/// free unknown only strictly inside its interval.
fn joint_newton<T: Scalar>(
    p: &Problem<'_, T>,
    gamma0: &[T],
    beta0: T,
    ties: &[usize],
    side: &[Option<T>],
    config: &LrqrConfig<T>,
) -> Option<(Vec<T>, Vec<T>, T)> {
    let d = gamma0.len();
    let k = ties.len();
    let two = T::lit(2.0);
    let nf = p.n1();
    let lam = p.lambda;
    let phi = p.bundle.s1_phi();
    let scores = p.bundle.s1_scores();
    let sigma = &p.moments.source_second;
    let m = &p.moments.target_mean;
    let interior = beta0 > config.beta_min && beta0 < config.beta_max;

    let mut pinned = vec![T::zero(); d];
    for (i, sl) in side.iter().enumerate() {
        if let Some(sl) = *sl {
            axpy(sl / nf, phi.row(i), &mut pinned);
        }
    }
    let size = d + k + usize::from(interior);
    let mut gamma = gamma0.to_vec();
    let mut mult = vec![T::zero(); k];
    let mut beta = beta0;
    let mut first = true;
    for _ in 0..50 {
        let sg = sigma.mul_vec(&gamma);
        let mut f = vec![T::zero(); size];
        for a in 0..d {
            f[a] = two * lam * beta * beta * sg[a] - two * lam * beta * m[a] - pinned[a];
        }
        for (j, &i) in ties.iter().enumerate() {
            axpy(-mult[j] / nf, phi.row(i), &mut f[..d]);
            f[d + j] = dot(phi.row(i), &gamma) - scores[i];
        }
        if interior {
            f[d + k] = beta * dot(&gamma, &sg) - dot(m, &gamma);
        }
        // multipliers start at zero, so always take at least one step
        if !first && norm2(&f) <= T::lit(1e-14) {
            break;
        }
        first = false;
        let mut jac = Matrix::zeros(size, size);
        for a in 0..d {
            for c in 0..d {
                jac[(a, c)] = two * lam * beta * beta * sigma[(a, c)];
            }
        }
        for (j, &i) in ties.iter().enumerate() {
            for a in 0..d {
                let v = phi[(i, a)];
                jac[(a, d + j)] = -v / nf;
                jac[(d + j, a)] = v;
            }
        }
        if interior {
            for a in 0..d {
                jac[(a, d + k)] = T::lit(4.0) * lam * beta * sg[a] - two * lam * m[a];
                jac[(d + k, a)] = two * beta * sg[a] - m[a];
            }
            jac[(d + k, d + k)] = dot(&gamma, &sg);
        }
        let neg: Vec<T> = f.iter().map(|&v| -v).collect();
        let step = lu_solve(&jac, &neg).ok()?;
        for a in 0..d {
            gamma[a] += step[a];
        }
        for j in 0..k {
            mult[j] += step[d + j];
        }
        if interior {
            beta += step[d + k];
        }
        if !beta.is_finite() || gamma.iter().any(|v| !v.is_finite()) {
            return None;
        }
    }
    Some((gamma, mult, beta))
}

fn boundary<T: Scalar>(gamma: &[T], beta: T, radius: T, beta_min: T, beta_max: T) -> BoundaryActivity {
    BoundaryActivity {
        gamma_on_ball: norm2(gamma) >= radius * (T::one() - T::lit(1e-9)),
        beta_at_min: beta <= beta_min,
        beta_at_max: beta >= beta_max,
    }
}

/// Fits `(ĥ, β̂)` by alternating an exact clipped `β` step with a `γ` block step.
///
/// Non-convergence within `max_outer` is not an error: the best iterate is
/// returned with `converged = false`.
pub fn solve<T: Scalar>(
    config: &LrqrConfig<T>,
    bundle: &CalibrationBundle<T>,
    basis: &Basis<T>,
) -> Result<(ThresholdModel<T>, SolveDiagnostics<T>)> {
    config.validate()?;
    check_dim(basis.dim(), bundle.dim(), "basis vs bundle dimension")?;
    let p = Problem::new(bundle, config.alpha, config.lambda);

    let mut gamma = initial_gamma(bundle, basis, config.alpha);
    let radius = config
        .radius
        .unwrap_or_else(|| T::lit(10.0) * norm2(&gamma) + T::lit(10.0));
    project_ball(&mut gamma, radius);
    let fallback_beta = clip(T::one(), config.beta_min, config.beta_max);
    let mut beta = p
        .beta_ratio(&gamma)
        .map_or(fallback_beta, |b| clip(b, config.beta_min, config.beta_max));

    let mut obj = p.objective(&gamma, beta);
    let mut trace = vec![obj];
    let mut duals = vec![T::zero(); bundle.n1()];
    let inner_tol = config.tol_stationarity * T::lit(1e-4);
    let mut converged = false;
    let mut stalls = 0;
    let mut residual = residual_inner(&p, &gamma, beta, radius, config.beta_min, config.beta_max);
    let mut iters = 0;

    // Outer loop: each iteration solves the γ block at a trial β, takes the
    // exact β step and keeps the best pair seen. The trial β chases a sign
    // change of s(β) = ∂_β L(γ*(β), β) = 2λ(β Ê₃[h²] − Ê₂[h]): expanding steps
    // until the sign change is bracketed, Illinois regula falsi afterwards.
    // A joint active-set Newton polish runs whenever the residual is still
    // above tolerance.
    let two = T::lit(2.0);
    let mut work = gamma.clone();
    let mut beta_in = beta;
    let mut lo: Option<Endpoint<T>> = None;
    let mut hi: Option<Endpoint<T>> = None;
    let mut last_side = 0i8;
    let mut prev: Option<(T, T)> = None;
    let mut expand = T::one();
    let mut last_dir = T::zero();
    for t in 1..=config.max_outer {
        iters = t;
        let candidate = match config.gamma_step {
            GammaStep::Proximal => ProximalGammaSolver::new(
                &p,
                beta_in,
                radius,
                inner_tol,
                config.max_inner,
                config.seed.wrapping_add(t as u64),
            )
            .run(&work, &mut duals)?,
            GammaStep::Subgradient => {
                subgradient_gamma_step(&p, beta_in, &work, radius, config.step0, config.max_inner)
            }
        };
        if p.objective(&candidate, beta_in) <= p.objective(&work, beta_in) {
            work = candidate;
        }
        let slope = two * p.lambda * (beta_in * p.moments.source_mean_h2(&work) - p.moments.target_mean_h(&work));
        let beta_out = exact_beta(&p, &work, beta_in, config);

        let before = obj;
        let consider = |g: &[T], b: T, gamma: &mut Vec<T>, beta: &mut T, obj: &mut T, residual: &mut T| {
            let value = p.objective(g, b);
            if value < *obj {
                *gamma = g.to_vec();
                *beta = b;
                *obj = value;
                *residual = residual_inner(&p, gamma, b, radius, config.beta_min, config.beta_max);
            }
        };
        consider(&work, beta_out, &mut gamma, &mut beta, &mut obj, &mut residual);

        let here = Endpoint { beta: beta_in, eff: slope, gamma: work.clone() };
        if slope > T::zero() {
            if last_side == 1 {
                if let Some(e) = lo.as_mut() {
                    e.eff = e.eff / two;
                }
            }
            hi = Some(here);
            last_side = 1;
        } else if slope < T::zero() {
            if last_side == -1 {
                if let Some(e) = hi.as_mut() {
                    e.eff = e.eff / two;
                }
            }
            lo = Some(here);
            last_side = -1;
        }
        if residual > config.tol_stationarity {
            let (g0, b0) = (gamma.clone(), beta);
            let mut tie_sets = vec![exact_ties(&p, &g0)];
            if let (Some(a), Some(b)) = (&lo, &hi) {
                let mut union = exact_ties(&p, &a.gamma);
                union.extend(exact_ties(&p, &b.gamma));
                union.sort_unstable();
                union.dedup();
                tie_sets.push(union);
            }
            for ties in tie_sets {
                if let Some((g, bt)) = joint_polish(&p, &g0, b0, &ties, radius, config) {
                    consider(&g, bt, &mut gamma, &mut beta, &mut obj, &mut residual);
                }
            }
        }

        trace.push(obj);
        if residual <= config.tol_stationarity {
            converged = true;
            break;
        }
        // a shrinking bracket is progress even when the incumbent holds
        let narrowing = match (&lo, &hi) {
            (Some(a), Some(b)) => (b.beta - a.beta).abs() > T::lit(1e-12) * b.beta.abs().max(T::one()),
            _ => false,
        };
        if before - obj < config.tol_objective && !narrowing {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }

        let beta_prev_in = beta_in;
        beta_in = match (&lo, &hi) {
            (Some(a), Some(b)) if a.beta < b.beta => {
                let x = a.beta - a.eff * (b.beta - a.beta) / (b.eff - a.eff);
                if x > a.beta && x < b.beta && x.is_finite() {
                    x
                } else {
                    (a.beta + b.beta) / two
                }
            }
            _ => {
                // secant extrapolation on the slope or a step that doubles
                // while the slope keeps its sign, whichever is longer
                let plain = beta_out - beta_in;
                expand = if plain.signum() == last_dir { expand * two } else { T::one() };
                last_dir = plain.signum();
                let mut len = plain.abs() * expand.min(T::lit(1e6));
                if let Some((b0, g0)) = prev {
                    let dg = slope - g0;
                    if dg * (beta_in - b0) > T::zero() {
                        let step = -slope * (beta_in - b0) / dg;
                        if step * plain > T::zero() {
                            len = len.max(step.abs().min(T::lit(16.0) * plain.abs()));
                        }
                    }
                }
                clip(beta_in + len * plain.signum(), config.beta_min, config.beta_max)
            }
        };
        prev = Some((beta_prev_in, slope));
    }

    let activity = boundary(&gamma, beta, radius, config.beta_min, config.beta_max);
    if activity.any() {
        warn!(
            "LR-QR solution touches the constraint box (ball: {}, beta_min: {}, beta_max: {})",
            activity.gamma_on_ball, activity.beta_at_min, activity.beta_at_max
        );
    }
    let model = ThresholdModel {
        basis: basis.clone(),
        gamma: Hypothesis::new(gamma),
        beta,
        lambda: config.lambda,
        alpha: config.alpha,
    };
    let diagnostics = SolveDiagnostics {
        outer_iters: iters,
        final_objective: obj,
        stationarity_residual: residual,
        objective_trace: trace,
        converged,
        radius,
        boundary: activity,
    };
    Ok((model, diagnostics))
}

/// Minimizer of the `γ` block for a fixed `β` (both steps of [`solve`] reuse this).
pub fn solve_gamma_fixed_beta<T: Scalar>(
    config: &LrqrConfig<T>,
    bundle: &CalibrationBundle<T>,
    basis: &Basis<T>,
    beta: T,
    radius: T,
) -> Result<Hypothesis<T>> {
    config.validate()?;
    check_dim(basis.dim(), bundle.dim(), "basis vs bundle dimension")?;
    let p = Problem::new(bundle, config.alpha, config.lambda);
    let mut start = initial_gamma(bundle, basis, config.alpha);
    project_ball(&mut start, radius);
    let mut duals = vec![T::zero(); bundle.n1()];
    let gamma = ProximalGammaSolver::new(
        &p,
        beta,
        radius,
        config.tol_stationarity * T::lit(0.01),
        config.max_inner.max(2000),
        config.seed,
    )
    .run(&start, &mut duals)?;
    Ok(Hypothesis::new(gamma))
}

/// Comparison of `‖ĥ_β − ĥ_β′‖` against the Lipschitz constant
/// `C₁ = (β_min² λ_min(Σ̂))⁻¹ (2β_max λ_max(Σ̂) B + C_Φ + 4β_max λ_max(Σ̂) B)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LipschitzDiagnostic<T> {
    pub distance: T,
    pub c1: T,
    pub bound: T,
    pub eig_min: T,
    pub eig_max: T,
    pub c_phi: T,
}

impl<T: Scalar> LipschitzDiagnostic<T> {
    pub fn holds(&self) -> bool {
        self.distance <= self.bound
    }
}

pub fn minimizer_lipschitz_diagnostic<T: Scalar>(
    config: &LrqrConfig<T>,
    bundle: &CalibrationBundle<T>,
    basis: &Basis<T>,
    beta: T,
    beta_prime: T,
    radius: T,
) -> Result<LipschitzDiagnostic<T>> {
    let h = solve_gamma_fixed_beta(config, bundle, basis, beta, radius)?;
    let hp = solve_gamma_fixed_beta(config, bundle, basis, beta_prime, radius)?;
    let diff: Vec<T> = h.gamma.iter().zip(&hp.gamma).map(|(&a, &b)| a - b).collect();
    let distance = norm2(&diff);
    let sigma = bundle.s3_phi().second_moment();
    let ev = symmetric_eigenvalues(&sigma);
    let eig_min = ev.first().copied().unwrap_or(T::zero());
    let eig_max = ev.last().copied().unwrap_or(T::zero());
    let c_phi = [bundle.s1_phi(), bundle.s2_phi(), bundle.s3_phi()]
        .iter()
        .flat_map(|m| m.iter_rows().map(norm2))
        .fold(T::zero(), T::max);
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let c1 = (two * config.beta_max * eig_max * radius + c_phi + four * config.beta_max * eig_max * radius)
        / (config.beta_min * config.beta_min * eig_min);
    Ok(LipschitzDiagnostic {
        distance,
        c1,
        bound: c1 * (beta - beta_prime).abs(),
        eig_min,
        eig_max,
        c_phi,
    })
}
