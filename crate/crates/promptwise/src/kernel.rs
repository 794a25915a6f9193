//! Kernelized success-probability prediction: RBF kernel, incremental
//! Gram/Cholesky state, regularized kernel logistic regression, and the
//! posterior-variance exploration bonus.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::domain::Context;
use crate::error::{Error, Result};
use crate::glm::{mu_exact, sigmoid, softplus};

/// Newton iteration cap for the KLR fit.
pub const MAX_ITER: usize = 100;
/// Gradient-norm target for the Newton solver.
pub const GRAD_TOL: f64 = 1e-8;
/// Largest per-point gradient norm accepted as converged when the
/// iteration cap is hit; the gradient is a sum of that many O(1) terms.
pub const RESIDUAL_TOL: f64 = 1e-6;
/// Largest Newton step length per iteration; duplicate support points make
/// the Gram matrix singular, and an uncapped solve along a null direction
/// would fling the weights arbitrarily far.
pub const STEP_CAP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Rbf,
}

/// Kernel family and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub sigma: f64,
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> KernelSpec {
        assert!(sigma > 0.0, "sigma must be positive");
        KernelSpec {
            kind: KernelKind::Rbf,
            sigma,
        }
    }
}

/// k(x, y) = exp(-||x - y||^2 / (2 sigma^2)).
pub fn kernel_eval(spec: &KernelSpec, x: &Context, y: &Context) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::Argument(format!(
            "kernel arguments have dimensions {} and {}",
            x.dim(),
            y.dim()
        )));
    }
    match spec.kind {
        KernelKind::Rbf => {
            let sq: f64 = x
                .features()
                .iter()
                .zip(y.features())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Ok((-sq / (2.0 * spec.sigma * spec.sigma)).exp())
        }
    }
}

/// Kernel logistic regression state for one arm: support set, labels,
/// weights, Gram matrix, and the lower Cholesky factor of (K + beta I).
#[derive(Debug, Clone)]
pub struct KlrState {
    spec: KernelSpec,
    beta: f64,
    points: Vec<Context>,
    rewards: Vec<bool>,
    weights: Vec<f64>,
    gram: DMatrix<f64>,
    chol: DMatrix<f64>,
    /// Total points offered, including any dropped by the support cap.
    seen: usize,
}

impl KlrState {
    pub fn new(spec: KernelSpec, beta: f64) -> KlrState {
        assert!(beta > 0.0, "beta must be positive");
        KlrState {
            spec,
            beta,
            points: Vec::new(),
            rewards: Vec::new(),
            weights: Vec::new(),
            gram: DMatrix::zeros(0, 0),
            chol: DMatrix::zeros(0, 0),
            seen: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Appends one support point, growing the Cholesky factor of
    /// (K + beta I) by a bordered update: solve L v = k_new, then the new
    /// diagonal entry is sqrt(k(x,x) + beta - ||v||^2).
    pub fn add_point(&mut self, x: Context, reward: bool) -> Result<()> {
        if let Some(first) = self.points.first() {
            if first.dim() != x.dim() {
                return Err(Error::Argument(format!(
                    "support dimension {} does not match new point dimension {}",
                    first.dim(),
                    x.dim()
                )));
            }
        }
        let n = self.len();
        let mut k_new = DVector::zeros(n);
        for i in 0..n {
            k_new[i] = kernel_eval(&self.spec, &self.points[i], &x)?;
        }
        let k_self = kernel_eval(&self.spec, &x, &x)?;

        let v = solve_lower(&self.chol, &k_new);
        let diag_sq = k_self + self.beta - v.dot(&v);
        if diag_sq <= 0.0 {
            return Err(Error::Numerical(format!(
                "bordered Cholesky update lost positive definiteness (pivot {diag_sq:.3e})"
            )));
        }

        let mut gram = self.gram.clone().insert_row(n, 0.0).insert_column(n, 0.0);
        let mut chol = self.chol.clone().insert_row(n, 0.0).insert_column(n, 0.0);
        for i in 0..n {
            gram[(n, i)] = k_new[i];
            gram[(i, n)] = k_new[i];
            chol[(n, i)] = v[i];
        }
        gram[(n, n)] = k_self;
        chol[(n, n)] = diag_sq.sqrt();

        self.gram = gram;
        self.chol = chol;
        self.points.push(x);
        self.rewards.push(reward);
        self.weights.push(0.0);
        self.seen += 1;
        Ok(())
    }

    /// Support-capped insertion: below the cap this is `add_point`; at the
    /// cap it keeps a uniform subsample of everything seen by reservoir
    /// replacement, rebuilding the factorization when a slot changes.
    pub fn add_point_capped(
        &mut self,
        x: Context,
        reward: bool,
        cap: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        if self.len() < cap {
            return self.add_point(x, reward);
        }
        self.seen += 1;
        let slot = rng.gen_range(0..self.seen);
        if slot >= cap {
            return Ok(());
        }
        self.points[slot] = x;
        self.rewards[slot] = reward;
        self.weights[slot] = 0.0;
        self.rebuild()
    }

    /// Recomputes the Gram matrix and factorization from the support set.
    fn rebuild(&mut self) -> Result<()> {
        let n = self.len();
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let k = kernel_eval(&self.spec, &self.points[i], &self.points[j])?;
                gram[(i, j)] = k;
                gram[(j, i)] = k;
            }
        }
        let reg = &gram + DMatrix::identity(n, n) * self.beta;
        let chol = reg
            .cholesky()
            .ok_or_else(|| Error::Numerical("K + beta I factorization failed".into()))?;
        self.gram = gram;
        self.chol = chol.l();
        Ok(())
    }

    /// Regularized negative log-likelihood
    /// l(w) = -sum[r log mu(s) + (1-r) log(1-mu(s))] + beta w' K w, s = K w,
    /// with the log terms evaluated as softplus so saturated scores keep
    /// their true (finite, nonflat) contribution.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let wv = DVector::from_column_slice(w);
        let s = &self.gram * &wv;
        let mut nll = 0.0;
        for i in 0..self.len() {
            nll += if self.rewards[i] {
                softplus(-s[i])
            } else {
                softplus(s[i])
            };
        }
        nll + self.beta * wv.dot(&(&self.gram * &wv))
    }

    /// Gradient of the objective: K (mu(s) - r + 2 beta w).
    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let wv = DVector::from_column_slice(w);
        let s = &self.gram * &wv;
        let mut inner = DVector::zeros(self.len());
        for i in 0..self.len() {
            let r = if self.rewards[i] { 1.0 } else { 0.0 };
            inner[i] = mu_exact(s[i]) - r + 2.0 * self.beta * wv[i];
        }
        (&self.gram * inner).as_slice().to_vec()
    }

    /// Fits the weights by damped Newton iteration, warm-started from the
    /// current weights. The objective is convex, so convergence is checked
    /// purely on the gradient norm.
    pub fn fit(&mut self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::State("fit_klr requires at least one point".into()));
        }
        let n = self.len();
        let mut w = self.weights.clone();

        for _ in 0..MAX_ITER {
            let g = self.gradient(&w);
            if norm2(&g) <= GRAD_TOL {
                self.weights = w;
                return Ok(());
            }

            let wv = DVector::from_column_slice(&w);
            let s = &self.gram * &wv;
            let mut d = DVector::zeros(n);
            for i in 0..n {
                let mu = mu_exact(s[i]);
                d[i] = mu * (1.0 - mu);
            }
            // H = K diag(d) K + 2 beta K, plus a jitter that keeps the solve
            // well-posed when duplicate support points make K singular. The
            // jitter scales with the mean diagonal: elimination rounding in
            // the factorization grows with ||H||, and a fixed 1e-12 gets
            // swamped once the support holds a few hundred near-duplicates.
            let mut h = &self.gram * DMatrix::from_diagonal(&d) * &self.gram
                + &self.gram * (2.0 * self.beta);
            let jitter = 1e-10 * (h.trace() / n as f64).max(1.0) + 1e-12;
            for i in 0..n {
                h[(i, i)] += jitter;
            }
            let gv = DVector::from_column_slice(&g);
            let mut delta = h
                .cholesky()
                .map(|c| c.solve(&gv))
                .ok_or_else(|| Error::Numerical("KLR Hessian factorization failed".into()))?;
            let dn = delta.norm();
            if dn > STEP_CAP {
                delta *= STEP_CAP / dn;
            }
            let mut slope: f64 = g.iter().zip(delta.iter()).map(|(a, b)| a * b).sum();
            if slope <= 0.0 {
                // Rounding in a near-singular solve can spoil the direction;
                // fall back to plain (capped) gradient descent.
                delta = gv.clone();
                let gn = delta.norm();
                if gn > STEP_CAP {
                    delta *= STEP_CAP / gn;
                }
                slope = g.iter().zip(delta.iter()).map(|(a, b)| a * b).sum();
            }

            // Armijo backtracking with a rounding-noise allowance: near the
            // optimum the true decrease of a full Newton step is smaller
            // than the noise of summing n objective terms, and rejecting
            // those steps would freeze the iteration above the tolerance.
            let obj0 = self.objective(&w);
            let noise = 4.0 * f64::EPSILON * (1.0 + obj0.abs()) * (n as f64).sqrt().max(1.0);
            let mut step = 1.0;
            let mut accepted = false;
            while step >= 1e-10 {
                let cand: Vec<f64> = w
                    .iter()
                    .zip(delta.iter())
                    .map(|(wi, di)| wi - step * di)
                    .collect();
                if self.objective(&cand) <= obj0 - 1e-4 * step * slope + noise {
                    w = cand;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                // No representable improvement in this direction; stop and
                // let the residual check decide.
                break;
            }
        }

        let residual = norm2(&self.gradient(&w));
        self.weights = w;
        if residual <= RESIDUAL_TOL * (n as f64) {
            Ok(())
        } else {
            Err(Error::Numerical(format!(
                "KLR did not converge after {MAX_ITER} iterations; gradient norm {residual:.3e} \
                 (n={n})"
            )))
        }
    }

    /// Kernel expansion score sum_i w_i k(x_i, x).
    pub fn score(&self, x: &Context) -> Result<f64> {
        let mut s = 0.0;
        for (p, w) in self.points.iter().zip(&self.weights) {
            s += w * kernel_eval(&self.spec, p, x)?;
        }
        Ok(s)
    }

    /// Posterior-variance bonus
    /// B(x|D) = beta^{-1/2} (k(x,x) - k_x' (K + beta I)^{-1} k_x)^{1/2},
    /// computed with two triangular solves against the Cholesky factor.
    /// An empty support yields beta^{-1/2} sqrt(k(x,x)).
    pub fn exploration_bonus(&self, x: &Context) -> Result<f64> {
        let k_self = kernel_eval(&self.spec, x, x)?;
        if self.is_empty() {
            return Ok(k_self.sqrt() / self.beta.sqrt());
        }
        let n = self.len();
        let mut k_x = DVector::zeros(n);
        for i in 0..n {
            k_x[i] = kernel_eval(&self.spec, &self.points[i], x)?;
        }
        let v = solve_lower(&self.chol, &k_x);
        let u = solve_lower_transpose(&self.chol, &v);
        let quad = k_x.dot(&u);
        let arg = k_self - quad;
        if arg < -1e-10 {
            return Err(Error::Numerical(format!(
                "exploration bonus interior value {arg:.3e} is negative beyond tolerance"
            )));
        }
        Ok(arg.max(0.0).sqrt() / self.beta.sqrt())
    }
}

/// Prediction mu(score + alpha * bonus), clamped like the GLM sigmoid.
pub fn klr_predict(state: &KlrState, x: &Context, alpha: f64, bonus: f64) -> Result<f64> {
    Ok(sigmoid(state.score(x)? + alpha * bonus))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Forward substitution: solves L y = b for lower-triangular L.
fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * y[j];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Back substitution: solves L' y = b for lower-triangular L.
fn solve_lower_transpose(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut y = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in (i + 1)..n {
            s -= l[(j, i)] * y[j];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::normalize_context;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(v: &[f64]) -> Context {
        normalize_context(v).unwrap()
    }

    fn random_ctx(rng: &mut ChaCha8Rng, d: usize) -> Context {
        let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ctx(&raw)
    }

    #[test]
    fn kernel_eval_worked_values() {
        let spec = KernelSpec::rbf(3.0);
        let x = ctx(&[0.5, 0.1]);
        assert_eq!(kernel_eval(&spec, &x, &x).unwrap(), 1.0);

        // Distance equal to sigma gives exponent -1/2. Unit-ball contexts
        // at distance 1 with sigma = 1 exercise exactly that case.
        let a = Context::new(vec![0.0, 0.0]).unwrap();
        let b = Context::new(vec![1.0, 0.0]).unwrap();
        let spec1 = KernelSpec::rbf(1.0);
        let got = kernel_eval(&spec1, &a, &b).unwrap();
        assert!((got - (-0.5_f64).exp()).abs() < 1e-9);
        assert!((got - 0.606531).abs() < 1e-6);

        let y = ctx(&[0.2, -0.3]);
        assert_eq!(
            kernel_eval(&spec, &x, &y).unwrap(),
            kernel_eval(&spec, &y, &x).unwrap()
        );
    }

    #[test]
    fn kernel_eval_dimension_mismatch() {
        let spec = KernelSpec::rbf(3.0);
        let x = ctx(&[0.5, 0.1]);
        let y = ctx(&[0.5]);
        assert!(matches!(
            kernel_eval(&spec, &x, &y),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn fit_single_point_matches_bisection_oracle() {
        // One support point with reward 1 and beta = 1 reduces the
        // stationarity condition to g(w) = 2w - (1 - mu(w)) = 0 because
        // k(x,x) = 1. Solve g by bisection as an independent oracle.
        let g = |w: f64| 2.0 * w - (1.0 - sigmoid(w));
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        assert!(g(lo) < 0.0 && g(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);

        let mut state = KlrState::new(KernelSpec::rbf(3.0), 1.0);
        state.add_point(ctx(&[0.3, 0.4]), true).unwrap();
        state.fit().unwrap();
        assert!(
            (state.weights()[0] - root).abs() < 1e-6,
            "fit {} vs oracle root {root}",
            state.weights()[0]
        );
        // Pin the oracle's own value so a broken bisection cannot hide.
        assert!((root - 0.222330).abs() < 1e-5, "root = {root}");
    }

    #[test]
    fn fit_symmetric_labels_predict_half() {
        let x = ctx(&[0.2, 0.7]);
        let mut state = KlrState::new(KernelSpec::rbf(3.0), 1.0);
        state.add_point(x.clone(), true).unwrap();
        state.add_point(x.clone(), false).unwrap();
        state.fit().unwrap();
        assert!(state.score(&x).unwrap().abs() < 1e-6);
        assert!((klr_predict(&state, &x, 0.0, 0.0).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn fit_objective_not_worse_than_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let mut state = KlrState::new(KernelSpec::rbf(3.0), 1.0);
            let n = rng.gen_range(1..12);
            for _ in 0..n {
                let x = random_ctx(&mut rng, 3);
                let r = rng.gen_bool(0.5);
                state.add_point(x, r).unwrap();
            }
            state.fit().unwrap();
            let zeros = vec![0.0; state.len()];
            assert!(state.objective(state.weights()) <= state.objective(&zeros) + 1e-12);
            assert!(norm2(&state.gradient(state.weights())) <= RESIDUAL_TOL);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mut state = KlrState::new(KernelSpec::rbf(3.0), 1.0);
            let n = rng.gen_range(1..8);
            for _ in 0..n {
                state
                    .add_point(random_ctx(&mut rng, 2), rng.gen_bool(0.5))
                    .unwrap();
            }
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = state.gradient(&w);
            let h = 1e-5;
            for i in 0..n {
                let mut plus = w.clone();
                plus[i] += h;
                let mut minus = w.clone();
                minus[i] -= h;
                let fd = (state.objective(&plus) - state.objective(&minus)) / (2.0 * h);
                let scale = fd.abs().max(1.0);
                assert!(
                    (g[i] - fd).abs() / scale < 1e-4,
                    "component {i}: analytic {} vs fd {fd}",
                    g[i]
                );
            }
        }
    }

    #[test]
    // The six-digit literal is the frozen worked value this test pins.
    #[allow(clippy::approx_constant)]
    fn bonus_worked_values() {
        let spec = KernelSpec::rbf(3.0);
        let x = ctx(&[0.1, 0.2]);

        let empty = KlrState::new(spec, 1.0);
        assert!((empty.exploration_bonus(&x).unwrap() - 1.0).abs() < 1e-12);

        let mut one = KlrState::new(spec, 1.0);
        one.add_point(x.clone(), true).unwrap();
        let b1 = one.exploration_bonus(&x).unwrap();
        assert!((b1 - (0.5_f64).sqrt()).abs() < 1e-9, "b1 = {b1}");
        assert!((b1 - 0.707107).abs() < 1e-6);

        let mut two = one.clone();
        two.add_point(x.clone(), false).unwrap();
        let b2 = two.exploration_bonus(&x).unwrap();
        assert!((b2 - (1.0_f64 / 3.0).sqrt()).abs() < 1e-9, "b2 = {b2}");
        assert!((b2 - 0.577350).abs() < 1e-6);
    }

    #[test]
    fn bonus_monotone_under_support_growth() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let mut state = KlrState::new(KernelSpec::rbf(3.0), 1.0);
            let n = rng.gen_range(0..10);
            for _ in 0..n {
                state
                    .add_point(random_ctx(&mut rng, 3), rng.gen_bool(0.5))
                    .unwrap();
            }
            let query = random_ctx(&mut rng, 3);
            let before = state.exploration_bonus(&query).unwrap();
            state
                .add_point(random_ctx(&mut rng, 3), rng.gen_bool(0.5))
                .unwrap();
            let after = state.exploration_bonus(&query).unwrap();
            assert!(
                after <= before + 1e-9,
                "bonus rose from {before} to {after}"
            );
            assert!((0.0..=1.0 + 1e-12).contains(&after));
        }
    }

    #[test]
    fn incremental_cholesky_matches_from_scratch() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = KlrState::new(KernelSpec::rbf(3.0), 1.0);
        for _ in 0..200 {
            state
                .add_point(random_ctx(&mut rng, 3), rng.gen_bool(0.5))
                .unwrap();
        }
        let n = state.len();
        let reg = state.gram() + DMatrix::identity(n, n) * state.beta();
        let scratch = reg.clone().cholesky().expect("PD").l();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((state.chol()[(i, j)] - scratch[(i, j)]).abs());
            }
        }
        assert!(worst < 1e-8, "max deviation {worst}");

        // chol chol' = gram + beta I within 1e-8.
        let prod = state.chol() * state.chol().transpose();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((prod[(i, j)] - reg[(i, j)]).abs());
            }
        }
        assert!(worst < 1e-8, "factor product deviation {worst}");
    }

    #[test]
    fn gram_invariants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut state = KlrState::new(KernelSpec::rbf(3.0), 1.0);
        for _ in 0..30 {
            state
                .add_point(random_ctx(&mut rng, 4), rng.gen_bool(0.5))
                .unwrap();
        }
        let g = state.gram();
        for i in 0..state.len() {
            assert_eq!(g[(i, i)], 1.0);
            for j in 0..state.len() {
                assert!(g[(i, j)] > 0.0 && g[(i, j)] <= 1.0);
                assert_eq!(g[(i, j)], g[(j, i)]);
            }
        }
    }

    #[test]
    fn support_cap_bounds_len() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut state = KlrState::new(KernelSpec::rbf(3.0), 1.0);
        for _ in 0..50 {
            let x = random_ctx(&mut rng, 2);
            let r = rng.gen_bool(0.5);
            state.add_point_capped(x, r, 8, &mut rng).unwrap();
            assert!(state.len() <= 8);
        }
        assert_eq!(state.len(), 8);
        state.fit().unwrap();
    }

    #[test]
    fn predict_empty_support_is_half() {
        let state = KlrState::new(KernelSpec::rbf(3.0), 1.0);
        let x = ctx(&[0.4, 0.1]);
        assert_eq!(klr_predict(&state, &x, 0.0, 0.0).unwrap(), 0.5);
        // Monotone in bonus.
        let lo = klr_predict(&state, &x, 1.0, 0.1).unwrap();
        let hi = klr_predict(&state, &x, 1.0, 0.9).unwrap();
        assert!(hi >= lo);
    }
}
