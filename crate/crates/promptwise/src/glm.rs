//! Linear-logistic reward modeling: per-arm maximum-likelihood estimation,
//! design-matrix maintenance with rank-one inverse updates, and the
//! optimistic UCB success-probability estimate.

use nalgebra::{DMatrix, DVector};

use crate::domain::{Context, ObservationSet};
use crate::error::{Error, Result};

/// Ridge penalty added to the log-likelihood so separable data keeps a
/// bounded maximizer.
pub const EPS_RIDGE: f64 = 1e-6;
/// Ridge weight for the optimistic estimator's MLE (penalty 0.5 ||theta||^2,
/// the classical unit ridge). The bandit's early per-arm datasets are tiny
/// and often separable; under a vanishing ridge a single failure on a fresh
/// direction drives the fitted logit to -10 or below, which no reasonable
/// exploration bonus can lift back above the truth, so the arm is silently
/// abandoned for that context. The unit ridge bounds such a logit near -0.57
/// and washes out as data accumulates.
pub const UCB_RIDGE: f64 = 0.5;
/// Regularizer inside the design-matrix inverse so the bonus is defined
/// before the design matrix gains full rank.
pub const EPS_REG: f64 = 1e-6;
/// Newton iteration cap for the MLE.
pub const MAX_ITER: usize = 100;
/// Gradient-norm target for the Newton solver.
pub const GRAD_TOL: f64 = 1e-8;
/// Largest per-observation score residual accepted as converged when the
/// iteration cap is hit; the check scales with the dataset because the
/// score is a sum of that many O(1) terms.
pub const RESIDUAL_TOL: f64 = 1e-6;
/// Largest Newton step length per iteration. Near-separable data has
/// directions of almost-zero curvature; an uncapped solve along one would
/// teleport the iterate deep into saturated territory.
pub const STEP_CAP: f64 = 30.0;

const SIGMOID_CLAMP: f64 = 1e-12;

/// Logistic function clamped to [1e-12, 1 - 1e-12]; the clamp keeps cost /
/// probability ratios finite on the prediction path.
pub fn sigmoid(z: f64) -> f64 {
    let v = 1.0 / (1.0 + (-z).exp());
    v.clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
}

/// ln(1 + e^z) without overflow; exact even where the sigmoid saturates.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Unclamped logistic value for the fitting path. It must stay consistent
/// with `softplus` so the score is the exact gradient of the
/// log-likelihood; the clamped `sigmoid` would flatten the objective in
/// saturated regions and stall the line search there.
pub(crate) fn mu_exact(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Penalized log-likelihood: sum of r log mu + (1-r) log(1-mu) minus
/// eps_ridge * ||theta||^2, with the log terms evaluated as -softplus so
/// saturated observations keep their true (finite, nonflat) contribution.
pub fn log_likelihood(data: &ObservationSet, theta: &[f64], eps_ridge: f64) -> f64 {
    let mut ll = 0.0;
    for obs in data.iter() {
        let z = obs.context.dot(theta);
        ll -= if obs.reward {
            softplus(-z)
        } else {
            softplus(z)
        };
    }
    ll - eps_ridge * theta.iter().map(|t| t * t).sum::<f64>()
}

/// Score (gradient of the penalized log-likelihood):
/// sum (r - mu(x' theta)) x - 2 eps_ridge theta.
pub fn score(data: &ObservationSet, theta: &[f64], eps_ridge: f64) -> Vec<f64> {
    let d = theta.len();
    let mut g = vec![0.0; d];
    for obs in data.iter() {
        let resid = (if obs.reward { 1.0 } else { 0.0 }) - mu_exact(obs.context.dot(theta));
        for (gi, xi) in g.iter_mut().zip(obs.context.features()) {
            *gi += resid * xi;
        }
    }
    for (gi, ti) in g.iter_mut().zip(theta) {
        *gi -= 2.0 * eps_ridge * ti;
    }
    g
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Maximum-likelihood weights for a binary logistic model, solved by damped
/// Newton iteration on the concave penalized log-likelihood. Deterministic
/// given the dataset; `warm` seeds the iteration.
pub fn fit_mle(data: &ObservationSet, eps_ridge: f64, warm: Option<&[f64]>) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::State("fit_mle requires a nonempty dataset".into()));
    }
    let d = data.dim().expect("nonempty dataset has a dimension");
    let mut theta: Vec<f64> = match warm {
        Some(w) if w.len() == d => w.to_vec(),
        _ => vec![0.0; d],
    };

    for _ in 0..MAX_ITER {
        let g = score(data, &theta, eps_ridge);
        if norm2(&g) <= GRAD_TOL {
            return Ok(theta);
        }

        // Newton direction: (sum mu'(x'theta) x x' + 2 eps_ridge I) delta = g.
        // The tiny jitter keeps the solve well-posed when the data is
        // rank-deficient and eps_ridge is zero.
        let mut h = DMatrix::<f64>::zeros(d, d);
        for obs in data.iter() {
            let mu = mu_exact(obs.context.dot(&theta));
            let w = mu * (1.0 - mu);
            let x = obs.context.features();
            for i in 0..d {
                for j in 0..d {
                    h[(i, j)] += w * x[i] * x[j];
                }
            }
        }
        for i in 0..d {
            h[(i, i)] += 2.0 * eps_ridge + 1e-12;
        }
        let gv = DVector::from_column_slice(&g);
        let mut delta = h
            .cholesky()
            .map(|c| c.solve(&gv))
            .ok_or_else(|| Error::Numerical("logistic Hessian factorization failed".into()))?;
        let dn = delta.norm();
        if dn > STEP_CAP {
            delta *= STEP_CAP / dn;
        }
        let mut slope: f64 = g.iter().zip(delta.iter()).map(|(a, b)| a * b).sum();
        if slope <= 0.0 {
            // Rounding in a near-singular solve can spoil the direction;
            // fall back to plain (capped) gradient ascent.
            delta = gv.clone();
            let gn = delta.norm();
            if gn > STEP_CAP {
                delta *= STEP_CAP / gn;
            }
            slope = g.iter().zip(delta.iter()).map(|(a, b)| a * b).sum();
        }

        // Backtracking line search (Armijo) on the penalized log-likelihood.
        // Near the optimum the true improvement of a full Newton step drops
        // below the rounding noise of evaluating a sum of n terms, so the
        // acceptance test grants a noise allowance; without it every step is
        // rejected and the iteration freezes just above the tolerance.
        let ll0 = log_likelihood(data, &theta, eps_ridge);
        let noise = 4.0 * f64::EPSILON * (1.0 + ll0.abs()) * (data.len() as f64).sqrt().max(1.0);
        let mut step = 1.0;
        let mut accepted = false;
        while step >= 1e-10 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(delta.iter())
                .map(|(t, dl)| t + step * dl)
                .collect();
            if log_likelihood(data, &cand, eps_ridge) >= ll0 + 1e-4 * step * slope - noise {
                theta = cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No representable improvement in this direction; stop and let
            // the residual check decide.
            break;
        }
    }

    let residual = norm2(&score(data, &theta, eps_ridge));
    if residual <= RESIDUAL_TOL * (data.len() as f64) {
        Ok(theta)
    } else {
        Err(Error::Numerical(format!(
            "MLE did not converge after {MAX_ITER} iterations; score residual {residual:.3e} \
             (n={}, theta_norm={:.3e})",
            data.len(),
            norm2(&theta)
        )))
    }
}

/// Per-arm logistic reward model with cached design-matrix state.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    theta_hat: DVector<f64>,
    // V = sum x x' over observed contexts (d x d).
    design: DMatrix<f64>,
    // (V + eps_reg I)^{-1}, maintained by Sherman-Morrison updates.
    design_inv: DMatrix<f64>,
    num_obs: usize,
    eps_reg: f64,
}

impl LogisticModel {
    pub fn new(d: usize, eps_reg: f64) -> LogisticModel {
        assert!(d >= 1, "model dimension must be >= 1");
        assert!(eps_reg > 0.0, "eps_reg must be positive");
        LogisticModel {
            theta_hat: DVector::zeros(d),
            design: DMatrix::zeros(d, d),
            design_inv: DMatrix::identity(d, d) / eps_reg,
            num_obs: 0,
            eps_reg,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn num_obs(&self) -> usize {
        self.num_obs
    }

    pub fn theta_hat(&self) -> &[f64] {
        self.theta_hat.as_slice()
    }

    pub fn design_matrix(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn set_theta(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.dim(), "theta dimension mismatch");
        self.theta_hat = DVector::from_column_slice(theta);
    }

    /// Adds x x' to the design matrix and updates the cached inverse by the
    /// Sherman-Morrison identity; the inverse is recomputed from scratch
    /// every 256 observations to stop rounding drift. The caller refits
    /// theta_hat afterwards.
    pub fn add_observation(&mut self, x: &Context) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::Argument(format!(
                "observation dimension {} does not match model dimension {}",
                x.dim(),
                self.dim()
            )));
        }
        let xv = DVector::from_column_slice(x.features());
        self.design += &xv * xv.transpose();
        self.num_obs += 1;

        if self.num_obs.is_multiple_of(256) {
            self.recompute_inverse()?;
        } else {
            // (A + x x')^{-1} = A^{-1} - A^{-1} x x' A^{-1} / (1 + x' A^{-1} x)
            let ax = &self.design_inv * &xv;
            let denom = 1.0 + xv.dot(&ax);
            self.design_inv -= (&ax * ax.transpose()) / denom;
        }
        Ok(())
    }

    fn recompute_inverse(&mut self) -> Result<()> {
        let d = self.dim();
        let reg = &self.design + DMatrix::identity(d, d) * self.eps_reg;
        self.design_inv = reg
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::Numerical("design matrix factorization failed".into()))?;
        Ok(())
    }

    /// Optimistic success-probability estimate
    /// mu(x' theta_hat + alpha * sqrt(x' (V + eps_reg I)^{-1} x)).
    pub fn ucb_estimate(&self, x: &Context, alpha: f64) -> Result<f64> {
        if x.dim() != self.dim() {
            return Err(Error::Argument(format!(
                "context dimension {} does not match model dimension {}",
                x.dim(),
                self.dim()
            )));
        }
        let xv = DVector::from_column_slice(x.features());
        let quad = xv.dot(&(&self.design_inv * &xv)).max(0.0);
        Ok(sigmoid(xv.dot(&self.theta_hat) + alpha * quad.sqrt()))
    }

    /// Max elementwise deviation of design_inv * (V + eps_reg I) from the
    /// identity; exposed for invariant checks.
    pub fn inverse_consistency_error(&self) -> f64 {
        let d = self.dim();
        let reg = &self.design + DMatrix::identity(d, d) * self.eps_reg;
        let prod = &self.design_inv * reg;
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - target).abs());
            }
        }
        worst
    }
}
