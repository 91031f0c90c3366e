//! Temperature scaling: fit a single temperature on validation logits by
//! minimizing cross-entropy, then divide logits by it.
//!
//! The fit works in the inverse temperature `beta = 1/tau`. In that
//! parametrization the mean loss
//!
//! ```text
//! L(beta) = mean_i [ logsumexp(beta * z_i) - beta * z_i[y_i] ]
//! ```
//!
//! has `L'(beta) = mean_i [ E_s[z_i] - z_i[y_i] ]` and
//! `L''(beta) = mean_i Var_s[z_i]`, with `s = softmax(beta * z_i)`. The second
//! derivative is a mean of variances, so `L` is convex and Newton's method
//! with a bracketing safeguard finds the minimizer on `[beta_min, beta_max]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::EvalTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub beta_min: f64,
    pub beta_max: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { beta_min: 1e-3, beta_max: 1e3, grad_tol: 1e-10, max_iters: 100 }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        let ok = self.beta_min > 0.0
            && self.beta_min < self.beta_max
            && self.beta_max.is_finite()
            && self.grad_tol > 0.0
            && self.max_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid fit options {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    BoundaryLow,
    BoundaryHigh,
    /// Every row has constant logits; any temperature is optimal.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub tau: f64,
    pub beta: f64,
    pub val_loss_before: f64,
    pub val_loss_after: f64,
    pub iterations: usize,
    pub status: FitStatus,
}

/// Mean tempered loss and its first two derivatives with respect to `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperedObjective {
    pub value: f64,
    pub grad: f64,
    pub hess: f64,
}

pub fn tempered_objective(t: &EvalTable, beta: f64) -> TemperedObjective {
    let (mut value, mut grad, mut hess) = (0.0, 0.0, 0.0);
    let mut w = vec![0.0; t.c()];
    for (z, &y) in t.rows().zip(t.labels()) {
        let m = z.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(beta * v));
        let mut total = 0.0;
        for (wk, &zk) in w.iter_mut().zip(z) {
            *wk = (beta * zk - m).exp();
            total += *wk;
        }
        let mean = w.iter().zip(z).map(|(wk, zk)| wk * zk).sum::<f64>() / total;
        let var = w.iter().zip(z).map(|(wk, zk)| wk * (zk - mean).powi(2)).sum::<f64>() / total;
        let zy = z[y as usize];
        value += m + total.ln() - beta * zy;
        grad += mean - zy;
        hess += var;
    }
    let n = t.n() as f64;
    TemperedObjective { value: value / n, grad: grad / n, hess: hess / n }
}

fn all_rows_constant(t: &EvalTable) -> bool {
    t.rows().all(|r| r.iter().all(|&v| v == r[0]))
}

pub fn fit_temperature(val: &EvalTable, opts: &FitOptions) -> Result<TemperatureFit> {
    opts.validate()?;
    let before = tempered_objective(val, 1.0).value;
    let finish = |beta: f64, iterations: usize, status: FitStatus| TemperatureFit {
        tau: 1.0 / beta,
        beta,
        val_loss_before: before,
        val_loss_after: tempered_objective(val, beta).value,
        iterations,
        status,
    };

    if all_rows_constant(val) {
        return Ok(finish(1.0, 0, FitStatus::Degenerate));
    }
    // Convexity: the sign of the slope at each end decides whether the minimum is interior.
    if tempered_objective(val, opts.beta_min).grad >= 0.0 {
        return Ok(finish(opts.beta_min, 0, FitStatus::BoundaryLow));
    }
    if tempered_objective(val, opts.beta_max).grad <= 0.0 {
        return Ok(finish(opts.beta_max, 0, FitStatus::BoundaryHigh));
    }

    let (mut lo, mut hi) = (opts.beta_min, opts.beta_max);
    let mut beta = 1.0f64.clamp(lo, hi);
    for iter in 1..=opts.max_iters {
        let obj = tempered_objective(val, beta);
        if obj.grad.abs() < opts.grad_tol {
            return Ok(finish(beta, iter, FitStatus::Converged));
        }
        if obj.grad > 0.0 {
            hi = beta;
        } else {
            lo = beta;
        }
        let newton = beta - obj.grad / obj.hess;
        let next = if obj.hess > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            // Newton left the bracket: fall back to a geometric bisection step.
            (lo * hi).sqrt()
        };
        if (next - beta).abs() < 1e-12 {
            return Ok(finish(next, iter, FitStatus::Converged));
        }
        beta = next;
    }
    Ok(finish(beta, opts.max_iters, FitStatus::Converged))
}

pub fn apply_temperature(t: &EvalTable, tau: f64) -> Result<EvalTable> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::validation(format!("temperature must be positive and finite, got {tau}")));
    }
    let inv = 1.0 / tau;
    t.with_logits(t.logits().iter().map(|&v| v * inv).collect())
}
