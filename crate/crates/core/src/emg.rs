//! EMG regression fitted by block relaxation.
//!
//! The parameter vector ψ = (β, σ², α) is split into the blocks β and
//! (σ², α). Each outer iteration maximizes the loglikelihood over β with the
//! other block fixed (damped Newton; the loglikelihood is strictly concave in
//! β) and then over (σ², α) with β fixed (Nelder–Mead on (ln σ², ln α)).
//! Iteration stops once the loglikelihood changes by at most `tol`.

use std::f64::consts::SQRT_2;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::{emg_log_density_unchecked, EmgParams};
use crate::error::{Error, Result};
use crate::inference::bic;
use crate::linalg::{check_full_rank, ols_beta, solve_spd};
use crate::special::neg_dln_erfc;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;

/// Relative tolerance of the inner block maximizers.
pub const INNER_TOL: f64 = 1e-12;

const MAX_NEWTON_ITERS: usize = 100;
const MAX_HALVINGS: usize = 50;
const SIMPLEX_MAX_ITERS: u64 = 400;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmgFit {
    pub params: EmgParams,
    pub loglik: f64,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub loglik_trace: Vec<f64>,
    /// α̂σ̂ ≥ 1: the loglikelihood is not guaranteed concave in α there.
    pub concavity_warning: bool,
    /// Index of the start that produced this fit (0 is the supplied init).
    pub restart: usize,
}

/// Number of free parameters: β (p), σ², α.
pub fn n_params(p: usize) -> usize {
    p + 2
}

/// Observed-data loglikelihood of the EMG regression model.
pub fn emg_loglik(data: &Dataset, psi: &EmgParams) -> Result<f64> {
    psi.validate()?;
    data.check_beta(&psi.beta)?;
    let r = data.residuals(&psi.beta);
    Ok(loglik_from_residuals(&r, psi.sigma(), psi.alpha))
}

fn loglik_from_residuals(r: &[f64], sigma: f64, alpha: f64) -> f64 {
    r.iter().map(|&ri| emg_log_density_unchecked(ri, sigma, alpha)).sum()
}

/// First and second derivative of one observation's log density with respect
/// to its residual.
#[inline]
fn residual_derivatives(r: f64, sigma: f64, alpha: f64) -> (f64, f64) {
    let z = (alpha * sigma * sigma - r) / (SQRT_2 * sigma);
    let h = neg_dln_erfc(z);
    let d1 = -alpha + h / (SQRT_2 * sigma);
    let d2 = -h * (h - 2.0 * z) / (2.0 * sigma * sigma);
    (d1, d2)
}

/// ∂ℓ/∂β at ψ.
pub fn emg_beta_gradient(data: &Dataset, psi: &EmgParams) -> Result<Vec<f64>> {
    psi.validate()?;
    data.check_beta(&psi.beta)?;
    let r = data.residuals(&psi.beta);
    Ok(beta_grad_hess(data, &r, psi.sigma(), psi.alpha).0.as_slice().to_vec())
}

/// ∂²ℓ/∂β∂βᵀ at ψ.
pub fn emg_beta_hessian(data: &Dataset, psi: &EmgParams) -> Result<DMatrix<f64>> {
    psi.validate()?;
    data.check_beta(&psi.beta)?;
    let r = data.residuals(&psi.beta);
    Ok(beta_grad_hess(data, &r, psi.sigma(), psi.alpha).1)
}

fn beta_grad_hess(data: &Dataset, r: &[f64], sigma: f64, alpha: f64) -> (DVector<f64>, DMatrix<f64>) {
    let p = data.p();
    let x = data.x();
    let mut g = DVector::zeros(p);
    let mut h = DMatrix::zeros(p, p);
    for (i, &ri) in r.iter().enumerate() {
        let (d1, d2) = residual_derivatives(ri, sigma, alpha);
        // r = y − xᵀβ, so ∂r/∂β = −x
        for a in 0..p {
            let xa = x[(i, a)];
            g[a] -= d1 * xa;
            for b in 0..=a {
                h[(a, b)] += d2 * xa * x[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
    (g, h)
}

/// Maximizes ℓ over β with (σ, α) fixed. Returns the new β and ℓ.
fn maximize_beta(data: &Dataset, beta: &[f64], sigma: f64, alpha: f64) -> Result<(Vec<f64>, f64)> {
    let mut beta = beta.to_vec();
    let mut r = data.residuals(&beta);
    let mut ll = loglik_from_residuals(&r, sigma, alpha);
    for _ in 0..MAX_NEWTON_ITERS {
        let (g, h) = beta_grad_hess(data, &r, sigma, alpha);
        let neg_h = -h;
        let dir = match solve_spd(&neg_h, &g) {
            Some(d) => d,
            None => {
                // far-tail points carry no curvature; regularize
                let scale = neg_h.diagonal().amax().max(1e-12);
                let ridge = DMatrix::identity(data.p(), data.p()) * (1e-8 * scale);
                solve_spd(&(neg_h + ridge), &g).ok_or_else(|| Error::Fit("beta block Hessian is singular".into()))?
            }
        };
        let decrement = g.dot(&dir);
        if !decrement.is_finite() {
            return Err(Error::Fit("non-finite Newton step in beta block".into()));
        }
        if decrement <= INNER_TOL * ll.abs().max(1.0) {
            break;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(dir.iter()).map(|(b, d)| b + step * d).collect();
            let rc = data.residuals(&cand);
            let lc = loglik_from_residuals(&rc, sigma, alpha);
            if lc.is_finite() && lc >= ll {
                let gain = lc - ll;
                beta = cand;
                r = rc;
                ll = lc;
                accepted = true;
                if gain <= INNER_TOL * ll.abs().max(1.0) {
                    return Ok((beta, ll));
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((beta, ll))
}

struct ScaleCost<'a> {
    residuals: &'a [f64],
}

impl CostFunction for ScaleCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let sigma2 = u[0].exp();
        let alpha = u[1].exp();
        if !(sigma2.is_finite() && sigma2 > 0.0 && alpha.is_finite() && alpha > 0.0) {
            return Ok(f64::INFINITY);
        }
        let ll = loglik_from_residuals(self.residuals, sigma2.sqrt(), alpha);
        Ok(if ll.is_finite() { -ll } else { f64::INFINITY })
    }
}

/// Maximizes ℓ over (σ², α) with β fixed, returning the new pair and ℓ. Never
/// returns a point worse than the starting one.
fn maximize_scale(r: &[f64], sigma2: f64, alpha: f64) -> Result<(f64, f64, f64)> {
    let start_ll = loglik_from_residuals(r, sigma2.sqrt(), alpha);
    let u0 = vec![sigma2.ln(), alpha.ln()];
    let simplex = vec![u0.clone(), vec![u0[0] + 0.2, u0[1]], vec![u0[0], u0[1] + 0.2]];
    let sd_tol = INNER_TOL * start_ll.abs().max(1.0);
    let solver =
        NelderMead::new(simplex).with_sd_tolerance(sd_tol).map_err(|e| Error::Fit(format!("simplex setup: {e}")))?;
    let res = Executor::new(ScaleCost { residuals: r }, solver)
        .configure(|s| s.max_iters(SIMPLEX_MAX_ITERS))
        .run()
        .map_err(|e| Error::Fit(format!("simplex maximizer: {e}")))?;
    let state = res.state();
    let best = state.get_best_param().cloned().ok_or_else(|| Error::Fit("simplex returned no point".into()))?;
    let best_ll = -state.get_best_cost();
    if best_ll.is_finite() && best_ll > start_ll {
        Ok((best[0].exp(), best[1].exp(), best_ll))
    } else {
        Ok((sigma2, alpha, start_ll))
    }
}

/// OLS-based starting values: β from OLS, α = 1/mean(positive residuals),
/// σ² = mean square of the negative residuals (mirrored variance).
pub fn default_emg_init(data: &Dataset) -> Result<EmgParams> {
    let beta = ols_beta(data)?;
    let r = data.residuals(&beta);
    let pos: Vec<f64> = r.iter().copied().filter(|&v| v > 0.0).collect();
    let neg: Vec<f64> = r.iter().copied().filter(|&v| v < 0.0).collect();
    let alpha = if pos.is_empty() {
        1.0
    } else {
        let m = pos.iter().sum::<f64>() / pos.len() as f64;
        if m > 0.0 {
            1.0 / m
        } else {
            1.0
        }
    };
    let sigma2 =
        if neg.is_empty() { 1e-6 } else { (neg.iter().map(|v| v * v).sum::<f64>() / neg.len() as f64).max(1e-12) };
    EmgParams::new(beta, sigma2, alpha)
}

/// Block-relaxation fit from `init`.
pub fn fit_emg(data: &Dataset, init: &EmgParams, tol: f64, max_iter: usize) -> Result<EmgFit> {
    init.validate()?;
    data.check_beta(&init.beta)?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tol = {tol} must be > 0")));
    }
    check_full_rank(data)?;

    let mut psi = init.clone();
    let mut q = emg_loglik(data, &psi)?;
    let mut trace = vec![q];
    let mut converged = false;
    let mut iterations = 0;

    let fail = |message: String, last: &EmgParams| Error::EmgFit { message, last: Box::new(last.clone()) };

    while iterations < max_iter {
        iterations += 1;
        let (beta, _) =
            maximize_beta(data, &psi.beta, psi.sigma(), psi.alpha).map_err(|e| fail(e.to_string(), &psi))?;
        let r = data.residuals(&beta);
        let (sigma2, alpha, q_new) =
            maximize_scale(&r, psi.sigma2, psi.alpha).map_err(|e| fail(e.to_string(), &psi))?;
        let next = EmgParams { beta, sigma2, alpha };
        if next.validate().is_err() || !q_new.is_finite() {
            return Err(fail("iterate left the parameter space".into(), &psi));
        }
        psi = next;
        trace.push(q_new);
        let diff = (q_new - q).abs();
        q = q_new;
        if diff <= tol {
            converged = true;
            break;
        }
    }

    let n = data.n();
    Ok(EmgFit {
        concavity_warning: psi.alpha * psi.sigma() >= 1.0,
        bic: bic(q, n_params(data.p()), n),
        params: psi,
        loglik: q,
        iterations,
        converged,
        loglik_trace: trace,
        restart: 0,
    })
}

/// Jittered copy of `init` for restart `k` (k ≥ 1).
fn jittered_init(init: &EmgParams, seed: u64, k: usize) -> EmgParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let spread = (init.sigma2 + 1.0 / (init.alpha * init.alpha)).sqrt();
    let mut beta = init.beta.clone();
    beta[0] += 0.25 * spread * draw();
    EmgParams { beta, sigma2: init.sigma2 * (0.75 * draw()).exp(), alpha: init.alpha * (0.5 * draw()).exp() }
}

/// Runs `restarts` block-relaxation fits (the first from `init`, the rest from
/// jittered copies) and keeps the highest loglikelihood; ties go to the lower
/// restart index.
pub fn fit_emg_multistart(
    data: &Dataset,
    init: &EmgParams,
    tol: f64,
    max_iter: usize,
    restarts: usize,
    seed: u64,
) -> Result<EmgFit> {
    let restarts = restarts.max(1);
    let fits: Vec<Result<EmgFit>> = (0..restarts)
        .into_par_iter()
        .map(|k| {
            let start = if k == 0 { init.clone() } else { jittered_init(init, seed, k) };
            fit_emg(data, &start, tol, max_iter).map(|mut f| {
                f.restart = k;
                f
            })
        })
        .collect();
    let mut best: Option<EmgFit> = None;
    let mut first_err = None;
    for f in fits {
        match f {
            Ok(f) => {
                if best.as_ref().is_none_or(|b| f.loglik > b.loglik) {
                    best = Some(f);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match (best, first_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one restart runs"),
    }
}
