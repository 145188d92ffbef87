//! Flare regression: linear regression whose error is a two-component mixture
//! of a zero-mean Gaussian (weight λ) and a positive-support exponential
//! (weight 1 − λ), fitted by an ECM algorithm.
//!
//! One ECM iteration:
//!
//! 1. E-step at θ⁽ᵗ⁾ gives Gaussian memberships Zᵢ.
//! 2. CM-step for β: one Newton step on
//!    m(β) = Σ Zᵢ(−rᵢ²/2σ²) − α Σ (1 − Zᵢ) rᵢ, with step halving.
//! 3. E-step at θ⁽ᵗ⁺¹ᐟ²⁾ = (λ⁽ᵗ⁾, β⁽ᵗ⁺¹⁾, σ²⁽ᵗ⁾, α⁽ᵗ⁾).
//! 4. CM-step for (λ, σ², α): closed-form weighted MLEs.
//!
//! Iteration stops when ‖θ⁽ᵗ⁺¹⁾ − θ⁽ᵗ⁾‖∞ ≤ tol. The reported posteriors are
//! those at the final θ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::{flare_log_parts, log_add_exp, FlareParams};
use crate::error::{Error, Result};
use crate::inference::bic;
use crate::linalg::{check_full_rank, ols_beta, solve_spd};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// Observations with Zᵢ below this must keep a strictly positive residual
/// through the β CM-step.
pub const Z_HARD: f64 = 0.5;

pub const SIGMA2_FLOOR: f64 = 1e-12;

/// Consecutive iterations with λ within tol of 0 or 1 before the fit is
/// declared collapsed.
pub const COLLAPSE_STREAK: usize = 10;

const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Gaussian,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collapse {
    /// λ → 1; the reported fit is the Gaussian linear regression MLE.
    GaussianOnly,
    /// λ → 0; the reported fit is the pure exponential regression at the last β.
    ExponentialOnly,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlareWarnings {
    pub collapse: Option<Collapse>,
    pub sigma2_floor_hit: bool,
    /// CM-steps where Σ(1−Zᵢ)rᵢ ≤ 0 left α at its previous value.
    pub degenerate_alpha_steps: usize,
    /// CM-steps where ΣZᵢ = 0 left σ² at its previous value.
    pub degenerate_sigma2_steps: usize,
}

impl FlareWarnings {
    pub fn any(&self) -> bool {
        self.collapse.is_some()
            || self.sigma2_floor_hit
            || self.degenerate_alpha_steps > 0
            || self.degenerate_sigma2_steps > 0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlareFit {
    pub params: FlareParams,
    /// Observed-data loglikelihood at `params`.
    pub loglik: f64,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Zᵢ: posterior probability that observation i is Gaussian.
    pub posteriors: Vec<f64>,
    pub loglik_trace: Vec<f64>,
    pub warnings: FlareWarnings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabels {
    pub labels: Vec<Component>,
    pub cutoff: f64,
}

impl ClusterLabels {
    /// (Gaussian count, exponential count)
    pub fn counts(&self) -> (usize, usize) {
        let e = self.labels.iter().filter(|&&c| c == Component::Exponential).count();
        (self.labels.len() - e, e)
    }
}

/// Number of free parameters: λ, β (p), σ², α.
pub fn n_params(p: usize) -> usize {
    p + 3
}

fn check(data: &Dataset, theta: &FlareParams) -> Result<()> {
    theta.validate()?;
    data.check_beta(&theta.beta)
}

fn loglik_from_residuals(r: &[f64], theta: &FlareParams) -> f64 {
    r.iter()
        .map(|&ri| {
            let (g, e) = flare_log_parts(ri, theta.lambda, theta.sigma2, theta.alpha);
            log_add_exp(g, e)
        })
        .sum()
}

/// Observed-data loglikelihood Σ ln f(yᵢ; xᵢ, θ). Returns −∞ when some
/// observation has zero density under both components.
pub fn observed_loglik(data: &Dataset, theta: &FlareParams) -> Result<f64> {
    check(data, theta)?;
    Ok(loglik_from_residuals(&data.residuals(&theta.beta), theta))
}

#[inline]
fn posterior_from_residual(r: f64, theta: &FlareParams) -> Option<f64> {
    let (g, e) = flare_log_parts(r, theta.lambda, theta.sigma2, theta.alpha);
    match (g == f64::NEG_INFINITY, e == f64::NEG_INFINITY) {
        (true, true) => None,
        (_, true) => Some(1.0),
        (true, _) => Some(0.0),
        _ => Some(1.0 / (1.0 + (e - g).exp())),
    }
}

/// Posterior probability that (y, x) came from the Gaussian component.
pub fn posterior_gaussian(y: f64, x: &[f64], theta: &FlareParams) -> Result<f64> {
    theta.validate()?;
    if x.len() != theta.beta.len() {
        return Err(Error::Dimension("x and beta lengths differ".into()));
    }
    let mu: f64 = x.iter().zip(&theta.beta).map(|(a, b)| a * b).sum();
    posterior_from_residual(y - mu, theta).ok_or(Error::UndefinedPosterior { index: 0 })
}

fn posteriors_from_residuals(r: &[f64], theta: &FlareParams) -> Result<Vec<f64>> {
    r.iter()
        .enumerate()
        .map(|(i, &ri)| posterior_from_residual(ri, theta).ok_or(Error::UndefinedPosterior { index: i }))
        .collect()
}

/// E-step: Zᵢ for every observation.
pub fn posteriors(data: &Dataset, theta: &FlareParams) -> Result<Vec<f64>> {
    check(data, theta)?;
    posteriors_from_residuals(&data.residuals(&theta.beta), theta)
}

/// m(β) = Σ Zᵢ(−rᵢ²/2σ²) − α Σ(1−Zᵢ)rᵢ, the β-dependent part of the expected
/// complete-data loglikelihood.
pub fn beta_objective(data: &Dataset, z: &[f64], theta: &FlareParams, beta: &[f64]) -> f64 {
    objective_from_residuals(&data.residuals(beta), z, theta.sigma2, theta.alpha)
}

fn objective_from_residuals(r: &[f64], z: &[f64], sigma2: f64, alpha: f64) -> f64 {
    r.iter().zip(z).map(|(&ri, &zi)| -zi * ri * ri / (2.0 * sigma2) - alpha * (1.0 - zi) * ri).sum()
}

/// dm/dβ = Σ [(Zᵢ/σ²) xᵢ rᵢ + α(1−Zᵢ) xᵢ].
pub fn beta_objective_gradient(data: &Dataset, z: &[f64], theta: &FlareParams, beta: &[f64]) -> Vec<f64> {
    let r = data.residuals(beta);
    gradient_and_neg_hessian(data, &r, z, theta.sigma2, theta.alpha).0.as_slice().to_vec()
}

/// (dm/dβ, −d²m/dβ²) with −d²m/dβ² = Σ (Zᵢ/σ²) xᵢxᵢᵀ.
fn gradient_and_neg_hessian(
    data: &Dataset,
    r: &[f64],
    z: &[f64],
    sigma2: f64,
    alpha: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let p = data.p();
    let x = data.x();
    let mut g = DVector::zeros(p);
    let mut h = DMatrix::zeros(p, p);
    for (i, (&ri, &zi)) in r.iter().zip(z).enumerate() {
        let wg = zi / sigma2 * ri + alpha * (1.0 - zi);
        let wh = zi / sigma2;
        for a in 0..p {
            let xa = x[(i, a)];
            g[a] += wg * xa;
            if wh != 0.0 {
                for b in 0..=a {
                    h[(a, b)] += wh * xa * x[(i, b)];
                }
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

/// Newton step for β with step halving. A trial point is accepted when m does
/// not decrease, every observation with Zᵢ < [`Z_HARD`] keeps a positive
/// residual, and `extra` approves it. Returns the current β if no halving
/// is accepted.
fn beta_step_with<F>(data: &Dataset, z: &[f64], theta: &FlareParams, mut extra: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &[f64]) -> bool,
{
    if z.len() != data.n() {
        return Err(Error::Dimension(format!("{} posteriors for {} observations", z.len(), data.n())));
    }
    let beta = &theta.beta;
    let r = data.residuals(beta);
    let (g, neg_h) = gradient_and_neg_hessian(data, &r, z, theta.sigma2, theta.alpha);
    let dir = solve_spd(&neg_h, &g).ok_or_else(|| Error::Step("Σ Zᵢ xᵢxᵢᵀ is singular".into()))?;
    if dir.iter().any(|d| !d.is_finite()) {
        return Err(Error::Step("non-finite Newton direction".into()));
    }
    let m0 = objective_from_residuals(&r, z, theta.sigma2, theta.alpha);
    let mut step = 1.0;
    for _ in 0..MAX_HALVINGS {
        let cand: Vec<f64> = beta.iter().zip(dir.iter()).map(|(b, d)| b + step * d).collect();
        let rc = data.residuals(&cand);
        let ascent = objective_from_residuals(&rc, z, theta.sigma2, theta.alpha) >= m0;
        let feasible = rc.iter().zip(z).all(|(&ri, &zi)| zi >= Z_HARD || ri > 0.0);
        if ascent && feasible && extra(&cand, &rc) {
            return Ok(cand);
        }
        step *= 0.5;
    }
    Ok(beta.clone())
}

/// CM-step for β given memberships `z` and the current θ.
pub fn cm_step_beta(data: &Dataset, z: &[f64], theta: &FlareParams) -> Result<Vec<f64>> {
    check(data, theta)?;
    beta_step_with(data, z, theta, |_, _| true)
}

/// Closed-form CM-step for (λ, σ², α). `None` marks a degenerate update:
/// σ² when ΣZᵢ = 0, α when Σ(1−Zᵢ)rᵢ ≤ 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psi2Step {
    pub lambda: f64,
    pub sigma2: Option<f64>,
    pub alpha: Option<f64>,
}

pub fn cm_step_psi2(data: &Dataset, z: &[f64], beta: &[f64]) -> Result<Psi2Step> {
    data.check_beta(beta)?;
    if z.len() != data.n() {
        return Err(Error::Dimension(format!("{} posteriors for {} observations", z.len(), data.n())));
    }
    if z.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain("posteriors must lie in [0, 1]".into()));
    }
    let r = data.residuals(beta);
    Ok(psi2_from_residuals(&r, z))
}

fn psi2_from_residuals(r: &[f64], z: &[f64]) -> Psi2Step {
    let n = r.len() as f64;
    let (mut sz, mut szr2, mut s1z, mut s1zr) = (0.0, 0.0, 0.0, 0.0);
    for (&ri, &zi) in r.iter().zip(z) {
        sz += zi;
        szr2 += zi * ri * ri;
        s1z += 1.0 - zi;
        s1zr += (1.0 - zi) * ri;
    }
    let sigma2 = (sz > 0.0).then(|| szr2 / sz);
    let alpha = (s1zr > 0.0 && s1z > 0.0).then(|| s1z / s1zr).filter(|a| a.is_finite());
    Psi2Step { lambda: sz / n, sigma2, alpha }
}

/// Data-driven starting values: β from OLS on the observations whose OLS
/// residual lies below the median, λ = 0.5, σ² the mirrored variance of the
/// non-positive OLS residuals and α the reciprocal mean positive OLS residual.
pub fn default_flare_init(data: &Dataset) -> Result<FlareParams> {
    let beta_full = ols_beta(data)?;
    let r_full = data.residuals(&beta_full);
    let mut sorted = r_full.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let lower: Vec<usize> = (0..data.n()).filter(|&i| r_full[i] < median).collect();
    let beta = if lower.len() > data.p() {
        ols_beta(&data.select(&lower)).unwrap_or_else(|_| beta_full.clone())
    } else {
        beta_full.clone()
    };
    let r = r_full;
    let (mut ss, mut nn, mut sp, mut np) = (0.0, 0usize, 0.0, 0usize);
    for &ri in &r {
        if ri <= 0.0 {
            ss += ri * ri;
            nn += 1;
        } else {
            sp += ri;
            np += 1;
        }
    }
    let sigma2 = if nn > 0 && ss > 0.0 {
        ss / nn as f64
    } else {
        let m = r.iter().sum::<f64>() / r.len() as f64;
        (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / r.len() as f64).max(1e-6)
    };
    let alpha = if np > 0 && sp > 0.0 { np as f64 / sp } else { 1.0 };
    FlareParams::new(0.5, beta, sigma2.max(SIGMA2_FLOOR), alpha)
}

fn sup_norm_diff(a: &FlareParams, b: &FlareParams) -> f64 {
    a.to_vec().iter().zip(b.to_vec()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// ECM fit of the flare regression model from `init`.
pub fn fit_flare(data: &Dataset, init: &FlareParams, tol: f64, max_iter: usize) -> Result<FlareFit> {
    check(data, init)?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tol = {tol} must be > 0")));
    }
    check_full_rank(data)?;

    let mut theta = init.clone();
    let mut r = data.residuals(&theta.beta);
    let mut z = posteriors_from_residuals(&r, &theta)?;
    let mut ll = loglik_from_residuals(&r, &theta);
    let mut trace = vec![ll];
    let mut warnings = FlareWarnings::default();
    let mut converged = false;
    let mut iterations = 0;
    let mut streak = 0;

    while iterations < max_iter {
        iterations += 1;

        // CM-step 1: β. Trial points must also not lower the observed
        // loglikelihood, which keeps the ECM sequence monotone when a
        // membership-weighted support constraint is crossed.
        let beta = match beta_step_with(data, &z, &theta, |_, rc| loglik_from_residuals(rc, &theta) >= ll) {
            Ok(b) => b,
            Err(Error::Step(_)) => theta.beta.clone(),
            Err(e) => return Err(e),
        };
        let half = FlareParams { beta, ..theta.clone() };
        let r_half = data.residuals(&half.beta);
        let z_half = posteriors_from_residuals(&r_half, &half)?;

        // CM-step 2: (λ, σ², α)
        let step = psi2_from_residuals(&r_half, &z_half);
        let sigma2 = match step.sigma2 {
            Some(s) if s < SIGMA2_FLOOR => {
                warnings.sigma2_floor_hit = true;
                SIGMA2_FLOOR
            }
            Some(s) => s,
            None => {
                warnings.degenerate_sigma2_steps += 1;
                half.sigma2
            }
        };
        let alpha = match step.alpha {
            Some(a) => a,
            None => {
                warnings.degenerate_alpha_steps += 1;
                half.alpha
            }
        };
        let next = FlareParams { lambda: step.lambda.clamp(0.0, 1.0), beta: half.beta, sigma2, alpha };
        next.validate()?;

        let diff = sup_norm_diff(&next, &theta);
        theta = next;
        r = r_half;
        z = posteriors_from_residuals(&r, &theta)?;
        ll = loglik_from_residuals(&r, &theta);
        trace.push(ll);

        if diff <= tol {
            converged = true;
            break;
        }
        if theta.lambda <= tol || theta.lambda >= 1.0 - tol {
            streak += 1;
        } else {
            streak = 0;
        }
        if streak >= COLLAPSE_STREAK {
            return collapse(data, theta, iterations, trace, warnings);
        }
    }

    Ok(FlareFit {
        bic: bic(ll, n_params(data.p()), data.n()),
        params: theta,
        loglik: ll,
        iterations,
        converged,
        posteriors: z,
        loglik_trace: trace,
        warnings,
    })
}

/// Single-component fit reported after λ has sat on a boundary.
fn collapse(
    data: &Dataset,
    theta: FlareParams,
    iterations: usize,
    mut trace: Vec<f64>,
    mut warnings: FlareWarnings,
) -> Result<FlareFit> {
    let params = if theta.lambda >= 0.5 {
        warnings.collapse = Some(Collapse::GaussianOnly);
        let beta = ols_beta(data)?;
        let r = data.residuals(&beta);
        let mut sigma2 = r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64;
        if sigma2 < SIGMA2_FLOOR {
            warnings.sigma2_floor_hit = true;
            sigma2 = SIGMA2_FLOOR;
        }
        FlareParams { lambda: 1.0, beta, sigma2, alpha: theta.alpha }
    } else {
        warnings.collapse = Some(Collapse::ExponentialOnly);
        let r = data.residuals(&theta.beta);
        let total: f64 = r.iter().sum();
        let alpha = if r.iter().all(|&v| v > 0.0) && total > 0.0 { r.len() as f64 / total } else { theta.alpha };
        FlareParams { lambda: 0.0, alpha, ..theta }
    };
    let r = data.residuals(&params.beta);
    let ll = loglik_from_residuals(&r, &params);
    let z = posteriors_from_residuals(&r, &params)?;
    trace.push(ll);
    Ok(FlareFit {
        bic: bic(ll, n_params(data.p()), data.n()),
        params,
        loglik: ll,
        iterations,
        converged: true,
        posteriors: z,
        loglik_trace: trace,
        warnings,
    })
}

/// Labels observation i exponential iff 1 − Zᵢ ≥ cutoff.
pub fn classify_posteriors(posteriors: &[f64], cutoff: f64) -> Result<ClusterLabels> {
    if !(0.0..=1.0).contains(&cutoff) {
        return Err(Error::Domain(format!("cutoff = {cutoff} outside [0, 1]")));
    }
    let labels = posteriors
        .iter()
        .map(|&z| if 1.0 - z >= cutoff { Component::Exponential } else { Component::Gaussian })
        .collect();
    Ok(ClusterLabels { labels, cutoff })
}

pub fn classify(fit: &FlareFit, cutoff: f64) -> Result<ClusterLabels> {
    classify_posteriors(&fit.posteriors, cutoff)
}
