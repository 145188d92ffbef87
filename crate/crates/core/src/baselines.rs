//! Comparison models: Gaussian linear regression and a two-component mixture
//! of Gaussian linear regressions fitted by EM.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::{log_add_exp, normal_log_density};
use crate::error::{Error, Result};
use crate::inference::bic;
use crate::linalg::{ols_beta, wls_beta};

pub const SIGMA2_FLOOR: f64 = 1e-12;

/// Component variances of the mixture are floored at this fraction of the
/// OLS residual variance.
pub const MIX_VARIANCE_FLOOR_REL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinFit {
    pub beta: Vec<f64>,
    /// ML variance RSS/n.
    pub sigma2: f64,
    pub loglik: f64,
    pub bic: f64,
    pub sigma2_floor_hit: bool,
}

/// Number of free parameters: β (p), σ².
pub fn ols_n_params(p: usize) -> usize {
    p + 1
}

/// Number of free parameters: λ, β₁, β₂, σ₁², σ₂².
pub fn mixreg2_n_params(p: usize) -> usize {
    2 * p + 3
}

pub fn fit_ols(data: &Dataset) -> Result<LinFit> {
    let beta = ols_beta(data)?;
    let r = data.residuals(&beta);
    let mut sigma2 = r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64;
    let floor_hit = sigma2 < SIGMA2_FLOOR;
    if floor_hit {
        sigma2 = SIGMA2_FLOOR;
    }
    let loglik: f64 = r.iter().map(|&ri| normal_log_density(ri, sigma2)).sum();
    Ok(LinFit { bic: bic(loglik, ols_n_params(data.p()), data.n()), beta, sigma2, loglik, sigma2_floor_hit: floor_hit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixRegParams {
    /// Weight of component 1.
    pub lambda: f64,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub sigma1_2: f64,
    pub sigma2_2: f64,
}

impl MixRegParams {
    pub fn validate(&self, p: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Domain(format!("lambda = {} outside [0, 1]", self.lambda)));
        }
        if self.beta1.len() != p || self.beta2.len() != p {
            return Err(Error::Dimension(format!("component coefficients must have length {p}")));
        }
        if self.beta1.iter().chain(&self.beta2).any(|b| !b.is_finite()) {
            return Err(Error::Domain("coefficients must be finite".into()));
        }
        for (name, v) in [("sigma1_2", self.sigma1_2), ("sigma2_2", self.sigma2_2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} = {v} must be finite and > 0")));
            }
        }
        Ok(())
    }

    /// Flattened as (λ, β₁..., β₂..., σ₁², σ₂²).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.lambda];
        v.extend(&self.beta1);
        v.extend(&self.beta2);
        v.extend([self.sigma1_2, self.sigma2_2]);
        v
    }

    pub fn names(p: usize) -> Vec<String> {
        let mut v = vec!["lambda".to_string()];
        v.extend((0..p).map(|j| format!("beta1_{j}")));
        v.extend((0..p).map(|j| format!("beta2_{j}")));
        v.extend(["sigma1_2".to_string(), "sigma2_2".to_string()]);
        v
    }

    fn swapped(&self) -> Self {
        Self {
            lambda: 1.0 - self.lambda,
            beta1: self.beta2.clone(),
            beta2: self.beta1.clone(),
            sigma1_2: self.sigma2_2,
            sigma2_2: self.sigma1_2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixRegFit {
    pub params: MixRegParams,
    pub loglik: f64,
    pub bic: f64,
    /// Posterior probability of component 1 for each observation.
    pub posteriors: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub loglik_trace: Vec<f64>,
    /// A component variance hit the floor or a component lost all weight.
    pub degenerate: bool,
}

/// (ln λN(r₁; σ₁²), ln (1−λ)N(r₂; σ₂²)) for every observation.
fn log_parts(data: &Dataset, theta: &MixRegParams) -> Vec<(f64, f64)> {
    let r1 = data.residuals(&theta.beta1);
    let r2 = data.residuals(&theta.beta2);
    let (l1, l2) = (theta.lambda.ln(), (1.0 - theta.lambda).ln());
    r1.iter()
        .zip(&r2)
        .map(|(&a, &b)| {
            let g1 = if theta.lambda > 0.0 { l1 + normal_log_density(a, theta.sigma1_2) } else { f64::NEG_INFINITY };
            let g2 = if theta.lambda < 1.0 { l2 + normal_log_density(b, theta.sigma2_2) } else { f64::NEG_INFINITY };
            (g1, g2)
        })
        .collect()
}

fn loglik_and_posteriors(data: &Dataset, theta: &MixRegParams) -> (f64, Vec<f64>) {
    let parts = log_parts(data, theta);
    let mut ll = 0.0;
    let tau = parts
        .iter()
        .map(|&(g1, g2)| {
            let tot = log_add_exp(g1, g2);
            ll += tot;
            if tot == f64::NEG_INFINITY {
                theta.lambda
            } else {
                (g1 - tot).exp()
            }
        })
        .collect();
    (ll, tau)
}

/// Observed-data loglikelihood of the two-component mixture.
pub fn mixreg2_loglik(data: &Dataset, theta: &MixRegParams) -> Result<f64> {
    theta.validate(data.p())?;
    Ok(loglik_and_posteriors(data, theta).0)
}

/// Posterior probability of component 1 for each observation.
pub fn mixreg2_posteriors(data: &Dataset, theta: &MixRegParams) -> Result<Vec<f64>> {
    theta.validate(data.p())?;
    Ok(loglik_and_posteriors(data, theta).1)
}

fn variance_floor(data: &Dataset) -> f64 {
    let s2 = fit_ols(data).map(|f| f.sigma2).unwrap_or(1.0);
    (MIX_VARIANCE_FLOOR_REL * s2).max(SIGMA2_FLOOR)
}

fn partition_init(data: &Dataset, group1: &[usize], floor: f64) -> Option<MixRegParams> {
    let n = data.n();
    let group2: Vec<usize> = (0..n).filter(|i| !group1.contains(i)).collect();
    if group1.len() <= data.p() || group2.len() <= data.p() {
        return None;
    }
    let fit_group = |idx: &[usize]| -> Option<(Vec<f64>, f64)> {
        let f = fit_ols(&data.select(idx)).ok()?;
        Some((f.beta, f.sigma2.max(floor)))
    };
    let (beta1, sigma1_2) = fit_group(group1)?;
    let (beta2, sigma2_2) = fit_group(&group2)?;
    Some(MixRegParams { lambda: group1.len() as f64 / n as f64, beta1, beta2, sigma1_2, sigma2_2 })
}

/// Starting values from the hard partition of observations by the sign of
/// their OLS residual. When either side cannot support a regression, a
/// random balanced partition drawn from `seed` is used instead.
pub fn default_mixreg2_init(data: &Dataset, seed: u64) -> Result<MixRegParams> {
    let ols = fit_ols(data)?;
    let floor = variance_floor(data);
    let r = data.residuals(&ols.beta);
    let below: Vec<usize> = (0..data.n()).filter(|&i| r[i] <= 0.0).collect();
    if let Some(init) = partition_init(data, &below, floor) {
        return Ok(init);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let mut idx: Vec<usize> = (0..data.n()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(data.n() / 2);
        idx.sort_unstable();
        if let Some(init) = partition_init(data, &idx, floor) {
            return Ok(init);
        }
    }
    Err(Error::Fit("no partition supports two component regressions".into()))
}

pub fn fit_mixreg2(data: &Dataset, init: &MixRegParams, tol: f64, max_iter: usize) -> Result<MixRegFit> {
    fit_mixreg2_with(data, init, tol, max_iter, None)
}

/// EM fit with the mixing weight optionally held at `fixed_lambda`. With a
/// fixed weight the components are not relabeled.
pub fn fit_mixreg2_with(
    data: &Dataset,
    init: &MixRegParams,
    tol: f64,
    max_iter: usize,
    fixed_lambda: Option<f64>,
) -> Result<MixRegFit> {
    init.validate(data.p())?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tol = {tol} must be > 0")));
    }
    let mut theta = init.clone();
    if let Some(l) = fixed_lambda {
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::Domain(format!("fixed lambda = {l} outside [0, 1]")));
        }
        theta.lambda = l;
    }
    let floor = variance_floor(data);
    let n = data.n() as f64;
    let (mut ll, mut tau) = loglik_and_posteriors(data, &theta);
    let mut trace = vec![ll];
    let mut degenerate = false;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let w1 = tau.clone();
        let w2: Vec<f64> = tau.iter().map(|t| 1.0 - t).collect();
        let mut next = theta.clone();
        next.lambda = fixed_lambda.unwrap_or(w1.iter().sum::<f64>() / n);

        for (w, beta, s2) in [(&w1, &mut next.beta1, &mut next.sigma1_2), (&w2, &mut next.beta2, &mut next.sigma2_2)] {
            let sw: f64 = w.iter().sum();
            if sw <= 0.0 {
                degenerate = true;
                continue;
            }
            match wls_beta(data, w) {
                Ok(b) => *beta = b,
                Err(Error::RankDeficient) => {
                    degenerate = true;
                    continue;
                }
                Err(e) => return Err(e),
            }
            let r = data.residuals(beta);
            let v = r.iter().zip(w.iter()).map(|(ri, wi)| wi * ri * ri).sum::<f64>() / sw;
            if v < floor {
                degenerate = true;
                *s2 = floor;
            } else {
                *s2 = v;
            }
        }

        theta = next;
        let (ll_new, tau_new) = loglik_and_posteriors(data, &theta);
        if !ll_new.is_finite() {
            return Err(Error::Fit("mixture loglikelihood is not finite".into()));
        }
        tau = tau_new;
        trace.push(ll_new);
        let diff = (ll_new - ll).abs();
        ll = ll_new;
        if diff <= tol {
            converged = true;
            break;
        }
    }

    if fixed_lambda.is_none() && theta.beta1[0] > theta.beta2[0] {
        theta = theta.swapped();
        tau.iter_mut().for_each(|t| *t = 1.0 - *t);
    }

    Ok(MixRegFit {
        bic: bic(ll, mixreg2_n_params(data.p()), data.n()),
        params: theta,
        loglik: ll,
        posteriors: tau,
        iterations,
        converged,
        loglik_trace: trace,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_intercept_only_hand_case() {
        let d = Dataset::from_predictors(&[], vec![1.0, 2.0, 3.0]).unwrap();
        let f = fit_ols(&d).unwrap();
        assert!((f.beta[0] - 2.0).abs() < 1e-14);
        assert!((f.sigma2 - 2.0 / 3.0).abs() < 1e-14);
        let ll = -1.5 * ((2.0 * std::f64::consts::PI * 2.0 / 3.0).ln() + 1.0);
        assert!((f.loglik - ll).abs() < 1e-12);
    }

    #[test]
    fn ols_exact_line_floors_variance() {
        let d = Dataset::from_predictors(&[vec![0.0, 1.0, 2.0, 3.0]], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let f = fit_ols(&d).unwrap();
        assert!(f.sigma2_floor_hit);
        assert_eq!(f.sigma2, SIGMA2_FLOOR);
        assert!((f.beta[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn equidistant_point_has_half_posterior() {
        let d = Dataset::from_predictors(&[], vec![0.0]).unwrap();
        let t = MixRegParams { lambda: 0.5, beta1: vec![-2.0], beta2: vec![2.0], sigma1_2: 1.0, sigma2_2: 1.0 };
        let z = mixreg2_posteriors(&d, &t).unwrap();
        assert!((z[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn labels_follow_intercept_order() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 4.0).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, xi)| if i % 2 == 0 { 5.0 + xi } else { -5.0 + xi } + 0.01 * ((i * 7 % 5) as f64 - 2.0))
            .collect();
        let d = Dataset::from_predictors(&[x], y).unwrap();
        let init = default_mixreg2_init(&d, 1).unwrap();
        let f = fit_mixreg2(&d, &init, 1e-10, 500).unwrap();
        assert!(f.params.beta1[0] < f.params.beta2[0]);
        assert!((f.params.beta1[0] + 5.0).abs() < 0.05 && (f.params.beta2[0] - 5.0).abs() < 0.05);
    }
}
