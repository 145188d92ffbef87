//! Densities of the exponentially-modified Gaussian (EMG) and of the flare
//! mixture (zero-mean Gaussian + positive-support exponential), plus the
//! parameter types of both regression models.
//!
//! Everything is evaluated in log space. The EMG density
//!
//! ```text
//! f(y; μ, σ, α) = (α/2) exp{(α/2)(2μ + ασ² − 2y)} erfc((μ + ασ² − y) / (√2 σ))
//! ```
//!
//! is rewritten for a positive erfc argument z as
//! `ln(α/2) − (y − μ)²/(2σ²) + ln erfcx(z)`, which has no cancellation
//! between the exponential and the erfc factor.

use std::f64::consts::{LN_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{erfcx, ln_erfc};

/// ln(2π)
pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Parameters of the EMG regression model: ψ = (β, σ², α).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmgParams {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub alpha: f64,
}

impl EmgParams {
    pub fn new(beta: Vec<f64>, sigma2: f64, alpha: f64) -> Result<Self> {
        let p = Self { beta, sigma2, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.is_empty() {
            return Err(Error::Domain("beta must have at least one entry".into()));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("beta must be finite".into()));
        }
        check_positive("sigma2", self.sigma2)?;
        check_positive("alpha", self.alpha)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// Flattened as (β..., σ², α).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.extend([self.sigma2, self.alpha]);
        v
    }

    pub fn names(p: usize) -> Vec<String> {
        let mut v: Vec<String> = (0..p).map(|j| format!("beta{j}")).collect();
        v.extend(["sigma2".to_string(), "alpha".to_string()]);
        v
    }
}

/// Parameters of the flare regression model: θ = (λ, β, σ², α).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlareParams {
    pub lambda: f64,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub alpha: f64,
}

impl FlareParams {
    pub fn new(lambda: f64, beta: Vec<f64>, sigma2: f64, alpha: f64) -> Result<Self> {
        let p = Self { lambda, beta, sigma2, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Domain(format!("lambda = {} outside [0, 1]", self.lambda)));
        }
        if self.beta.is_empty() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("beta must be non-empty and finite".into()));
        }
        check_positive("sigma2", self.sigma2)?;
        check_positive("alpha", self.alpha)
    }

    /// Flattened as (λ, β..., σ², α).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.beta.len() + 3);
        v.push(self.lambda);
        v.extend_from_slice(&self.beta);
        v.extend([self.sigma2, self.alpha]);
        v
    }

    /// Inverse of [`FlareParams::to_vec`]; does not validate.
    pub fn from_slice(v: &[f64]) -> Self {
        let p = v.len() - 3;
        Self { lambda: v[0], beta: v[1..=p].to_vec(), sigma2: v[p + 1], alpha: v[p + 2] }
    }

    pub fn names(p: usize) -> Vec<String> {
        let mut v = vec!["lambda".to_string()];
        v.extend((0..p).map(|j| format!("beta{j}")));
        v.extend(["sigma2".to_string(), "alpha".to_string()]);
        v
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {v} must be finite and > 0")))
    }
}

/// ln N(r; 0, σ²)
#[inline]
pub fn normal_log_density(r: f64, sigma2: f64) -> f64 {
    -0.5 * (LN_2PI + sigma2.ln()) - r * r / (2.0 * sigma2)
}

/// ln f(y; μ, σ, α) of the EMG distribution.
pub fn emg_log_density(y: f64, mu: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Domain(format!("sigma = {sigma} must be > 0")));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Domain(format!("alpha = {alpha} must be > 0")));
    }
    Ok(emg_log_density_unchecked(y - mu, sigma, alpha))
}

/// EMG log density as a function of the residual r = y − μ; no validation.
#[inline]
pub(crate) fn emg_log_density_unchecked(r: f64, sigma: f64, alpha: f64) -> f64 {
    let s2 = sigma * sigma;
    let z = (alpha * s2 - r) / (SQRT_2 * sigma);
    let ln_half_alpha = alpha.ln() - LN_2;
    if z > 0.0 {
        ln_half_alpha - r * r / (2.0 * s2) + erfcx(z).ln()
    } else {
        ln_half_alpha + 0.5 * alpha * (alpha * s2 - 2.0 * r) + ln_erfc(z)
    }
}

/// The two weighted log-components of the flare density at residual r:
/// (ln λ + ln N(r; 0, σ²), ln(1−λ) + ln α − αr) with the exponential part
/// equal to −∞ when r ≤ 0.
#[inline]
pub(crate) fn flare_log_parts(r: f64, lambda: f64, sigma2: f64, alpha: f64) -> (f64, f64) {
    let gauss = if lambda > 0.0 { lambda.ln() + normal_log_density(r, sigma2) } else { f64::NEG_INFINITY };
    let expo = if r > 0.0 && lambda < 1.0 { (1.0 - lambda).ln() + alpha.ln() - alpha * r } else { f64::NEG_INFINITY };
    (gauss, expo)
}

#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// ln of the flare density; −∞ where both components vanish.
pub fn flare_log_density(y: f64, x: &[f64], theta: &FlareParams) -> Result<f64> {
    theta.validate()?;
    if x.len() != theta.beta.len() {
        return Err(Error::Dimension(format!("x has length {} but beta has length {}", x.len(), theta.beta.len())));
    }
    let mu: f64 = x.iter().zip(&theta.beta).map(|(a, b)| a * b).sum();
    let (g, e) = flare_log_parts(y - mu, theta.lambda, theta.sigma2, theta.alpha);
    Ok(log_add_exp(g, e))
}

/// λ·N(y − xᵀβ; 0, σ²) + (1−λ)·α·exp(−α(y − xᵀβ))·1{y − xᵀβ > 0}.
pub fn flare_density(y: f64, x: &[f64], theta: &FlareParams) -> Result<f64> {
    flare_log_density(y, x, theta).map(f64::exp)
}

/// Gaussian density, for tests and reports.
pub fn normal_density(r: f64, sigma2: f64) -> f64 {
    (-(r * r) / (2.0 * sigma2)).exp() / (2.0 * PI * sigma2).sqrt()
}
