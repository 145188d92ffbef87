//! Standard errors (pairs bootstrap and Louis' method) and BIC comparison of
//! the four model families.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    default_mixreg2_init, fit_mixreg2, fit_ols, mixreg2_n_params, ols_n_params, LinFit, MixRegFit, MixRegParams,
};
use crate::data::Dataset;
use crate::distributions::{EmgParams, FlareParams};
use crate::emg::{default_emg_init, fit_emg, fit_emg_multistart, EmgFit};
use crate::error::{Error, Result};
use crate::flare::{default_flare_init, fit_flare, posteriors, FlareFit};
use crate::linalg::inverse_spd;

/// Bootstrap aborts when more than this fraction of replicates fail.
pub const MAX_BOOT_FAILURE_RATE: f64 = 0.2;

/// −2ℓ + k ln n.
pub fn bic(loglik: f64, k: usize, n: usize) -> f64 {
    -2.0 * loglik + k as f64 * (n as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ols,
    Mixreg2,
    Emg,
    Flare,
}

impl ModelKind {
    /// All families in tie-break order.
    pub const ALL: [ModelKind; 4] = [ModelKind::Ols, ModelKind::Mixreg2, ModelKind::Emg, ModelKind::Flare];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ols => "ols",
            ModelKind::Mixreg2 => "mixreg2",
            ModelKind::Emg => "emg",
            ModelKind::Flare => "flare",
        }
    }

    pub fn n_params(self, p: usize) -> usize {
        match self {
            ModelKind::Ols => ols_n_params(p),
            ModelKind::Mixreg2 => mixreg2_n_params(p),
            ModelKind::Emg => crate::emg::n_params(p),
            ModelKind::Flare => crate::flare::n_params(p),
        }
    }

    pub fn param_names(self, p: usize) -> Vec<String> {
        match self {
            ModelKind::Ols => {
                let mut v: Vec<String> = (0..p).map(|j| format!("beta{j}")).collect();
                v.push("sigma2".into());
                v
            }
            ModelKind::Mixreg2 => MixRegParams::names(p),
            ModelKind::Emg => EmgParams::names(p),
            ModelKind::Flare => FlareParams::names(p),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub emg_restarts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 1000, emg_restarts: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelFit {
    Ols(LinFit),
    Mixreg2(MixRegFit),
    Emg(EmgFit),
    Flare(FlareFit),
}

impl ModelFit {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelFit::Ols(_) => ModelKind::Ols,
            ModelFit::Mixreg2(_) => ModelKind::Mixreg2,
            ModelFit::Emg(_) => ModelKind::Emg,
            ModelFit::Flare(_) => ModelKind::Flare,
        }
    }

    /// Parameter vector in the order of [`ModelKind::param_names`].
    pub fn params(&self) -> Vec<f64> {
        match self {
            ModelFit::Ols(f) => {
                let mut v = f.beta.clone();
                v.push(f.sigma2);
                v
            }
            ModelFit::Mixreg2(f) => f.params.to_vec(),
            ModelFit::Emg(f) => f.params.to_vec(),
            ModelFit::Flare(f) => f.params.to_vec(),
        }
    }

    pub fn loglik(&self) -> f64 {
        match self {
            ModelFit::Ols(f) => f.loglik,
            ModelFit::Mixreg2(f) => f.loglik,
            ModelFit::Emg(f) => f.loglik,
            ModelFit::Flare(f) => f.loglik,
        }
    }

    pub fn bic(&self) -> f64 {
        match self {
            ModelFit::Ols(f) => f.bic,
            ModelFit::Mixreg2(f) => f.bic,
            ModelFit::Emg(f) => f.bic,
            ModelFit::Flare(f) => f.bic,
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            ModelFit::Ols(_) => true,
            ModelFit::Mixreg2(f) => f.converged,
            ModelFit::Emg(f) => f.converged,
            ModelFit::Flare(f) => f.converged,
        }
    }
}

/// Fits `kind` from its default starting values.
pub fn fit_model(data: &Dataset, kind: ModelKind, opts: &FitOptions) -> Result<ModelFit> {
    let k = kind.n_params(data.p());
    if data.n() <= k {
        return Err(Error::Fit(format!("{kind} needs more than {k} observations, got {}", data.n())));
    }
    Ok(match kind {
        ModelKind::Ols => ModelFit::Ols(fit_ols(data)?),
        ModelKind::Mixreg2 => {
            let init = default_mixreg2_init(data, opts.seed)?;
            ModelFit::Mixreg2(fit_mixreg2(data, &init, opts.tol, opts.max_iter)?)
        }
        ModelKind::Emg => {
            let init = default_emg_init(data)?;
            ModelFit::Emg(fit_emg_multistart(data, &init, opts.tol, opts.max_iter, opts.emg_restarts, opts.seed)?)
        }
        ModelKind::Flare => {
            let init = default_flare_init(data)?;
            ModelFit::Flare(fit_flare(data, &init, opts.tol, opts.max_iter)?)
        }
    })
}

/// Refit of the same family started at `warm`.
fn refit_warm(data: &Dataset, warm: &ModelFit, opts: &FitOptions) -> Result<Vec<f64>> {
    let fit = match warm {
        ModelFit::Ols(_) => ModelFit::Ols(fit_ols(data)?),
        ModelFit::Mixreg2(f) => ModelFit::Mixreg2(fit_mixreg2(data, &f.params, opts.tol, opts.max_iter)?),
        ModelFit::Emg(f) => ModelFit::Emg(fit_emg(data, &f.params, opts.tol, opts.max_iter)?),
        ModelFit::Flare(f) => ModelFit::Flare(fit_flare(data, &f.params, opts.tol, opts.max_iter)?),
    };
    let v = fit.params();
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Fit("non-finite replicate estimate".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeMethod {
    Bootstrap,
    Louis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeReport {
    pub method: SeMethod,
    pub names: Vec<String>,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    /// Successful bootstrap replicates.
    pub replicates: Option<usize>,
    pub failures: Option<usize>,
    /// Louis observed information, row-major.
    pub info_matrix: Option<Vec<Vec<f64>>>,
}

/// Resampled row indices for bootstrap replicate `b`.
pub fn bootstrap_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn sample_sd(values: &[Vec<f64>], j: usize) -> f64 {
    let m = values.len() as f64;
    let mean = values.iter().map(|v| v[j]).sum::<f64>() / m;
    (values.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
}

/// Pairs-bootstrap standard errors with default fit options.
pub fn bootstrap_se(data: &Dataset, model: ModelKind, reps: usize, seed: u64) -> Result<SeReport> {
    let opts = FitOptions { seed, ..FitOptions::default() };
    let full = fit_model(data, model, &opts)?;
    bootstrap_se_from(data, &full, reps, seed, &opts)
}

/// Pairs-bootstrap standard errors around an existing full-data fit; every
/// replicate is warm-started at that fit.
pub fn bootstrap_se_from(
    data: &Dataset,
    full: &ModelFit,
    reps: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<SeReport> {
    if reps < 2 {
        return Err(Error::Domain(format!("bootstrap needs B >= 2, got {reps}")));
    }
    let results: Vec<Option<Vec<f64>>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let sample = data.select(&bootstrap_indices(data.n(), seed, b));
            refit_warm(&sample, full, opts).ok()
        })
        .collect();
    let ok: Vec<Vec<f64>> = results.into_iter().flatten().collect();
    let failures = reps - ok.len();
    if failures as f64 > MAX_BOOT_FAILURE_RATE * reps as f64 || ok.len() < 2 {
        return Err(Error::Bootstrap { failures, replicates: reps });
    }
    let estimate = full.params();
    let se = (0..estimate.len()).map(|j| sample_sd(&ok, j)).collect();
    Ok(SeReport {
        method: SeMethod::Bootstrap,
        names: full.kind().param_names(data.p()),
        estimate,
        se,
        replicates: Some(ok.len()),
        failures: Some(failures),
        info_matrix: None,
    })
}

/// Louis observed information of the flare model at θ, with memberships
/// taken as the posteriors at θ. Parameter order (λ, β, σ², α).
pub fn louis_matrix(data: &Dataset, theta: &FlareParams) -> Result<DMatrix<f64>> {
    let z = posteriors(data, theta)?;
    let p = data.p();
    let d = p + 3;
    let (is2, ia) = (p + 1, p + 2);
    let FlareParams { lambda, sigma2, alpha, .. } = *theta;
    let r = data.residuals(&theta.beta);
    let s4 = sigma2 * sigma2;
    let s6 = s4 * sigma2;
    let mut info = DMatrix::zeros(d, d);
    let mut a = DVector::zeros(d);
    let mut b = DVector::zeros(d);

    for (i, (&ri, &zi)) in r.iter().zip(&z).enumerate() {
        let x = data.x().row(i);
        let w = 1.0 - zi;

        // −Z·A: Gaussian-part Hessian
        if zi > 0.0 {
            info[(0, 0)] += zi / (lambda * lambda);
            for j in 0..p {
                for k in 0..p {
                    info[(1 + j, 1 + k)] += zi * x[j] * x[k] / sigma2;
                }
                let v = zi * x[j] * ri / s4;
                info[(1 + j, is2)] += v;
                info[(is2, 1 + j)] += v;
            }
            info[(is2, is2)] -= zi * (0.5 / s4 - ri * ri / s6);
        }
        // −(1−Z)·B: exponential-part Hessian
        if w > 0.0 {
            info[(0, 0)] += w / ((1.0 - lambda) * (1.0 - lambda));
            info[(ia, ia)] += w / (alpha * alpha);
            for j in 0..p {
                info[(1 + j, ia)] -= w * x[j];
                info[(ia, 1 + j)] -= w * x[j];
            }
        }
        // −Z(1−Z)(a − b)(a − b)ᵀ: missing information
        let v = zi * w;
        if v > 0.0 {
            a.fill(0.0);
            b.fill(0.0);
            a[0] = 1.0 / lambda;
            b[0] = -1.0 / (1.0 - lambda);
            for j in 0..p {
                a[1 + j] = x[j] * ri / sigma2;
                b[1 + j] = alpha * x[j];
            }
            a[is2] = -0.5 / sigma2 + ri * ri / (2.0 * s4);
            b[ia] = 1.0 / alpha - ri;
            let diff = &a - &b;
            info -= v * &diff * diff.transpose();
        }
    }
    Ok(info)
}

/// Louis-method standard errors for a converged, non-degenerate flare fit.
pub fn louis_information(data: &Dataset, fit: &FlareFit) -> Result<SeReport> {
    let theta = &fit.params;
    if !(theta.lambda > 0.0 && theta.lambda < 1.0) {
        return Err(Error::Information(format!("lambda = {} is on the boundary", theta.lambda)));
    }
    if !fit.converged {
        return Err(Error::Information("fit did not converge".into()));
    }
    let info = louis_matrix(data, theta)?;
    let cov = inverse_spd(&info).ok_or_else(|| Error::Information("Cholesky factorization failed".into()))?;
    let se: Vec<f64> = (0..info.nrows()).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let rows = (0..info.nrows()).map(|i| info.row(i).iter().copied().collect()).collect();
    Ok(SeReport {
        method: SeMethod::Louis,
        names: FlareParams::names(data.p()),
        estimate: theta.to_vec(),
        se,
        replicates: None,
        failures: None,
        info_matrix: Some(rows),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub model: ModelKind,
    pub k: usize,
    pub n: usize,
    pub loglik: Option<f64>,
    pub bic: Option<f64>,
    pub converged: Option<bool>,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n: usize,
    pub entries: Vec<ComparisonEntry>,
    pub winner: ModelKind,
}

impl ComparisonReport {
    pub fn entry(&self, model: ModelKind) -> Option<&ComparisonEntry> {
        self.entries.iter().find(|e| e.model == model)
    }
}

/// Index of the smallest finite BIC; ties go to the earliest entry.
pub fn select_winner(entries: &[ComparisonEntry]) -> Option<ModelKind> {
    let mut best: Option<(f64, ModelKind)> = None;
    for e in entries {
        if let Some(b) = e.bic.filter(|b| b.is_finite()) {
            if best.is_none_or(|(bb, _)| b < bb) {
                best = Some((b, e.model));
            }
        }
    }
    best.map(|(_, m)| m)
}

pub fn compare_models(data: &Dataset, seed: u64) -> Result<ComparisonReport> {
    compare_models_with(data, &FitOptions { seed, ..FitOptions::default() })
}

/// Fits all four families and picks the smallest BIC. Per-model failures are
/// recorded; an error is returned only when no family could be fitted.
pub fn compare_models_with(data: &Dataset, opts: &FitOptions) -> Result<ComparisonReport> {
    let (n, p) = (data.n(), data.p());
    let entries: Vec<ComparisonEntry> = ModelKind::ALL
        .iter()
        .map(|&model| {
            let start = Instant::now();
            let res = fit_model(data, model, opts);
            let seconds = start.elapsed().as_secs_f64();
            let k = model.n_params(p);
            match res {
                Ok(f) => ComparisonEntry {
                    model,
                    k,
                    n,
                    loglik: Some(f.loglik()),
                    bic: Some(f.bic()),
                    converged: Some(f.converged()),
                    seconds,
                    error: None,
                },
                Err(e) => ComparisonEntry {
                    model,
                    k,
                    n,
                    loglik: None,
                    bic: None,
                    converged: None,
                    seconds,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    match select_winner(&entries) {
        Some(winner) => Ok(ComparisonReport { n, entries, winner }),
        None => {
            let msg = entries
                .iter()
                .map(|e| format!("{}: {}", e.model, e.error.as_deref().unwrap_or("non-finite BIC")))
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::NoWinner(msg))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bic_values() {
        assert_eq!(bic(0.0, 1, 1), 0.0);
        assert!((bic(-100.0, 5, 100) - (200.0 + 5.0 * 100f64.ln())).abs() < 1e-12);
        assert!((bic(-100.0, 5, 100) - 223.0259).abs() < 1e-4);
        let e = std::f64::consts::E;
        assert!((bic(-3.0, 8, 1) - bic(-3.0, 4, 1)).abs() < 1e-15);
        let d = bic(-3.0, 8, 3) - bic(-3.0, 4, 3);
        assert!(d > 0.0);
        let k = 4;
        let ne = bic(-3.0, 2 * k, 1) + 2.0 * k as f64 * e.ln() - bic(-3.0, k, 1) - k as f64 * e.ln();
        assert!((ne - k as f64).abs() < 1e-12);
    }

    #[test]
    fn winner_ties_break_by_model_order() {
        let mk = |model, bic| ComparisonEntry {
            model,
            k: 1,
            n: 1,
            loglik: Some(0.0),
            bic: Some(bic),
            converged: Some(true),
            seconds: 0.0,
            error: None,
        };
        let e = vec![mk(ModelKind::Ols, 5.0), mk(ModelKind::Emg, 5.0), mk(ModelKind::Flare, 6.0)];
        assert_eq!(select_winner(&e), Some(ModelKind::Ols));
    }

    #[test]
    fn too_few_observations_gives_no_winner() {
        let d = Dataset::from_predictors(&[vec![0.0, 1.0]], vec![1.0, 2.0]).unwrap();
        assert!(matches!(compare_models(&d, 1), Err(Error::NoWinner(_))));
    }

    #[test]
    fn bootstrap_indices_are_reproducible() {
        assert_eq!(bootstrap_indices(50, 3, 7), bootstrap_indices(50, 3, 7));
        assert_ne!(bootstrap_indices(50, 3, 7), bootstrap_indices(50, 3, 8));
    }
}
