//! Synthetic data from the flare and EMG regression models, the M1–M12
//! settings, and Monte Carlo RMSE/bias studies.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::distr::Open01;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::FlareParams;
use crate::error::{Error, Result};
use crate::flare::{default_flare_init, fit_flare, Component};
use crate::inference::{compare_models_with, FitOptions, ModelKind};

/// A study aborts when more than this fraction of replicate fits fail.
pub const MAX_MC_FAILURE_RATE: f64 = 0.05;

/// A block is flagged when some parameter's RMSE exceeds this multiple of
/// its true magnitude. A report is flagged when its largest-n block is.
pub const HIGH_RMSE_REL: f64 = 0.5;

pub const DESK_REPS: usize = 100;
pub const FULL_REPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictorLaw {
    /// Non-intercept predictors ~ Unif[−10, 10].
    UnifMinus10To10,
    /// Non-intercept predictors ~ N(0, 1).
    StdNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    pub id: String,
    pub lambda: f64,
    /// Includes the intercept as its first entry.
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub alpha: f64,
    pub predictor_law: PredictorLaw,
    pub true_labels_emitted: bool,
}

const PRESETS: [(&str, f64, usize, f64); 12] = [
    ("M1", 0.333, 0, 0.05),
    ("M2", 0.333, 0, 0.17),
    ("M3", 0.333, 0, 0.5),
    ("M4", 0.9, 0, 0.05),
    ("M5", 0.9, 0, 0.17),
    ("M6", 0.9, 0, 0.5),
    ("M7", 0.5, 1, 0.04),
    ("M8", 0.5, 1, 0.2),
    ("M9", 0.5, 1, 0.5),
    ("M10", 0.9, 1, 0.04),
    ("M11", 0.9, 1, 0.2),
    ("M12", 0.9, 1, 0.5),
];

impl SimSetting {
    pub fn custom(id: &str, lambda: f64, beta: Vec<f64>, sigma: f64, alpha: f64, law: PredictorLaw) -> Result<Self> {
        let s = Self { id: id.to_string(), lambda, beta, sigma, alpha, predictor_law: law, true_labels_emitted: true };
        s.validate()?;
        Ok(s)
    }

    /// One of the twelve Monte Carlo settings M1–M12.
    pub fn preset(id: &str) -> Result<Self> {
        let (name, lambda, b, alpha) = PRESETS
            .iter()
            .find(|(name, ..)| name.eq_ignore_ascii_case(id))
            .copied()
            .ok_or_else(|| Error::Domain(format!("unknown setting {id:?}; expected M1..M12")))?;
        let beta = if b == 0 { vec![9.0, 3.0] } else { vec![-2.0, 1.0, 13.0] };
        Self::custom(name, lambda, beta, 0.5, alpha, PredictorLaw::UnifMinus10To10)
    }

    pub fn presets() -> Vec<Self> {
        PRESETS.iter().map(|(id, ..)| Self::preset(id).expect("preset")).collect()
    }

    /// θ = (0.6, (−2, 4), 0.5², 0.05) with standard normal predictor.
    pub fn table1() -> Self {
        Self::custom("table1", 0.6, vec![-2.0, 4.0], 0.5, 0.05, PredictorLaw::StdNormal).expect("valid")
    }

    /// θ = (0.5, (1, 4), 0.5², 0.05) with standard normal predictor, used for
    /// random-start robustness runs.
    pub fn robustness() -> Self {
        Self::custom("robustness", 0.5, vec![1.0, 4.0], 0.5, 0.05, PredictorLaw::StdNormal).expect("valid")
    }

    pub fn validate(&self) -> Result<()> {
        self.theta().validate()
    }

    pub fn theta(&self) -> FlareParams {
        FlareParams { lambda: self.lambda, beta: self.beta.clone(), sigma2: self.sigma * self.sigma, alpha: self.alpha }
    }
}

fn draw_predictor<R: Rng>(rng: &mut R, law: PredictorLaw) -> f64 {
    match law {
        PredictorLaw::UnifMinus10To10 => rng.random_range(-10.0..10.0),
        PredictorLaw::StdNormal => StandardNormal.sample(rng),
    }
}

/// Exp(α) by inversion of a uniform draw.
fn draw_exponential<R: Rng>(rng: &mut R, alpha: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / alpha
}

fn linear<R: Rng>(rng: &mut R, beta: &[f64], law: PredictorLaw, row: &mut Vec<f64>) -> f64 {
    row.clear();
    let mut mu = beta[0];
    for b in &beta[1..] {
        let v = draw_predictor(rng, law);
        row.push(v);
        mu += b * v;
    }
    mu
}

/// Draws n observations from the flare regression model. Labels record the
/// component that generated each error.
pub fn gen_flare_data(setting: &SimSetting, n: usize, seed: u64) -> Result<(Dataset, Vec<Component>)> {
    setting.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut row = Vec::new();
    for _ in 0..n {
        let mu = linear(&mut rng, &setting.beta, setting.predictor_law, &mut row);
        let u: f64 = rng.random();
        let (eps, c) = if u < setting.lambda {
            let g: f64 = StandardNormal.sample(&mut rng);
            (setting.sigma * g, Component::Gaussian)
        } else {
            (draw_exponential(&mut rng, setting.alpha), Component::Exponential)
        };
        rows.push(row.clone());
        y.push(mu + eps);
        labels.push(c);
    }
    Ok((Dataset::from_rows(&rows, y)?, labels))
}

/// Draws n observations y = xᵀβ + G + E with G ~ N(0, σ²) and E ~ Exp(α),
/// standard normal predictors.
pub fn gen_emg_data(beta: &[f64], sigma: f64, alpha: f64, n: usize, seed: u64) -> Result<Dataset> {
    gen_emg_data_with(beta, sigma, alpha, n, seed, PredictorLaw::StdNormal)
}

pub fn gen_emg_data_with(
    beta: &[f64],
    sigma: f64,
    alpha: f64,
    n: usize,
    seed: u64,
    law: PredictorLaw,
) -> Result<Dataset> {
    crate::distributions::EmgParams::new(beta.to_vec(), sigma * sigma, alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut row = Vec::new();
    for _ in 0..n {
        let mu = linear(&mut rng, beta, law, &mut row);
        let g: f64 = StandardNormal.sample(&mut rng);
        let e = draw_exponential(&mut rng, alpha);
        rows.push(row.clone());
        y.push(mu + sigma * g + e);
    }
    Dataset::from_rows(&rows, y)
}

/// Random starting values λ ~ U(0,1), βⱼ ~ N(0,1), σ ~ U(0,5), α ~ U(0,1).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomStartPolicy;

impl RandomStartPolicy {
    pub fn sample<R: Rng>(&self, rng: &mut R, p: usize) -> FlareParams {
        let lambda: f64 = rng.sample(Open01);
        let beta = (0..p).map(|_| StandardNormal.sample(rng)).collect();
        let sigma = 5.0 * rng.sample::<f64, _>(Open01);
        let alpha: f64 = rng.sample(Open01);
        FlareParams { lambda, beta, sigma2: sigma * sigma, alpha }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Also fit OLS, mixreg2 and EMG and count BIC wins.
    pub compare_all: bool,
    /// Reuse one dataset seed for every replicate.
    pub same_seed: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 1000, compare_all: false, same_seed: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStat {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McBlock {
    pub n: usize,
    pub successes: usize,
    pub failures: usize,
    pub not_converged: usize,
    pub params: Vec<ParamStat>,
    pub bic_wins: Option<BTreeMap<ModelKind, usize>>,
    pub high_rmse: bool,
}

impl McBlock {
    pub fn stat(&self, name: &str) -> Option<&ParamStat> {
        self.params.iter().find(|s| s.name == name)
    }

    /// max over parameters of RMSE / |truth|.
    pub fn max_relative_rmse(&self) -> f64 {
        self.params.iter().map(|s| s.rmse / s.truth.abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub setting: SimSetting,
    pub replicates: usize,
    pub seed: u64,
    pub blocks: Vec<McBlock>,
    pub high_rmse: bool,
}

impl McReport {
    pub fn block(&self, n: usize) -> Option<&McBlock> {
        self.blocks.iter().find(|b| b.n == n)
    }

    /// One line per (setting, n, parameter).
    pub fn to_table(&self) -> String {
        let mut s = String::from("setting\tn\tparameter\ttruth\tmean\tbias\trmse\n");
        for b in &self.blocks {
            for p in &b.params {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
                    self.setting.id, b.n, p.name, p.truth, p.mean, p.bias, p.rmse
                );
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Seed of the dataset for replicate `b` at sample size `n`.
pub fn replicate_seed(seed: u64, n: usize, b: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) ^ b as u64);
    rng.next_u64()
}

struct Replicate {
    estimate: Vec<f64>,
    converged: bool,
    winner: Option<ModelKind>,
}

fn run_replicate(setting: &SimSetting, n: usize, seed: u64, opts: &McOptions) -> Result<Replicate> {
    let (data, _) = gen_flare_data(setting, n, seed)?;
    let init = default_flare_init(&data)?;
    let fit = fit_flare(&data, &init, opts.tol, opts.max_iter)?;
    let winner = if opts.compare_all {
        let fo = FitOptions { tol: opts.tol, max_iter: opts.max_iter, seed, ..FitOptions::default() };
        Some(compare_models_with(&data, &fo)?.winner)
    } else {
        None
    };
    Ok(Replicate { estimate: fit.params.to_vec(), converged: fit.converged, winner })
}

/// Generates `reps` datasets for each n, fits the flare model to each, and
/// summarizes RMSE and mean bias per parameter.
pub fn monte_carlo_study(setting: &SimSetting, n_list: &[usize], reps: usize, seed: u64) -> Result<McReport> {
    monte_carlo_study_with(setting, n_list, reps, seed, &McOptions::default())
}

pub fn monte_carlo_study_with(
    setting: &SimSetting,
    n_list: &[usize],
    reps: usize,
    seed: u64,
    opts: &McOptions,
) -> Result<McReport> {
    setting.validate()?;
    if reps < 2 {
        return Err(Error::Domain(format!("Monte Carlo study needs B >= 2, got {reps}")));
    }
    let truth = setting.theta().to_vec();
    let names = FlareParams::names(setting.beta.len());
    let mut blocks = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let results: Vec<Result<Replicate>> = (0..reps)
            .into_par_iter()
            .map(|b| {
                let s = replicate_seed(seed, n, if opts.same_seed { 0 } else { b });
                run_replicate(setting, n, s, opts)
            })
            .collect();
        let ok: Vec<Replicate> = results.into_iter().filter_map(|r| r.ok()).collect();
        let failures = reps - ok.len();
        if failures as f64 > MAX_MC_FAILURE_RATE * reps as f64 || ok.is_empty() {
            return Err(Error::MonteCarlo { failures, replicates: reps, n });
        }
        let m = ok.len() as f64;
        let params: Vec<ParamStat> = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let mean = ok.iter().map(|r| r.estimate[j]).sum::<f64>() / m;
                let mse = ok.iter().map(|r| (r.estimate[j] - truth[j]).powi(2)).sum::<f64>() / m;
                ParamStat { name: name.clone(), truth: truth[j], mean, bias: mean - truth[j], rmse: mse.sqrt() }
            })
            .collect();
        let bic_wins = opts.compare_all.then(|| {
            let mut w: BTreeMap<ModelKind, usize> = ModelKind::ALL.iter().map(|&k| (k, 0)).collect();
            for r in &ok {
                if let Some(k) = r.winner {
                    *w.entry(k).or_default() += 1;
                }
            }
            w
        });
        let mut block = McBlock {
            n,
            successes: ok.len(),
            failures,
            not_converged: ok.iter().filter(|r| !r.converged).count(),
            params,
            bic_wins,
            high_rmse: false,
        };
        block.high_rmse = block.max_relative_rmse() > HIGH_RMSE_REL;
        blocks.push(block);
    }
    let high_rmse = blocks.iter().max_by_key(|b| b.n).is_some_and(|b| b.high_rmse);
    Ok(McReport { setting: setting.clone(), replicates: reps, seed, blocks, high_rmse })
}
