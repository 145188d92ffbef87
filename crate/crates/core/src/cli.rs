//! Command-line front end: argument parsing, input loading and the fit,
//! classify, compare, simulate, bootstrap and transform workflows.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flare::{classify_posteriors, posteriors, ClusterLabels, Component, FlareFit};
use crate::inference::{
    bootstrap_se_from, compare_models_with, fit_model, louis_information, ComparisonEntry, FitOptions, ModelFit,
    ModelKind, SeReport,
};
use crate::ingest::{read_input, truncate, wild_records, write_records, Ingested, UserData, TRUNCATION_GRID};
use crate::simulation::{gen_flare_data, monte_carlo_study_with, McOptions, SimSetting, DESK_REPS, FULL_REPS};

pub const DEFAULT_CUTOFF: f64 = 0.5;
pub const DEFAULT_N: usize = 200;
pub const DEFAULT_MC_N: [usize; 2] = [100, 1000];
pub const DEFAULT_USERS: usize = 24;

#[derive(Parser, Debug, Clone)]
#[command(name = "flarereg", version, about = "Flare and EMG regression for right-skewed response times")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub config: RunConfig,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Fit one model family to each user's data.
    Fit,
    /// Label observations Gaussian or exponential from a flare fit.
    Classify,
    /// Fit all four families and report BIC winners per user and threshold.
    Compare,
    /// Run a Monte Carlo study, or emit synthetic data with --emit-data.
    Simulate,
    /// Bootstrap standard errors (plus Louis' method for the flare model).
    Bootstrap,
    /// Convert aiming records to a (user_id, y, x1) regression table.
    Transform,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Input CSV: aiming records or a y,x1,... table.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Report path; stdout when omitted.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = ModelKind::Flare)]
    pub model: ModelKind,
    /// Keep only observations with y <= T seconds.
    #[arg(long, global = true)]
    pub truncate_seconds: Option<f64>,
    /// Exponential label iff 1 - Z >= cutoff.
    #[arg(long, global = true, default_value_t = DEFAULT_CUTOFF)]
    pub cutoff: f64,
    #[arg(long, global = true, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, global = true, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, global = true, default_value_t = 200)]
    pub boot_reps: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// M1..M12, table1, robustness, or wild (aiming records).
    #[arg(long, global = true)]
    pub setting: Option<String>,
    /// Sample size(s), comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Monte Carlo replicates.
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    /// Use B = 1000 Monte Carlo replicates.
    #[arg(long, global = true)]
    pub full_scale: bool,
    /// Also fit the three comparison models in each Monte Carlo replicate.
    #[arg(long, global = true)]
    pub compare_all: bool,
    /// EMG restarts for fit and bootstrap.
    #[arg(long, global = true, default_value_t = 1)]
    pub restarts: usize,
    /// Users to generate with --setting wild.
    #[arg(long, global = true, default_value_t = DEFAULT_USERS)]
    pub users: usize,
    /// Write the generated dataset instead of running a study.
    #[arg(long, global = true)]
    pub emit_data: bool,
    /// Per-observation output table (CSV).
    #[arg(long, global = true)]
    pub table: Option<PathBuf>,
    /// Classify with the flare parameters stored in a fit report.
    #[arg(long, global = true)]
    pub from_report: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cutoff) {
            return Err(Error::Domain(format!("cutoff {} outside [0, 1]", self.cutoff)));
        }
        if let Some(t) = self.truncate_seconds {
            if !(t > 0.0) {
                return Err(Error::Domain(format!("truncation threshold {t} must be > 0")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::Domain(format!("tol {} must be > 0", self.tol)));
        }
        Ok(())
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions { tol: self.tol, max_iter: self.max_iter, emg_restarts: self.restarts.max(1), seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationInfo {
    pub threshold: f64,
    pub retained: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub iterations: usize,
    pub converged: bool,
    pub initial_loglik: f64,
    pub final_loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean_z: f64,
    pub cutoff: f64,
    pub gaussian: usize,
    pub exponential: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserFit {
    pub user_id: String,
    pub n: usize,
    pub truncation: Option<TruncationInfo>,
    pub seconds: f64,
    pub trace: Option<TraceSummary>,
    pub posterior_summary: Option<PosteriorSummary>,
    pub fit: ModelFit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub command: Command,
    pub config: RunConfig,
    pub skipped_rows: usize,
    pub users: Vec<UserFit>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    /// Exponential-generated, labeled exponential.
    pub true_exponential: usize,
    /// Gaussian-generated, labeled exponential.
    pub false_exponential: usize,
    /// Gaussian-generated, labeled Gaussian.
    pub true_gaussian: usize,
    /// Exponential-generated, labeled Gaussian.
    pub false_gaussian: usize,
}

impl Confusion {
    pub fn new(predicted: &[Component], truth: &[Component]) -> Self {
        let mut c = Confusion { true_exponential: 0, false_exponential: 0, true_gaussian: 0, false_gaussian: 0 };
        for (p, t) in predicted.iter().zip(truth) {
            match (p, t) {
                (Component::Exponential, Component::Exponential) => c.true_exponential += 1,
                (Component::Exponential, Component::Gaussian) => c.false_exponential += 1,
                (Component::Gaussian, Component::Gaussian) => c.true_gaussian += 1,
                (Component::Gaussian, Component::Exponential) => c.false_gaussian += 1,
            }
        }
        c
    }

    /// Fraction of exponential labels that are exponential-generated.
    pub fn precision(&self) -> f64 {
        self.true_exponential as f64 / (self.true_exponential + self.false_exponential) as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserLabels {
    pub user_id: String,
    pub n: usize,
    pub gaussian: usize,
    pub exponential: usize,
    pub labels: ClusterLabels,
    pub confusion: Option<Confusion>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub command: Command,
    pub config: RunConfig,
    pub users: Vec<UserLabels>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareCell {
    pub user_id: String,
    pub threshold: Option<f64>,
    pub n: usize,
    pub winner: Option<ModelKind>,
    pub entries: Vec<ComparisonEntry>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub command: Command,
    pub config: RunConfig,
    pub cells: Vec<CompareCell>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserSe {
    pub user_id: String,
    pub n: usize,
    pub bootstrap: SeReport,
    pub louis: Option<SeReport>,
    pub louis_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub command: Command,
    pub config: RunConfig,
    pub users: Vec<UserSe>,
    pub total_seconds: f64,
}

/// Loads the configured input (a file or a generated setting), then applies
/// truncation when requested.
fn load_users(config: &RunConfig) -> Result<(Vec<UserData>, usize, bool)> {
    let (ingested, aiming) = if let Some(path) = &config.input {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Ingest(format!("cannot read {}: {e}", path.display())))?;
        let aiming = text
            .lines()
            .next()
            .is_some_and(|h| h.to_ascii_lowercase().split(',').any(|c| c.trim() == "movement_time_ms"));
        (read_input(path)?, aiming)
    } else if let Some(id) = &config.setting {
        let n = config.n.first().copied().unwrap_or(DEFAULT_N);
        if id.eq_ignore_ascii_case("wild") {
            let recs = wild_records(config.users, n, config.seed);
            let mut users = Vec::new();
            for u in 0..config.users {
                let chunk = &recs[u * n..(u + 1) * n];
                users.push(UserData {
                    user_id: chunk[0].user_id.clone(),
                    data: crate::ingest::records_to_dataset(chunk)?,
                    labels: None,
                });
            }
            (Ingested { users, skipped: Vec::new() }, true)
        } else {
            let setting = setting_by_name(id)?;
            let (data, labels) = gen_flare_data(&setting, n, config.seed)?;
            let user = UserData { user_id: setting.id.clone(), data, labels: Some(labels) };
            (Ingested { users: vec![user], skipped: Vec::new() }, false)
        }
    } else {
        return Err(Error::Domain("either --input or --setting is required".into()));
    };
    Ok((ingested.users, ingested.skipped.len(), aiming))
}

pub fn setting_by_name(id: &str) -> Result<SimSetting> {
    match id.to_ascii_lowercase().as_str() {
        "table1" => Ok(SimSetting::table1()),
        "robustness" => Ok(SimSetting::robustness()),
        _ => SimSetting::preset(id),
    }
}

fn apply_truncation(user: &UserData, threshold: Option<f64>) -> Result<(UserData, Option<TruncationInfo>)> {
    let Some(t) = threshold else {
        return Ok((user.clone(), None));
    };
    let tr = truncate(&user.data, t)?;
    let labels = user.labels.as_ref().map(|l| tr.kept.iter().map(|&i| l[i]).collect());
    let info = TruncationInfo { threshold: t, retained: tr.kept.len(), dropped: tr.dropped };
    Ok((UserData { user_id: user.user_id.clone(), data: tr.data, labels }, Some(info)))
}

fn trace_summary(fit: &ModelFit) -> Option<TraceSummary> {
    let (trace, iterations, converged) = match fit {
        ModelFit::Ols(_) => return None,
        ModelFit::Mixreg2(f) => (&f.loglik_trace, f.iterations, f.converged),
        ModelFit::Emg(f) => (&f.loglik_trace, f.iterations, f.converged),
        ModelFit::Flare(f) => (&f.loglik_trace, f.iterations, f.converged),
    };
    Some(TraceSummary { iterations, converged, initial_loglik: *trace.first()?, final_loglik: *trace.last()? })
}

fn posterior_summary(fit: &FlareFit, cutoff: f64) -> Result<PosteriorSummary> {
    let labels = classify_posteriors(&fit.posteriors, cutoff)?;
    let (gaussian, exponential) = labels.counts();
    let mean_z = fit.posteriors.iter().sum::<f64>() / fit.posteriors.len().max(1) as f64;
    Ok(PosteriorSummary { mean_z, cutoff, gaussian, exponential })
}

fn run_fit(config: &RunConfig) -> Result<FitReport> {
    let start = Instant::now();
    let (users, skipped, _) = load_users(config)?;
    let opts = config.fit_options();
    let mut out = Vec::with_capacity(users.len());
    for user in &users {
        let (u, truncation) = apply_truncation(user, config.truncate_seconds)?;
        let t = Instant::now();
        let fit = fit_model(&u.data, config.model, &opts)?;
        let seconds = t.elapsed().as_secs_f64();
        let posterior_summary = match &fit {
            ModelFit::Flare(f) => Some(posterior_summary(f, config.cutoff)?),
            _ => None,
        };
        out.push(UserFit {
            user_id: u.user_id.clone(),
            n: u.data.n(),
            truncation,
            seconds,
            trace: trace_summary(&fit),
            posterior_summary,
            fit,
        });
    }
    Ok(FitReport {
        command: Command::Fit,
        config: config.clone(),
        skipped_rows: skipped,
        users: out,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}

fn run_classify(config: &RunConfig) -> Result<ClassifyReport> {
    let start = Instant::now();
    let stored = match &config.from_report {
        Some(path) => Some(load_fit_report(path)?),
        None => None,
    };
    let (users, _, _) = load_users(config)?;
    let opts = config.fit_options();
    let mut out = Vec::with_capacity(users.len());
    let mut table_rows = Vec::new();
    for user in &users {
        let (u, _) = apply_truncation(user, config.truncate_seconds)?;
        let theta = match &stored {
            Some(report) => {
                let entry = report
                    .users
                    .iter()
                    .find(|f| f.user_id == u.user_id)
                    .ok_or_else(|| Error::Domain(format!("report has no fit for user {:?}", u.user_id)))?;
                match &entry.fit {
                    ModelFit::Flare(f) => f.params.clone(),
                    other => {
                        return Err(Error::Domain(format!(
                            "classification needs a flare fit, report holds {}",
                            other.kind()
                        )))
                    }
                }
            }
            None => match fit_model(&u.data, ModelKind::Flare, &opts)? {
                ModelFit::Flare(f) => f.params,
                _ => unreachable!("flare fit requested"),
            },
        };
        let z = posteriors(&u.data, &theta)?;
        let labels = classify_posteriors(&z, config.cutoff)?;
        let (gaussian, exponential) = labels.counts();
        let confusion = u.labels.as_ref().map(|t| Confusion::new(&labels.labels, t));
        if config.table.is_some() {
            let fitted = u.data.fitted(&theta.beta);
            for i in 0..u.data.n() {
                table_rows.push((u.user_id.clone(), u.data.row(i), u.data.y()[i], fitted[i], z[i], labels.labels[i]));
            }
        }
        out.push(UserLabels { user_id: u.user_id.clone(), n: u.data.n(), gaussian, exponential, labels, confusion });
    }
    if let Some(path) = &config.table {
        let mut buf = String::from("user_id,y,x,fitted,residual,z,label\n");
        for (user, row, y, f, z, l) in table_rows {
            let x: Vec<String> = row[1..].iter().map(f64::to_string).collect();
            let label = match l {
                Component::Gaussian => "gaussian",
                Component::Exponential => "exponential",
            };
            buf.push_str(&format!("{user},{y},{},{f},{},{z},{label}\n", x.join(" "), y - f));
        }
        write_atomic(path, buf.as_bytes())?;
    }
    Ok(ClassifyReport {
        command: Command::Classify,
        config: config.clone(),
        users: out,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}

fn run_compare(config: &RunConfig) -> Result<CompareReport> {
    let start = Instant::now();
    let (users, _, aiming) = load_users(config)?;
    let thresholds: Vec<Option<f64>> = match config.truncate_seconds {
        Some(t) => vec![Some(t)],
        None if aiming => TRUNCATION_GRID.iter().map(|&t| Some(t)).collect(),
        None => vec![None],
    };
    let opts = FitOptions { emg_restarts: config.restarts.max(5), ..config.fit_options() };
    let mut cells = Vec::new();
    for user in &users {
        for &threshold in &thresholds {
            let cell = match apply_truncation(user, threshold) {
                Ok((u, _)) => match compare_models_with(&u.data, &opts) {
                    Ok(r) => CompareCell {
                        user_id: u.user_id.clone(),
                        threshold,
                        n: r.n,
                        winner: Some(r.winner),
                        entries: r.entries,
                        error: None,
                    },
                    Err(e) => CompareCell {
                        user_id: u.user_id.clone(),
                        threshold,
                        n: u.data.n(),
                        winner: None,
                        entries: Vec::new(),
                        error: Some(e.to_string()),
                    },
                },
                Err(e) => CompareCell {
                    user_id: user.user_id.clone(),
                    threshold,
                    n: 0,
                    winner: None,
                    entries: Vec::new(),
                    error: Some(e.to_string()),
                },
            };
            cells.push(cell);
        }
    }
    Ok(CompareReport {
        command: Command::Compare,
        config: config.clone(),
        cells,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}

fn run_bootstrap(config: &RunConfig) -> Result<BootstrapReport> {
    let start = Instant::now();
    let (users, _, _) = load_users(config)?;
    let opts = config.fit_options();
    let mut out = Vec::new();
    for user in &users {
        let (u, _) = apply_truncation(user, config.truncate_seconds)?;
        let full = fit_model(&u.data, config.model, &opts)?;
        let bootstrap = bootstrap_se_from(&u.data, &full, config.boot_reps, config.seed, &opts)?;
        let (louis, louis_error) = match &full {
            ModelFit::Flare(f) => match louis_information(&u.data, f) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            },
            _ => (None, None),
        };
        out.push(UserSe { user_id: u.user_id.clone(), n: u.data.n(), bootstrap, louis, louis_error });
    }
    Ok(BootstrapReport {
        command: Command::Bootstrap,
        config: config.clone(),
        users: out,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}

fn dataset_csv(users: &[UserData]) -> String {
    let p = users.first().map_or(1, |u| u.data.p());
    let mut s = String::from("user_id,y");
    for j in 1..p {
        s.push_str(&format!(",x{j}"));
    }
    let with_labels = users.iter().all(|u| u.labels.is_some());
    if with_labels {
        s.push_str(",label");
    }
    s.push('\n');
    for u in users {
        for i in 0..u.data.n() {
            s.push_str(&format!("{},{}", u.user_id, u.data.y()[i]));
            for v in &u.data.row(i)[1..] {
                s.push_str(&format!(",{v}"));
            }
            if let Some(l) = &u.labels {
                s.push_str(match l[i] {
                    Component::Gaussian => ",gaussian",
                    Component::Exponential => ",exponential",
                });
            }
            s.push('\n');
        }
    }
    s
}

fn run_simulate(config: &RunConfig) -> Result<Vec<u8>> {
    let id = config.setting.as_deref().ok_or_else(|| Error::Domain("simulate needs --setting".into()))?;
    if id.eq_ignore_ascii_case("wild") {
        let n = config.n.first().copied().unwrap_or(DEFAULT_N);
        let recs = wild_records(config.users, n, config.seed);
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &recs {
            w.serialize(r)?;
        }
        return w.into_inner().map_err(|e| Error::Io(e.into_error()));
    }
    if config.emit_data {
        let (users, _, _) = load_users(&RunConfig { input: None, ..config.clone() })?;
        return Ok(dataset_csv(&users).into_bytes());
    }
    let setting = setting_by_name(id)?;
    let n_list = if config.n.is_empty() { DEFAULT_MC_N.to_vec() } else { config.n.clone() };
    let reps = if config.full_scale { FULL_REPS } else { config.reps.unwrap_or(DESK_REPS) };
    let opts =
        McOptions { tol: config.tol, max_iter: config.max_iter, compare_all: config.compare_all, same_seed: false };
    let report = monte_carlo_study_with(&setting, &n_list, reps, config.seed, &opts)?;
    if let Some(path) = &config.table {
        write_atomic(path, report.to_table().as_bytes())?;
    }
    Ok(serde_json::to_vec_pretty(&serde_json::json!({
        "command": Command::Simulate,
        "config": config,
        "report": report,
    }))?)
}

fn run_transform(config: &RunConfig) -> Result<Vec<u8>> {
    let path = config.input.as_ref().ok_or_else(|| Error::Domain("transform needs --input".into()))?;
    let ingested = crate::ingest::ingest(path)?;
    let mut users = Vec::new();
    for u in &ingested.users {
        match apply_truncation(u, config.truncate_seconds) {
            Ok((t, _)) => users.push(t),
            Err(Error::EmptyTruncation { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(dataset_csv(&users).into_bytes())
}

/// Writes via a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_fit_report(path: &Path) -> Result<FitReport> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Runs one command and returns the bytes of its report.
pub fn execute(cli: &Cli) -> Result<Vec<u8>> {
    let config = &cli.config;
    config.validate()?;
    match cli.command {
        Command::Fit => to_json(&run_fit(config)?),
        Command::Classify => to_json(&run_classify(config)?),
        Command::Compare => to_json(&run_compare(config)?),
        Command::Bootstrap => to_json(&run_bootstrap(config)?),
        Command::Simulate => run_simulate(config),
        Command::Transform => run_transform(config),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Executes `cli` and writes the report to --output or stdout.
pub fn run(cli: &Cli) -> Result<()> {
    let bytes = execute(cli)?;
    match &cli.config.output {
        Some(path) => write_atomic(path, &bytes),
        None => {
            std::io::stdout().write_all(&bytes)?;
            Ok(())
        }
    }
}

/// `{"error": {"kind": ..., "message": ...}}`
pub fn error_record(e: &Error) -> String {
    serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } }).to_string()
}

/// Dataset of one generated setting, for callers that bypass the CLI.
pub fn generated_dataset(setting: &str, n: usize, seed: u64) -> Result<(Dataset, Vec<Component>)> {
    gen_flare_data(&setting_by_name(setting)?, n, seed)
}

/// Writes the wild-style aiming records used by the examples.
pub fn write_wild(path: &Path, users: usize, per_user: usize, seed: u64) -> Result<()> {
    write_records(path, &wild_records(users, per_user, seed))
}
