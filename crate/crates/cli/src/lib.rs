//! Command-line runner: simulate, train, evaluate, predict, and risk-split.
//!
//! Every command is a pure function of its configuration, input files, and
//! seed. Settings come from an optional JSON config file; flags override it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use odesurv::data::{simulate_crossing, split};
use odesurv::metrics::{self, evaluate, km_survival, logrank_test, median_time, risk_split, SurvivalMatrix, DEFAULT_LEVELS};
use odesurv::model::predict_curves;
use odesurv::train::{fit, FitError, ModelSpec, TrainConfig, TrainHistory};
use odesurv::{Dataset, OdeConfig, SurvivalModel};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] odesurv::Error),
    #[error("{source}")]
    Fit {
        source: FitError,
        history_path: Option<PathBuf>,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Fit { source, .. } if source.error.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(e) if e.is_numerical() => "numerical",
            CliError::Core(_) => "input",
            CliError::Fit { source, .. } if source.error.is_numerical() => "numerical",
            CliError::Fit { .. } => "training",
            CliError::Io { .. } => "io",
        }
    }

    /// One-line JSON description for stderr.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let CliError::Fit { source, history_path } = self {
            v["epochs_completed"] = serde_json::json!(source.history.val_loss.len().saturating_sub(1));
            if let Some(p) = history_path {
                v["history"] = serde_json::json!(p);
            }
        }
        v.to_string()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "odesurv", version, about = "Neural-ODE survival models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the crossing-curves simulation as CSV.
    Simulate,
    /// Split the data 3:1:1, fit on the first part with early stopping on the second.
    Train,
    /// Metrics of a trained model on one part of the split.
    Evaluate,
    /// Survival and hazard curves on a grid, one row per individual and time.
    Predict,
    /// Median split by predicted risk, with group Kaplan–Meier curves and a log-rank test.
    RiskSplit,
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Simulated sample size.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Censoring levels for the truncated metrics, e.g. `1e-8,0.2,0.4`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Prediction times: `t1,t2,...` or `start:end:count`.
    #[arg(long, global = true)]
    pub grid: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub subset: Option<Subset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
    All,
}

/// Everything a command needs; the JSON config file deserializes into this.
///
/// `seed` drives the simulation, the split, and training (it replaces
/// `train.seed`). `train.solver` is used for every ODE solve. `subset`
/// defaults to `test` for evaluate and risk-split and to `all` for predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
    pub levels: Vec<f64>,
    pub grid: Option<GridSpec>,
    pub subset: Option<Subset>,
    pub split: [f64; 3],
    pub model_spec: ModelSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            model: None,
            out: None,
            n: 10_000,
            seed: 0,
            levels: DEFAULT_LEVELS.to_vec(),
            grid: None,
            subset: None,
            split: [3.0, 1.0, 1.0],
            model_spec: ModelSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Explicit times, or a spec string as accepted by `--grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Times(Vec<f64>),
    Spec(String),
}

impl GridSpec {
    pub fn resolve(&self) -> CliResult<Vec<f64>> {
        let times = match self {
            GridSpec::Times(t) => t.clone(),
            GridSpec::Spec(s) => parse_grid(s)?,
        };
        if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(CliError::Config("grid times must be finite and >= 0".into()));
        }
        if times.windows(2).any(|w| w[0] > w[1]) {
            return Err(CliError::Config("grid times must be nondecreasing".into()));
        }
        Ok(times)
    }
}

fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Config(format!("cannot parse grid {s:?}; use t1,t2,... or start:end:count"));
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        return Ok(match n {
            0 => Vec::new(),
            1 => vec![a],
            _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
        });
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

impl RunConfig {
    /// Config file (if any) overlaid with flags.
    pub fn from_flags(flags: &Flags) -> CliResult<Self> {
        let mut c = match &flags.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if flags.data.is_some() {
            c.data.clone_from(&flags.data);
        }
        if flags.model.is_some() {
            c.model.clone_from(&flags.model);
        }
        if flags.out.is_some() {
            c.out.clone_from(&flags.out);
        }
        if let Some(n) = flags.n {
            c.n = n;
        }
        if let Some(seed) = flags.seed {
            c.seed = seed;
        }
        if let Some(levels) = &flags.levels {
            c.levels.clone_from(levels);
        }
        if let Some(grid) = &flags.grid {
            c.grid = Some(GridSpec::Spec(grid.clone()));
        }
        if flags.subset.is_some() {
            c.subset = flags.subset;
        }
        c.train.seed = c.seed;
        Ok(c)
    }

    pub fn validate(&self, command: Command) -> CliResult<()> {
        let need = |p: &Option<PathBuf>, flag: &str| {
            if p.is_none() {
                Err(CliError::Config(format!("{command:?} needs --{flag}").to_lowercase()))
            } else {
                Ok(())
            }
        };
        match command {
            Command::Simulate => {
                need(&self.out, "out")?;
                if self.n == 0 {
                    return Err(CliError::Config("--n must be >= 1".into()));
                }
            }
            Command::Train => {
                need(&self.data, "data")?;
                need(&self.model, "model")?;
            }
            Command::Evaluate => {
                need(&self.data, "data")?;
                need(&self.model, "model")?;
                if self.levels.is_empty() || self.levels.iter().any(|l| !(*l > 0.0 && *l <= 1.0)) {
                    return Err(CliError::Config("levels must lie in (0, 1]".into()));
                }
            }
            Command::Predict | Command::RiskSplit => {
                need(&self.data, "data")?;
                need(&self.model, "model")?;
                need(&self.out, "out")?;
            }
        }
        self.train.validate()?;
        Ok(())
    }
}

/// Parses arguments and runs the command.
pub fn run_args<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };
    let config = RunConfig::from_flags(&cli.flags)?;
    run(cli.command, &config)
}

pub fn run(command: Command, config: &RunConfig) -> CliResult<()> {
    config.validate(command)?;
    match command {
        Command::Simulate => simulate(config),
        Command::Train => train(config),
        Command::Evaluate => evaluate_cmd(config),
        Command::Predict => predict(config),
        Command::RiskSplit => risk_split_cmd(config),
    }
}

fn required(p: &Option<PathBuf>) -> &Path {
    p.as_deref().expect("validated")
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn load_model(config: &RunConfig) -> CliResult<SurvivalModel> {
    let path = required(&config.model);
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    Ok(SurvivalModel::from_json(&text)?)
}

fn load_data(config: &RunConfig) -> CliResult<Dataset> {
    let path = required(&config.data);
    fs::metadata(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    Ok(Dataset::load_csv(path)?)
}

fn subset(config: &RunConfig, data: Dataset, default: Subset) -> CliResult<Dataset> {
    let which = config.subset.unwrap_or(default);
    if which == Subset::All {
        return Ok(data);
    }
    let (train, val, test) = split(&data, config.split, config.seed)?;
    Ok(match which {
        Subset::Train => train,
        Subset::Val => val,
        _ => test,
    })
}

fn history_path(model: &Path, out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| model.with_extension("history.json"))
}

fn simulate(config: &RunConfig) -> CliResult<()> {
    let data = simulate_crossing(config.n, config.seed)?;
    let out = required(&config.out);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    data.write_csv(out)?;
    info!("wrote {} rows to {}", data.len(), out.display());
    Ok(())
}

fn train(config: &RunConfig) -> CliResult<()> {
    let data = load_data(config)?;
    let (train, val, _) = split(&data, config.split, config.seed)?;
    let model_path = required(&config.model);
    let hist_path = history_path(model_path, &config.out);
    info!("training on {} observations, validating on {}", train.len(), val.len());
    match fit(&config.model_spec, &train, &val, &config.train) {
        Ok((model, history)) => {
            write_file(model_path, &model.to_json(Some(&config.train))?)?;
            write_file(&hist_path, &history.to_json()?)?;
            info!("best epoch {} (validation loss {:.6})", history.best_epoch, history.best_val_loss);
            Ok(())
        }
        Err(source) => {
            let saved = write_history(&hist_path, &source.history);
            Err(CliError::Fit { source, history_path: saved.then_some(hist_path) })
        }
    }
}

fn write_history(path: &Path, history: &TrainHistory) -> bool {
    history.to_json().ok().map(|s| write_file(path, &s).is_ok()).unwrap_or(false)
}

fn evaluate_cmd(config: &RunConfig) -> CliResult<()> {
    let model = load_model(config)?;
    let data = subset(config, load_data(config)?, Subset::Test)?;
    let report = evaluate(&model, &data, &config.levels, &config.train.solver)?;
    let json = report.to_json()?;
    match &config.out {
        Some(out) => write_file(out, &json),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn predict(config: &RunConfig) -> CliResult<()> {
    let model = load_model(config)?;
    let data = subset(config, load_data(config)?, Subset::All)?;
    let grid = match &config.grid {
        Some(g) => g.resolve()?,
        None => default_grid(&data),
    };
    export_curves(&model, &data, &grid, &config.train.solver, required(&config.out))
}

/// 100 points on `[0, max observed time]`.
fn default_grid(data: &Dataset) -> Vec<f64> {
    let t_max = data.times().into_iter().fold(0.0, f64::max);
    (0..100).map(|k| t_max * k as f64 / 99.0).collect()
}

/// Long-format CSV `id,t,survival,hazard`, one row per individual and grid time.
pub fn export_curves(model: &SurvivalModel, data: &Dataset, grid: &[f64], solver: &OdeConfig, out: &Path) -> CliResult<()> {
    let io = |source| CliError::Io { path: out.to_path_buf(), source };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    let mut w = std::io::BufWriter::new(fs::File::create(out).map_err(io)?);
    writeln!(w, "id,t,survival,hazard").map_err(io)?;
    for (id, o) in data.observations.iter().enumerate() {
        if grid.is_empty() {
            break;
        }
        let (s, h) = predict_curves(model, &o.x, grid, solver)?;
        for k in 0..grid.len() {
            writeln!(w, "{id},{},{},{}", grid[k], s.values[k], h.values[k]).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[derive(Debug, Serialize)]
struct RiskSplitReport {
    time: f64,
    n_high: usize,
    n_low: usize,
    #[serde(flatten)]
    logrank: metrics::LogRank,
}

fn risk_split_cmd(config: &RunConfig) -> CliResult<()> {
    let model = load_model(config)?;
    let data = subset(config, load_data(config)?, Subset::Test)?;
    let t = median_time(&data.observations)?;
    let pred = SurvivalMatrix::from_model(&model, &data.observations, &[t], &config.train.solver)?;
    let high = risk_split(&pred, data.len(), t);
    let (times, events) = (data.times(), data.events());
    let test = logrank_test(&times, &events, &high)?;

    let mut csv = String::from("group,t,survival\n");
    for (name, flag) in [("high", true), ("low", false)] {
        let idx: Vec<usize> = (0..data.len()).filter(|&i| high[i] == flag).collect();
        let km = km_survival(
            &idx.iter().map(|&i| times[i]).collect::<Vec<_>>(),
            &idx.iter().map(|&i| events[i]).collect::<Vec<_>>(),
        )?;
        csv.push_str(&format!("{name},0,1\n"));
        for (t, s) in km.times().iter().zip(km.values()) {
            csv.push_str(&format!("{name},{t},{s}\n"));
        }
    }
    let dir = required(&config.out);
    write_file(&dir.join("km_curves.csv"), &csv)?;
    let n_high = high.iter().filter(|&&h| h).count();
    let report = RiskSplitReport { time: t, n_high, n_low: data.len() - n_high, logrank: test };
    let json = serde_json::to_string_pretty(&report).map_err(odesurv::Error::from)?;
    write_file(&dir.join("logrank.json"), &json)?;
    info!("log-rank chi-square {:.3}, p = {:.3e}", test.chi_square, test.p_value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("0").unwrap(), vec![0.0]);
        assert_eq!(parse_grid("0, 0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("0:2:5").unwrap(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert!(parse_grid("").unwrap().is_empty());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("a").is_err());
        assert!(GridSpec::Times(vec![1.0, 0.5]).resolve().is_err());
        assert!(GridSpec::Times(vec![-1.0]).resolve().is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"n": 50, "seed": 3, "levels": [0.5], "train": {"batch_size": 16}}"#).unwrap();
        let cli = Cli::try_parse_from(["odesurv", "simulate", "--config", path.to_str().unwrap(), "--seed", "9"]).unwrap();
        let c = RunConfig::from_flags(&cli.flags).unwrap();
        assert_eq!((c.n, c.seed, c.train.seed, c.train.batch_size), (50, 9, 9, 16));
        assert_eq!(c.levels, vec![0.5]);
        let cli = Cli::try_parse_from(["odesurv", "evaluate", "--levels", "1e-8,0.2"]).unwrap();
        assert_eq!(RunConfig::from_flags(&cli.flags).unwrap().levels, vec![1e-8, 0.2]);
    }

    #[test]
    fn validation_and_exit_codes() {
        let e = run(Command::Train, &RunConfig::default()).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_CONFIG);
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"], "config");
        let e = CliError::Core(odesurv::Error::NoConvergence { max_steps: 1, t_end: 1.0 });
        assert_eq!(e.exit_code(), EXIT_NUMERICAL);
        let bad = RunConfig { levels: vec![0.0], data: Some("d".into()), model: Some("m".into()), ..RunConfig::default() };
        assert!(matches!(bad.validate(Command::Evaluate), Err(CliError::Config(_))));
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
