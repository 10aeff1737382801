//! Command-line flags, key-value config files and grid specifications.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use feedback_urns::QuadConfig;
use serde_json::Value;

use crate::record::Format;

pub const CONFIG_ENV: &str = "FEEDBACK_URNS_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid value for {key}: {msg}")]
    Value { key: String, msg: String },
    #[error("config file {path}: {msg}")]
    File { path: String, msg: String },
}

fn bad(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Value { key: key.into(), msg: msg.into() }
}

#[derive(Parser, Debug)]
#[command(name = "feedback-urns", version, about = "Leadership in balls-in-bins processes with power-law feedback")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Rate function, minimizer, derivative and drift over an alpha grid.
    RateTable(Flags),
    /// Tilted Monte Carlo log-probabilities against the rate function.
    RateConvergence(Flags),
    /// Finite-t log-Laplace transform against its limit.
    LaplaceCheck(Flags),
    /// Solve the profile ODE.
    OdeSolve(Flags),
    /// Conditioned sample paths against the ODE profile.
    TrajectoryVsOde(Flags),
    /// Direct, tilted, DP and rejection estimates side by side.
    OracleCrosscheck(Flags),
    /// Exhaustive unimodality and tail checks on a parameter grid.
    LemmaSweep(Flags),
    /// Plain simulation of the discrete process.
    Simulate(Flags),
}

impl Command {
    pub fn split(self) -> (Experiment, Flags) {
        match self {
            Command::RateTable(f) => (Experiment::RateTable, f),
            Command::RateConvergence(f) => (Experiment::RateConvergence, f),
            Command::LaplaceCheck(f) => (Experiment::LaplaceCheck, f),
            Command::OdeSolve(f) => (Experiment::OdeSolve, f),
            Command::TrajectoryVsOde(f) => (Experiment::TrajectoryVsOde, f),
            Command::OracleCrosscheck(f) => (Experiment::OracleCrosscheck, f),
            Command::LemmaSweep(f) => (Experiment::LemmaSweep, f),
            Command::Simulate(f) => (Experiment::Simulate, f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// Feedback exponent.
    #[arg(long)]
    pub p: Option<f64>,
    /// `a` or `a:b:step`.
    #[arg(long)]
    pub alpha: Option<String>,
    /// `n` or `n1:n2:factor`.
    #[arg(long)]
    pub t: Option<String>,
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Draw the seed from the operating system instead of the fixed default.
    #[arg(long)]
    pub seed_entropy: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Absolute and relative quadrature tolerance.
    #[arg(long)]
    pub quad_tol: Option<f64>,
    #[arg(long = "truncation-R")]
    pub truncation_r: Option<u64>,
    #[arg(long = "dp-R")]
    pub dp_r: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Conditioned paths per t.
    #[arg(long)]
    pub paths: Option<u64>,
    /// Comma-separated tilts (laplace-check; `star` for the minimizer).
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long)]
    pub s_max: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub stop_margin: Option<f64>,
    /// Time horizon for trajectory comparisons.
    #[arg(long = "K")]
    pub k: Option<f64>,
    #[arg(long)]
    pub m_max: Option<u64>,
    /// Steps per simulated path.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Start size for the one-block drift check.
    #[arg(long)]
    pub drift_t: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    RateTable,
    RateConvergence,
    LaplaceCheck,
    OdeSolve,
    TrajectoryVsOde,
    OracleCrosscheck,
    LemmaSweep,
    Simulate,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::RateTable => "rate-table",
            Experiment::RateConvergence => "rate-convergence",
            Experiment::LaplaceCheck => "laplace-check",
            Experiment::OdeSolve => "ode-solve",
            Experiment::TrajectoryVsOde => "trajectory-vs-ode",
            Experiment::OracleCrosscheck => "oracle-crosscheck",
            Experiment::LemmaSweep => "lemma-sweep",
            Experiment::Simulate => "simulate",
        }
    }

    pub fn default_seed(&self) -> u64 {
        match self {
            Experiment::RateTable => 0x5EED_0001,
            Experiment::RateConvergence => 0x5EED_0002,
            Experiment::LaplaceCheck => 0x5EED_0003,
            Experiment::OdeSolve => 0x5EED_0004,
            Experiment::TrajectoryVsOde => 0x5EED_0005,
            Experiment::OracleCrosscheck => 0x5EED_0006,
            Experiment::LemmaSweep => 0x5EED_0007,
            Experiment::Simulate => 0x5EED_0008,
        }
    }

    fn default_alpha(&self) -> &'static str {
        match self {
            Experiment::RateTable => "0.1:0.45:0.05",
            Experiment::RateConvergence => "0.35",
            Experiment::LaplaceCheck | Experiment::OdeSolve => "0.3",
            _ => "0.4",
        }
    }

    fn default_t(&self) -> &'static str {
        match self {
            Experiment::RateConvergence => "50:400:2",
            Experiment::LaplaceCheck => "500:4000:2",
            Experiment::TrajectoryVsOde => "30:120:2",
            _ => "20",
        }
    }

    fn default_reps(&self) -> u64 {
        match self {
            Experiment::Simulate => 1000,
            _ => 1_000_000,
        }
    }
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub p: f64,
    pub alpha_spec: String,
    pub alpha: Vec<f64>,
    pub t_spec: String,
    pub t: Vec<u64>,
    pub n_reps: u64,
    pub seed: u64,
    pub output_path: Option<PathBuf>,
    pub format: Format,
    pub threads: Option<usize>,
    pub quad: QuadConfig,
    pub truncation_r: Option<u64>,
    pub dp_r: u64,
    pub paths: u64,
    pub rho: Vec<Option<f64>>,
    pub s_max: f64,
    pub step: f64,
    pub stop_margin: f64,
    pub k: Option<f64>,
    pub m_max: u64,
    pub steps: u64,
    pub drift_t: u64,
}

impl ExperimentConfig {
    /// Defaults for `experiment` with no flags.
    pub fn defaults(experiment: Experiment) -> Self {
        Self::resolve(experiment, Flags::default(), &BTreeMap::new()).expect("defaults are valid")
    }

    /// Flags take precedence over file entries, which take precedence over defaults.
    pub fn resolve(
        experiment: Experiment,
        flags: Flags,
        file: &BTreeMap<String, String>,
    ) -> Result<Self, ConfigError> {
        let get = |key: &str| file.get(key).map(String::as_str);
        fn parse<T: std::str::FromStr>(key: &str, v: Option<&str>) -> Result<Option<T>, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.map(|s| s.trim().parse::<T>().map_err(|e| bad(key, e.to_string()))).transpose()
        }

        let p = flags.p.or(parse("p", get("p"))?).unwrap_or(1.0);
        if !(p > 0.0 && p.is_finite()) {
            return Err(bad("p", "must be positive"));
        }
        let alpha_spec = flags
            .alpha
            .or(get("alpha").map(str::to_string))
            .unwrap_or_else(|| experiment.default_alpha().to_string());
        let alpha = parse_real_grid(&alpha_spec).map_err(|m| bad("alpha", m))?;
        let t_spec = flags
            .t
            .or(get("t").map(str::to_string))
            .unwrap_or_else(|| experiment.default_t().to_string());
        let t = parse_int_grid(&t_spec).map_err(|m| bad("t", m))?;
        let n_reps = flags.reps.or(parse("reps", get("reps"))?).unwrap_or(experiment.default_reps());
        let entropy = flags.seed_entropy
            || parse::<bool>("seed-entropy", get("seed-entropy"))?.unwrap_or(false);
        let seed = match flags.seed.or(parse("seed", get("seed"))?) {
            Some(s) => s,
            None if entropy => rand::random(),
            None => experiment.default_seed(),
        };
        let output_path = flags.out.or(get("out").map(PathBuf::from));
        let format = match flags.format {
            Some(FormatArg::Csv) => Format::Csv,
            Some(FormatArg::Json) => Format::Json,
            None => match get("format") {
                None | Some("csv") => Format::Csv,
                Some("json") => Format::Json,
                Some(other) => return Err(bad("format", format!("expected csv or json, got {other}"))),
            },
        };
        let threads = flags.threads.or(parse("threads", get("threads"))?);
        if threads == Some(0) {
            return Err(bad("threads", "must be at least 1"));
        }
        let mut quad = QuadConfig::default();
        if let Some(tol) = flags.quad_tol.or(parse("quad-tol", get("quad-tol"))?) {
            quad.abs_tol = tol;
            quad.rel_tol = tol;
        }
        quad.validate().map_err(|e| bad("quad-tol", e.to_string()))?;
        let truncation_r = flags.truncation_r.or(parse("truncation-R", get("truncation-R"))?);
        let dp_r = flags.dp_r.or(parse("dp-R", get("dp-R"))?).unwrap_or(2000);
        let paths = flags.paths.or(parse("paths", get("paths"))?).unwrap_or(10_000);
        let rho_spec = flags.rho.or(get("rho").map(str::to_string)).unwrap_or("star,0.2,0.5".into());
        let rho = parse_rho_list(&rho_spec).map_err(|m| bad("rho", m))?;
        let s_max = flags.s_max.or(parse("s-max", get("s-max"))?).unwrap_or(5.0);
        let step = flags.step.or(parse("step", get("step"))?).unwrap_or(1e-3);
        let stop_margin = flags
            .stop_margin
            .or(parse("stop-margin", get("stop-margin"))?)
            .unwrap_or(feedback_urns::ode::DEFAULT_STOP_MARGIN);
        let k = flags.k.or(parse("K", get("K"))?);
        let m_max = flags.m_max.or(parse("m-max", get("m-max"))?).unwrap_or(200);
        let steps = flags.steps.or(parse("steps", get("steps"))?).unwrap_or(100);
        let drift_t = flags.drift_t.or(parse("drift-t", get("drift-t"))?).unwrap_or(200);
        Ok(Self {
            experiment,
            p,
            alpha_spec,
            alpha,
            t_spec,
            t,
            n_reps,
            seed,
            output_path,
            format,
            threads,
            quad,
            truncation_r,
            dp_r,
            paths,
            rho,
            s_max,
            step,
            stop_margin,
            k,
            m_max,
            steps,
            drift_t,
        })
    }

    /// Parameters that determine the output, for the record's echo.
    pub fn echo(&self) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        m.insert("p".into(), Value::from(self.p));
        m.insert("alpha".into(), Value::from(self.alpha_spec.clone()));
        m.insert("t".into(), Value::from(self.t_spec.clone()));
        m.insert("reps".into(), Value::from(self.n_reps));
        m.insert("seed".into(), Value::from(self.seed));
        m.insert("quad-tol".into(), Value::from(self.quad.abs_tol));
        m.insert("truncation-R".into(), self.truncation_r.map(Value::from).unwrap_or(Value::Null));
        m.insert("dp-R".into(), Value::from(self.dp_r));
        m.insert("paths".into(), Value::from(self.paths));
        let rho: Vec<Value> = self
            .rho
            .iter()
            .map(|r| r.map(Value::from).unwrap_or_else(|| Value::from("star")))
            .collect();
        m.insert("rho".into(), Value::from(rho));
        m.insert("s-max".into(), Value::from(self.s_max));
        m.insert("step".into(), Value::from(self.step));
        m.insert("stop-margin".into(), Value::from(self.stop_margin));
        m.insert("K".into(), self.k.map(Value::from).unwrap_or(Value::Null));
        m.insert("m-max".into(), Value::from(self.m_max));
        m.insert("steps".into(), Value::from(self.steps));
        m.insert("drift-t".into(), Value::from(self.drift_t));
        m
    }
}

/// Parses a full argument list (without the program name) and resolves it
/// against the config file it names, if any.
pub fn resolve_args<I, S>(args: I) -> Result<ExperimentConfig, anyhow::Error>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv = std::iter::once(std::ffi::OsString::from("feedback-urns"))
        .chain(args.into_iter().map(Into::into));
    let cli = Cli::try_parse_from(argv)?;
    let (experiment, flags) = cli.command.split();
    let file = load_config_file(flags.config.as_ref())?;
    Ok(ExperimentConfig::resolve(experiment, flags, &file)?)
}

const KNOWN_KEYS: &[&str] = &[
    "p", "alpha", "t", "reps", "seed", "seed-entropy", "out", "format", "threads", "quad-tol",
    "truncation-R", "dp-R", "paths", "rho", "s-max", "step", "stop-margin", "K", "m-max", "steps",
    "drift-t",
];

/// Parses `key = value` lines; `#` starts a comment. Dotted keys map onto
/// flag names (`quad.tol` is `--quad-tol`).
pub fn parse_config_text(text: &str, origin: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::File {
            path: origin.into(),
            msg: format!("line {}: expected key = value", i + 1),
        })?;
        let key = k.trim().replace('.', "-");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::File {
                path: origin.into(),
                msg: format!("line {}: unknown key {}", i + 1, k.trim()),
            });
        }
        out.insert(key, v.trim().trim_matches('"').to_string());
    }
    Ok(out)
}

/// Loads the file named by `--config`, else by the environment variable.
pub fn load_config_file(flag: Option<&PathBuf>) -> Result<BTreeMap<String, String>, ConfigError> {
    let path = match flag {
        Some(p) => p.clone(),
        None => match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => return Ok(BTreeMap::new()),
        },
    };
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(&path)
        .map_err(|e| ConfigError::File { path: origin.clone(), msg: e.to_string() })?;
    parse_config_text(&text, &origin)
}

/// `a` or the arithmetic progression `a:b:step` (inclusive, may be empty).
pub fn parse_real_grid(spec: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s}: {e}"));
    match parts.as_slice() {
        [a] => Ok(vec![num(a)?]),
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if !(step > 0.0 && a.is_finite() && b.is_finite()) {
                return Err("step must be positive".into());
            }
            let n = ((b - a) / step + 1e-9).floor();
            if n < 0.0 {
                return Ok(Vec::new());
            }
            if n > 1e6 {
                return Err("grid has more than a million points".into());
            }
            Ok((0..=n as u64).map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12).collect())
        }
        _ => Err(format!("expected a or a:b:step, got {spec}")),
    }
}

/// `n` or the geometric progression `n1:n2:factor` (inclusive, may be empty).
pub fn parse_int_grid(spec: &str) -> Result<Vec<u64>, String> {
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    match parts.as_slice() {
        [n] => Ok(vec![n.parse().map_err(|e| format!("{n}: {e}"))?]),
        [a, b, f] => {
            let a: u64 = a.parse().map_err(|e| format!("{a}: {e}"))?;
            let b: u64 = b.parse().map_err(|e| format!("{b}: {e}"))?;
            let f: f64 = f.parse().map_err(|e| format!("{f}: {e}"))?;
            if f.is_nan() || f <= 1.0 || a == 0 {
                return Err("need n1 >= 1 and factor > 1".into());
            }
            let mut out = Vec::new();
            let mut k = 0;
            loop {
                let v = (a as f64 * f.powi(k)).round() as u64;
                if v > b {
                    break;
                }
                if out.last() != Some(&v) {
                    out.push(v);
                }
                k += 1;
            }
            Ok(out)
        }
        _ => Err(format!("expected n or n1:n2:factor, got {spec}")),
    }
}

fn parse_rho_list(spec: &str) -> Result<Vec<Option<f64>>, String> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            if s == "star" {
                Ok(None)
            } else {
                let v: f64 = s.parse().map_err(|e| format!("{s}: {e}"))?;
                if !(v > 0.0 && v < 1.0) {
                    return Err(format!("tilt {v} outside (0,1)"));
                }
                Ok(Some(v))
            }
        })
        .collect()
}
