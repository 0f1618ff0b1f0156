//! Command-line front end: configuration, subcommand dispatch and artifact
//! emission for the `wgpairs` binary.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod pipelines;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use wgpairs::beamlab::BeamAxis;
use wgpairs::jsa::FilterShape;
use wgpairs::modesolver::{ModeLabel, Polarization, Wave};

use config::{BeamSource, ConfigErrors, Estimator, RunConfig, CONFIG_ENV};
use output::Emitter;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Numeric(#[from] wgpairs::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            CliError::Config(e) => json!({
                "error": "config",
                "message": self.to_string(),
                "issues": e.issues,
            }),
            CliError::Numeric(e) => json!({
                "error": "numeric",
                "message": e.to_string(),
            }),
            CliError::Io(e) => json!({
                "error": "io",
                "message": e.to_string(),
            }),
        }
    }
}

/// Parses a flag value with the same spelling the configuration file uses.
fn serde_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.into())).map_err(|e| e.to_string())
}

fn parse_label(s: &str) -> Result<ModeLabel, String> {
    s.parse().map_err(|e: wgpairs::Error| e.to_string())
}

fn parse_axis(s: &str) -> Result<BeamAxis, String> {
    s.parse().map_err(|e: wgpairs::Error| e.to_string())
}

fn parse_shape(s: &str) -> Result<FilterShape, String> {
    s.parse().map_err(|e: wgpairs::Error| e.to_string())
}

fn parse_hg(s: &str) -> Result<(usize, usize), String> {
    let (n, m) = s
        .split_once(',')
        .ok_or_else(|| format!("expected N,M, got '{s}'"))?;
    Ok((
        n.trim().parse().map_err(|_| format!("bad order '{n}'"))?,
        m.trim().parse().map_err(|_| format!("bad order '{m}'"))?,
    ))
}

#[derive(Debug, Parser)]
#[command(
    name = "wgpairs",
    version,
    about = "Pair-source simulator for multimode nonlinear waveguides"
)]
pub struct Cli {
    /// Configuration file; the built-in defaults when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Output root; each subcommand writes into its own directory below it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for the numerical kernels.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate the configuration and print it in normalized form.
    Config,
    /// Effective indices (CSV) and optional profile images.
    Modes,
    /// Phase-matching maps and the band summary.
    Bands,
    /// Fit period and index contrasts to the band targets.
    Calibrate {
        /// Write the best fit back even if a target fails.
        #[arg(long)]
        force: bool,
    },
    /// Joint spectrum, islands and the heralded state.
    Jsa,
    /// Heralded spatial state for one filter setting.
    Herald(HeraldArgs),
    /// Simulated knife-edge caustic and M² fit.
    M2(M2Args),
    /// Sum-frequency response map of one triplet.
    SfgMap,
}

#[derive(Debug, Args, Default)]
pub struct HeraldArgs {
    /// Filtered arm (H or V); the other arm is heralded.
    #[arg(long, value_parser = serde_value::<Polarization>)]
    pub arm: Option<Polarization>,
    #[arg(long)]
    pub center_nm: Option<f64>,
    #[arg(long)]
    pub fwhm_nm: Option<f64>,
    /// top_hat or gaussian.
    #[arg(long, value_parser = parse_shape)]
    pub shape: Option<FilterShape>,
}

#[derive(Debug, Args, Default)]
pub struct M2Args {
    /// heralded, mode or hg.
    #[arg(long, value_parser = serde_value::<BeamSource>)]
    pub source: Option<BeamSource>,
    /// Guided mode label for --source mode, e.g. 01.
    #[arg(long, value_parser = parse_label)]
    pub mode: Option<ModeLabel>,
    /// H or V, for --source mode.
    #[arg(long, value_parser = serde_value::<Wave>)]
    pub wave: Option<Wave>,
    /// Hermite-Gauss orders N,M for --source hg.
    #[arg(long, value_parser = parse_hg)]
    pub hg: Option<(usize, usize)>,
    /// knife_edge or moments.
    #[arg(long, value_parser = serde_value::<Estimator>)]
    pub estimator: Option<Estimator>,
    /// Expected counts per knife position.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Knife-edge curves without counting noise.
    #[arg(long)]
    pub noiseless: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Planes within one Rayleigh range of the waist.
    #[arg(long)]
    pub inside: Option<usize>,
    /// Planes beyond two Rayleigh ranges.
    #[arg(long)]
    pub outside: Option<usize>,
    /// Comma-separated axes, x and/or y.
    #[arg(long, value_delimiter = ',', value_parser = parse_axis)]
    pub axes: Option<Vec<BeamAxis>>,
    #[arg(long)]
    pub lambda_nm: Option<f64>,
    #[arg(long)]
    pub waist_um: Option<f64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long)]
    pub pitch_um: Option<f64>,
}

impl HeraldArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let f = &mut cfg.filter;
        if let Some(a) = self.arm {
            f.arm = a;
        }
        if let Some(c) = self.center_nm {
            f.center_nm = Some(c);
        }
        if let Some(w) = self.fwhm_nm {
            f.fwhm_nm = w;
        }
        if let Some(s) = self.shape {
            f.shape = s;
        }
    }
}

impl M2Args {
    fn apply(&self, cfg: &mut RunConfig) {
        let m = &mut cfg.measurement;
        if let Some(v) = self.source {
            m.source = v;
        }
        if let Some(v) = self.mode {
            m.mode = v;
        }
        if let Some(v) = self.wave {
            m.wave = v;
        }
        if let Some((n, k)) = self.hg {
            m.hg_n = n;
            m.hg_m = k;
        }
        if let Some(v) = self.estimator {
            m.estimator = v;
        }
        if let Some(v) = self.budget {
            m.budget = v;
        }
        if self.noiseless {
            m.noiseless = true;
        }
        if let Some(v) = self.seed {
            m.seed = v;
        }
        if let Some(v) = self.inside {
            m.inside = v;
        }
        if let Some(v) = self.outside {
            m.outside = v;
        }
        if let Some(v) = &self.axes {
            m.axes = v.clone();
        }
        if let Some(v) = self.lambda_nm {
            m.lambda_nm = v;
        }
        if let Some(v) = self.waist_um {
            m.waist_um = v;
        }
        if let Some(v) = self.grid_points {
            m.grid_points = v;
        }
        if let Some(v) = self.pitch_um {
            m.pitch_um = v;
        }
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Config => "config",
            Command::Modes => "modes",
            Command::Bands => "bands",
            Command::Calibrate { .. } => "calibrate",
            Command::Jsa => "jsa",
            Command::Herald(_) => "herald",
            Command::M2(_) => "m2",
            Command::SfgMap => "sfg-map",
        }
    }
}

/// Result of one invocation.
pub struct Outcome {
    pub command: &'static str,
    pub exit: u8,
    pub summary: Value,
    pub lines: Vec<String>,
    pub manifest: Option<PathBuf>,
}

/// The configuration named on the command line (or by the environment), or
/// the built-in one.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, ConfigErrors> {
    match path {
        Some(p) => RunConfig::load(p),
        None => RunConfig::parse(config::DEFAULT_CONFIG),
    }
}

/// Flag overrides are validated by the same rules as the file.
fn with_overrides(
    cfg: RunConfig,
    apply: impl FnOnce(&mut RunConfig),
) -> Result<RunConfig, ConfigErrors> {
    let mut c = cfg;
    apply(&mut c);
    RunConfig::parse(&c.to_toml())
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let base = load_config(cli.config.as_deref())?;
    let cfg = match &cli.command {
        Command::Herald(a) => with_overrides(base, |c| a.apply(c))?,
        Command::M2(a) => with_overrides(base, |c| a.apply(c))?,
        _ => base,
    };
    let name = cli.command.name();
    if let Command::Config = cli.command {
        return Ok(Outcome {
            command: name,
            exit: 0,
            summary: json!({ "valid": true }),
            lines: vec![cfg.to_toml()],
            manifest: None,
        });
    }
    let root = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let mut out = Emitter::new(&root.join(name))?;
    let report = match &cli.command {
        Command::Config => unreachable!(),
        Command::Modes => pipelines::modes(&cfg, &mut out)?,
        Command::Bands => pipelines::bands(&cfg, &mut out)?,
        Command::Calibrate { force } => {
            pipelines::calibrate(&cfg, cli.config.as_deref(), *force, &mut out)?
        }
        Command::Jsa => pipelines::jsa(&cfg, &mut out)?,
        Command::Herald(_) => pipelines::herald(&cfg, &mut out)?,
        Command::M2(_) => pipelines::m2(&cfg, &mut out)?,
        Command::SfgMap => pipelines::sfg_map(&cfg, &mut out)?,
    };
    let manifest = out.finish(name)?;
    Ok(Outcome {
        command: name,
        exit: report.exit,
        summary: report.summary,
        lines: report.lines,
        manifest: Some(manifest),
    })
}
