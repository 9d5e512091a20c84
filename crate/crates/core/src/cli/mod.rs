//! Command-line front end: config files, subcommands and exit codes.

pub mod config;
pub mod run;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::Error;
use config::{Alpha, LambdaSpec, Mode, PotentialSpec, RunConfig};

/// CLI failure with its exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure in {module}: {source}")]
    Numerical {
        module: &'static str,
        #[source]
        source: Error,
    },
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse { .. } | CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io { .. } => 1,
        }
    }
}

const ENV_HELP: &str = "\
Tolerance overrides (environment):
  STOKESZERO_NEWTON_TOL, STOKESZERO_RESIDUAL_TOL, STOKESZERO_RELATIVE_RESIDUAL_TOL,
  STOKESZERO_MIN_CELL, STOKESZERO_PROPAGATION_TOL, STOKESZERO_MATCH_CAP

Exit status: 0 success, 2 config or usage error, 3 numerical failure, 1 I/O error.";

#[derive(Debug, Parser)]
#[command(name = "stokeszero", version, about = "Stokes graphs and zero loci of polynomial Schrödinger solutions at high energy", after_help = ENV_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every mode listed in a TOML config file.
    Run { config: PathBuf },
    /// Build the Stokes graph and write graph JSON and SVG.
    Graph {
        #[command(flatten)]
        common: Common,
    },
    /// Propagate ψ_k from the hub along a path and dump the trace.
    Propagate {
        #[command(flatten)]
        common: Common,
        /// Path vertex `x,y`; repeat for a polyline.
        #[arg(long = "to", value_parser = parse_point, required = true, allow_hyphen_values = true)]
        to: Vec<[f64; 2]>,
    },
    /// Predict zeros of ψ_k on the exceptional lines.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        predict: PredictArgs,
    },
    /// Locate zeros of ψ_k by the argument principle.
    Find {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        predict: PredictArgs,
        #[command(flatten)]
        find: FindArgs,
    },
    /// Match predicted and observed zeros and fit the convergence order.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        predict: PredictArgs,
        #[command(flatten)]
        find: FindArgs,
    },
    /// Solve the quantization condition for a range of s.
    Quantize {
        #[command(flatten)]
        common: Common,
        /// Inclusive range `a..b`.
        #[arg(long = "s", value_parser = parse_range, default_value = "0..10")]
        s: (u32, u32),
        #[arg(long, default_value_t = 1)]
        k0: i32,
    },
    /// Draw the graph with predicted (circles) and observed (crosses) zeros.
    Render {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        predict: PredictArgs,
        #[command(flatten)]
        find: FindArgs,
    },
}

/// Options shared by all single-mode subcommands.
#[derive(Debug, Args)]
pub struct Common {
    /// Degree of the potential.
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    /// Leading-term orientation: 1 (one) or rotated.
    #[arg(long, value_enum, default_value = "one")]
    pub alpha: Alpha,
    /// Reduced coefficient `re,im`; repeat for b_1, b_2, ...
    #[arg(long = "b", value_parser = parse_point, allow_hyphen_values = true)]
    pub reduced: Vec<[f64; 2]>,
    /// Physical manifest (replaces --n, --alpha, --b and --lambda).
    #[arg(long, conflicts_with_all = ["n", "reduced", "lambda"])]
    pub manifest: Option<PathBuf>,
    /// |λ| values, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "50")]
    pub lambda: Vec<f64>,
    /// arg λ.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub beta: f64,
    /// Sector label k of ψ_k.
    #[arg(long = "k", visible_alias = "sector", default_value_t = 1, allow_negative_numbers = true)]
    pub k: i32,
    /// Order of the semiclassical seed.
    #[arg(long, default_value_t = crate::fundsol::DEFAULT_ORDER)]
    pub order: usize,
    /// Hub point `x,y`.
    #[arg(long, value_parser = parse_point, default_value = "0,0", allow_hyphen_values = true)]
    pub hub: [f64; 2],
    /// JSON output file.
    #[arg(long)]
    pub out: Option<String>,
    /// SVG output file.
    #[arg(long)]
    pub svg: Option<String>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub dir: PathBuf,
    /// Random seed for sampling checks.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Root whose exceptional lines are used (all when omitted).
    #[arg(long, allow_negative_numbers = true)]
    pub l: Option<i32>,
    #[arg(long = "qmax", default_value_t = 2)]
    pub q_max: u32,
    /// Regular parameter Λ (defaults to the fractional part of |λ|).
    #[arg(long = "Lambda")]
    pub big_lambda: Option<f64>,
    #[arg(long = "rmax", default_value_t = 2)]
    pub r_max: i32,
    /// Vicinity radius ε.
    #[arg(long, default_value_t = 0.25)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct FindArgs {
    /// Search rectangle `x0,y0,x1,y1` (boxes around predictions otherwise).
    #[arg(long, value_parser = parse_region, allow_hyphen_values = true)]
    pub region: Option<[f64; 4]>,
    /// Random D_{k,ε} squares checked for zero winding.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
}

fn parse_numbers(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number"))).collect()
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    parse_numbers(s)?.try_into().map_err(|_| format!("expected x,y, got `{s}`"))
}

fn parse_region(s: &str) -> Result<[f64; 4], String> {
    parse_numbers(s)?.try_into().map_err(|_| format!("expected x0,y0,x1,y1, got `{s}`"))
}

fn parse_range(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected a..b, got `{s}`"))?;
    let a = a.trim().parse().map_err(|_| format!("bad range start in `{s}`"))?;
    let b = b.trim_start_matches('=').trim().parse().map_err(|_| format!("bad range end in `{s}`"))?;
    Ok((a, b))
}

impl Common {
    fn config(&self, mode: Mode) -> RunConfig {
        let (potential, lambda) = match &self.manifest {
            Some(m) => (PotentialSpec { manifest: Some(m.clone()), ..Default::default() }, None),
            None => (
                PotentialSpec { manifest: None, degree: Some(self.n), alpha: self.alpha, reduced: self.reduced.clone() },
                Some(LambdaSpec { values: self.lambda.clone(), ladder: None, phase: self.beta }),
            ),
        };
        let mut cfg = RunConfig {
            modes: vec![mode],
            seed: self.seed,
            potential,
            lambda,
            solution: config::SolutionSpec { sector: self.k, order: self.order, hub: self.hub },
            predict: Default::default(),
            find: Default::default(),
            propagate: Default::default(),
            quantize: Default::default(),
            tolerances: Default::default(),
            output: Default::default(),
        };
        cfg.output.dir = self.dir.clone();
        cfg.output.json = self.out.clone();
        cfg.output.svg = self.svg.clone();
        cfg
    }
}

impl PredictArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        cfg.predict.l = self.l;
        cfg.predict.q_max = self.q_max;
        cfg.predict.big_lambda = self.big_lambda;
        cfg.predict.r_max = self.r_max;
        cfg.predict.eps = self.eps;
    }
}

impl FindArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        cfg.find.region = self.region;
        cfg.find.emptiness_samples = self.samples;
    }
}

impl Command {
    /// The resolved config this command runs.
    pub fn config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match self {
            Command::Run { config } => return config::load(config),
            Command::Graph { common } => common.config(Mode::Graph),
            Command::Propagate { common, to } => {
                let mut cfg = common.config(Mode::Propagate);
                cfg.propagate.to = to.clone();
                cfg
            }
            Command::Predict { common, predict } => {
                let mut cfg = common.config(Mode::Predict);
                predict.apply(&mut cfg);
                cfg
            }
            Command::Quantize { common, s, k0 } => {
                let mut cfg = common.config(Mode::Quantize);
                cfg.quantize = config::QuantizeSpec { k0: *k0, s_min: s.0, s_max: s.1 };
                cfg
            }
            Command::Find { common, predict, find }
            | Command::Compare { common, predict, find }
            | Command::Render { common, predict, find } => {
                let mode = match self {
                    Command::Find { .. } => Mode::Find,
                    Command::Compare { .. } => Mode::Compare,
                    _ => Mode::Render,
                };
                let mut cfg = common.config(mode);
                predict.apply(&mut cfg);
                find.apply(&mut cfg);
                cfg
            }
        };
        cfg.resolve()?;
        Ok(cfg)
    }
}

/// Parse arguments, run, and map the outcome to an exit status.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match cli.command.config().and_then(|cfg| run::run(&cfg)) {
        Ok(written) => {
            for p in written {
                eprintln!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("stokeszero: {e}");
            e.exit_code()
        }
    }
}
