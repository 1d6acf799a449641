//! Command-line driver for `conelab`.
//!
//! Every subcommand writes one JSON report (see `docs/schema.md`) and maps
//! its outcome to an exit code: 0 pass, 1 verification failed, 2 numeric
//! failure, 64 usage.

pub mod commands;
pub mod config;
pub mod report;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use report::{Destination, Report, Status};
use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;
use thiserror::Error;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Default output directory when `--out` is absent.
pub const OUT_DIR_ENV: &str = "CONELAB_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] conelab::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_NUMERIC,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) if e.is_numeric() => "numeric",
            CliError::Core(_) => "input",
            CliError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "conelab", version, about = "Numerical laboratory for singular one-phase cones")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// JSON report path (default: stdout, or `$CONELAB_OUT_DIR/<command>.json`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// CSV artifact path.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Omit wall-clock time so that reports are byte-identical across runs.
    #[arg(long, global = true)]
    pub reproducible: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the cone of a given dimension.
    Cone {
        #[arg(long)]
        dim: Option<u32>,
        /// Report the internal invariants; failure gives exit 1.
        #[arg(long)]
        check: bool,
    },
    /// Spectrum of the second variation up to a spherical degree.
    Spectrum {
        #[arg(long)]
        dim: Option<u32>,
        #[arg(long)]
        ell_max: Option<u32>,
    },
    /// Index, kernel and integrability over a range of dimensions.
    Integrability {
        #[arg(long)]
        dim: Option<u32>,
        #[arg(long)]
        dim_max: Option<u32>,
        #[arg(long)]
        ell_max: Option<u32>,
        /// Evaluate the literal d = 7 bound chain.
        #[arg(long)]
        certify_d7: bool,
        /// Check the high-dimensional estimates for every d >= 21.
        #[arg(long)]
        asymptotic: bool,
    },
    /// Epiperimetric check on a scenario file or on sampled traces.
    Epi {
        /// JSON scenario with `dim` and explicit `traces`.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        dim: Option<u32>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_shift: Option<f64>,
        #[arg(long)]
        max_kappa_dev: Option<f64>,
        #[arg(long)]
        max_mode: Option<f64>,
        #[arg(long)]
        max_index: Option<usize>,
        #[arg(long)]
        min_eps: Option<f64>,
        /// Smallest accepted epsilon-hat.
        #[arg(long)]
        min_epsilon: Option<f64>,
    },
    /// Unit-speed gradient descent and Lojasiewicz fit on a model energy.
    Flow {
        /// quadratic, quartic, mixed, toy or flat.
        #[arg(long)]
        energy: Option<String>,
        /// Comma-separated starting point.
        #[arg(long, allow_hyphen_values = true)]
        start: Option<String>,
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Integrate the decay inequality and the dyadic modulus.
    Decay {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        dim: Option<u32>,
        #[arg(long)]
        w_start: Option<f64>,
        #[arg(long)]
        r0: Option<f64>,
    },
}

fn opt<T: ToString>(key: &'static str, v: &Option<T>) -> (&'static str, Option<String>) {
    (key, v.as_ref().map(ToString::to_string))
}

fn switch(key: &'static str, on: bool) -> (&'static str, Option<String>) {
    (key, on.then(|| "true".to_string()))
}

const GLOBAL_KEYS: [&str; 4] = ["out", "csv", "jobs", "reproducible"];

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Cone { .. } => "cone",
            Command::Spectrum { .. } => "spectrum",
            Command::Integrability { .. } => "integrability",
            Command::Epi { .. } => "epi",
            Command::Flow { .. } => "flow",
            Command::Decay { .. } => "decay",
        }
    }

    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        match self {
            Command::Cone { dim, check } => vec![opt("dim", dim), switch("check", *check)],
            Command::Spectrum { dim, ell_max } => vec![opt("dim", dim), opt("ell_max", ell_max)],
            Command::Integrability { dim, dim_max, ell_max, certify_d7, asymptotic } => vec![
                opt("dim", dim),
                opt("dim_max", dim_max),
                opt("ell_max", ell_max),
                switch("certify_d7", *certify_d7),
                switch("asymptotic", *asymptotic),
            ],
            Command::Epi {
                scenario,
                dim,
                samples,
                seed,
                max_shift,
                max_kappa_dev,
                max_mode,
                max_index,
                min_eps,
                min_epsilon,
            } => vec![
                ("scenario", scenario.as_ref().map(|p| p.display().to_string())),
                opt("dim", dim),
                opt("samples", samples),
                opt("seed", seed),
                opt("max_shift", max_shift),
                opt("max_kappa_dev", max_kappa_dev),
                opt("max_mode", max_mode),
                opt("max_index", max_index),
                opt("min_eps", min_eps),
                opt("min_epsilon", min_epsilon),
            ],
            Command::Flow { energy, start, t_end } => {
                vec![opt("energy", energy), opt("start", start), opt("t_end", t_end)]
            }
            Command::Decay { eps, gamma, dim, w_start, r0 } => {
                vec![opt("eps", eps), opt("gamma", gamma), opt("dim", dim), opt("w_start", w_start), opt("r0", r0)]
            }
        }
    }

    /// Flags and config keys accepted by this command.
    pub fn keys(&self) -> Vec<&'static str> {
        let mut keys: Vec<&'static str> = self.flags().into_iter().map(|(k, _)| k).collect();
        keys.extend(GLOBAL_KEYS);
        keys
    }
}

impl GlobalArgs {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("csv", self.csv.as_ref().map(|p| p.display().to_string())),
            opt("jobs", &self.jobs),
            switch("reproducible", self.reproducible),
        ]
    }
}

fn destination(cfg: &RunConfig, command: &str) -> Destination {
    if let Some(path) = cfg.raw("out") {
        return Destination::File(PathBuf::from(path));
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => Destination::File(PathBuf::from(dir).join(format!("{command}.json"))),
        _ => Destination::Stdout,
    }
}

fn thread_pool(cfg: &RunConfig) -> Result<rayon::ThreadPool, CliError> {
    let jobs: usize = cfg.get_or("jobs", 0)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} worker threads: {e}")))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            if code == EXIT_USAGE {
                let err = CliError::Usage(e.kind().to_string());
                let _ = Report::error("", RunConfig::default(), &err, None).write(&Destination::Stdout);
            }
            return code;
        }
    };
    let name = cli.command.name();
    let mut flags = cli.command.flags();
    flags.extend(cli.global.flags());
    let cfg = match RunConfig::merge(cli.global.config.as_deref(), flags, &cli.command.keys()) {
        Ok(cfg) => cfg,
        Err(e) => return fail(name, RunConfig::default(), &e, None, Destination::Stdout),
    };
    let dest = destination(&cfg, name);
    let reproducible = match cfg.flag("reproducible") {
        Ok(r) => r,
        Err(e) => return fail(name, cfg, &e, None, dest),
    };
    let started = Instant::now();
    let outcome = thread_pool(&cfg).and_then(|pool| pool.install(|| commands::dispatch(&cli.command, &cfg)));
    let elapsed = (!reproducible).then(|| started.elapsed().as_secs_f64());
    match outcome {
        Ok(outcome) => {
            if let Some(text) = &outcome.human {
                eprint!("{text}");
            }
            if let (Some(table), Some(path)) = (&outcome.csv, cfg.raw("csv")) {
                if let Err(e) = table.write(path.as_ref()) {
                    return fail(name, cfg, &e, elapsed, dest);
                }
            }
            let status = outcome.status;
            let report = Report::success(name, cfg, outcome, elapsed);
            match report.write(&dest) {
                Ok(()) => status.exit_code(),
                Err(e) => {
                    eprintln!("conelab: {e}");
                    e.exit_code()
                }
            }
        }
        Err(e) => fail(name, cfg, &e, elapsed, dest),
    }
}

fn fail(name: &str, cfg: RunConfig, err: &CliError, elapsed: Option<f64>, dest: Destination) -> i32 {
    eprintln!("conelab {name}: {err}");
    let report = Report::error(name, cfg, err, elapsed);
    if report.write(&dest).is_err() {
        let _ = report.write(&Destination::Stdout);
    }
    err.exit_code()
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => EXIT_PASS,
            Status::Fail => EXIT_FAIL,
            Status::Error => EXIT_NUMERIC,
        }
    }
}
