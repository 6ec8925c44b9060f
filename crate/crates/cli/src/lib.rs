//! Command-line front end: `theory`, `simulate`, `fbm` and `analyze`.
//!
//! Exit codes are a stable contract: 0 on success (and, for `analyze`, when
//! every criterion passes), 1 when `analyze` finds a failing criterion, 2 for
//! usage, configuration and input errors.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fbmlab::analysis::FbmMethod;
use fbmlab::tracer::EnsembleMode;

pub mod commands;
pub mod config;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CRITERIA_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fbmlab", version, about = "Anomalous tracer transport in Gaussian Markovian random velocity fields")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides FBMLAB_OUTPUT_DIR and the config file).
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ParamArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Plateau value a(0) of the shell function.
    #[arg(long)]
    pub plateau: Option<f64>,
    #[arg(long)]
    pub taper_start: Option<f64>,
    /// Support bound K of the shell function.
    #[arg(long)]
    pub support_k: Option<f64>,
    /// Molecular diffusivity.
    #[arg(long)]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// ε values, comma separated.
    #[arg(long = "eps", value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    #[arg(long)]
    pub t_final: Option<f64>,
    /// Output intervals on [0, t_final].
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print exponents, diffusion constant and regime checks.
    Theory {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Machine-readable output.
        #[arg(long)]
        json: bool,
    },
    /// Run tracer ensembles for every ε of the ladder.
    Simulate {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        n_traj: Option<usize>,
        #[arg(long)]
        dt_micro: Option<f64>,
        /// Number of Fourier modes per realization.
        #[arg(long)]
        modes: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Print the plan and exit without writing anything.
        #[arg(long)]
        dry_run: bool,
        /// Run even if the stratification floor looks too coarse.
        #[arg(long)]
        force: bool,
        /// Also write the mode table of trajectory 0 for each ε.
        #[arg(long)]
        dump_modes: bool,
        /// Write statistics only.
        #[arg(long)]
        no_trajectories: bool,
    },
    /// Write exact fractional Brownian motion reference paths.
    Fbm {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        hurst: Option<f64>,
        #[arg(long)]
        dscalar: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        t_final: Option<f64>,
        /// Take (D, H) from the spectrum parameters.
        #[arg(long)]
        from_params: bool,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Fit trajectory files and compare with the limit process.
    Analyze {
        /// Trajectory CSV files or run directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        hurst: Option<f64>,
        #[arg(long)]
        dscalar: Option<f64>,
        #[arg(long)]
        window_min: Option<f64>,
        #[arg(long)]
        window_max: Option<f64>,
        #[arg(long)]
        hurst_tol: Option<f64>,
        #[arg(long)]
        diffusion_tol: Option<f64>,
        #[arg(long)]
        kurtosis_sigmas: Option<f64>,
        #[arg(long)]
        fourth_slope_tol: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    Full,
    Frozen,
    FrozenExact,
}

impl From<ModeArg> for EnsembleMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => EnsembleMode::Full,
            ModeArg::Frozen => EnsembleMode::Frozen,
            ModeArg::FrozenExact => EnsembleMode::FrozenExact,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum MethodArg {
    Cholesky,
    Circulant,
}

impl From<MethodArg> for FbmMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Cholesky => FbmMethod::Cholesky,
            MethodArg::Circulant => FbmMethod::Circulant,
        }
    }
}

impl ParamArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(alpha, beta, dim, plateau, support_k, kappa);
        if self.taper_start.is_some() {
            c.taper_start = self.taper_start;
        }
    }
}

impl RunArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        if let Some(e) = &self.eps {
            c.eps_ladder = e.clone();
        }
        if let Some(t) = self.t_final {
            c.t_final = t;
        }
        if let Some(n) = self.steps {
            c.n_steps = n;
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}
