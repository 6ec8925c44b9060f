//! Run configuration: a flat JSON file, overridden by command-line flags.
//!
//! Precedence for every field is flag > environment > file > default. The
//! only environment override is `FBMLAB_OUTPUT_DIR`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fbmlab::analysis::{FbmMethod, FitWindow, Tolerances};
use fbmlab::field::SamplingStrategy;
use fbmlab::theory::{validate_params, RawParams, SpectrumParams};
use fbmlab::tracer::{default_dt_micro, uniform_grid, EnsembleMode, TracerConfig};
use serde::{Deserialize, Serialize};

pub const OUTPUT_DIR_ENV: &str = "FBMLAB_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "fbmlab-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub beta: f64,
    pub dim: usize,
    pub plateau: f64,
    pub taper_start: Option<f64>,
    pub support_k: f64,
    pub kappa: f64,

    pub eps_ladder: Vec<f64>,
    pub t_final: f64,
    /// Number of output intervals on `[0, t_final]`.
    pub n_steps: usize,
    /// Field-time micro-step; derived from the spectrum when absent.
    pub dt_micro: Option<f64>,
    pub m_count: usize,
    pub strategy: SamplingStrategy,
    pub mode: EnsembleMode,
    pub n_traj: usize,
    pub master_seed: u64,
    pub write_trajectories: bool,
    pub output_dir: Option<PathBuf>,

    pub fit_window: Option<[f64; 2]>,
    pub hurst_tol: f64,
    pub diffusion_rel_tol: f64,
    pub kurtosis_sigmas: f64,
    pub fourth_slope_tol: Option<f64>,

    pub fbm_hurst: Option<f64>,
    pub fbm_dscalar: Option<f64>,
    pub fbm_paths: usize,
    pub fbm_method: FbmMethod,
}

impl Default for RunConfig {
    fn default() -> Self {
        let raw = RawParams::default();
        let tol = Tolerances::default();
        Self {
            alpha: raw.alpha,
            beta: raw.beta,
            dim: raw.dim,
            plateau: raw.plateau,
            taper_start: raw.taper_start,
            support_k: raw.support_k,
            kappa: raw.kappa,
            eps_ladder: vec![0.4, 0.2, 0.1],
            t_final: 1.0,
            n_steps: 100,
            dt_micro: None,
            m_count: 4096,
            strategy: SamplingStrategy::default(),
            mode: EnsembleMode::Full,
            n_traj: 100,
            master_seed: 0,
            write_trajectories: true,
            output_dir: None,
            fit_window: None,
            hurst_tol: tol.hurst_abs,
            diffusion_rel_tol: tol.diffusion_rel,
            kurtosis_sigmas: tol.kurtosis_sigmas,
            fourth_slope_tol: tol.fourth_slope_abs,
            fbm_hurst: None,
            fbm_dscalar: None,
            fbm_paths: 100,
            fbm_method: FbmMethod::Circulant,
        }
    }
}

impl RunConfig {
    /// Reads a config file; a missing or malformed file is an error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn raw_params(&self) -> RawParams {
        RawParams {
            alpha: self.alpha,
            beta: self.beta,
            dim: self.dim,
            plateau: self.plateau,
            taper_start: self.taper_start,
            support_k: self.support_k,
            kappa: self.kappa,
        }
    }

    pub fn params(&self) -> Result<SpectrumParams> {
        Ok(validate_params(&self.raw_params())?)
    }

    /// Applies flag > env > file > default to the output directory.
    pub fn resolve_output_dir(&mut self, flag: Option<PathBuf>) {
        let env = std::env::var_os(OUTPUT_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        self.output_dir = flag
            .or(env)
            .or(self.output_dir.take())
            .or_else(|| Some(PathBuf::from(DEFAULT_OUTPUT_DIR)));
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    /// Fills `dt_micro` from the spectrum when it was not given.
    pub fn resolve_dt_micro(&mut self, p: &SpectrumParams) -> Result<f64> {
        let dt = match self.dt_micro {
            Some(dt) => dt,
            None => default_dt_micro(p)?,
        };
        if !(dt > 0.0 && dt.is_finite()) {
            bail!("dt_micro = {dt} must be positive");
        }
        self.dt_micro = Some(dt);
        Ok(dt)
    }

    pub fn tracer_config(&self, eps: f64) -> TracerConfig {
        TracerConfig {
            eps,
            t_final: self.t_final,
            out_grid: uniform_grid(self.t_final, self.n_steps),
            dt_micro: self.dt_micro.unwrap_or(0.1),
            kappa: self.kappa,
            m_count: self.m_count,
            strategy: self.strategy,
        }
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            hurst_abs: self.hurst_tol,
            diffusion_rel: self.diffusion_rel_tol,
            kurtosis_sigmas: self.kurtosis_sigmas,
            fourth_slope_abs: self.fourth_slope_tol,
        }
    }

    pub fn window_for(&self, t_max: f64) -> FitWindow {
        match self.fit_window {
            Some([a, b]) => FitWindow::new(a, b),
            None => FitWindow::default_for(t_max),
        }
    }

    pub fn validate_run(&self) -> Result<()> {
        if self.eps_ladder.is_empty() {
            bail!("eps ladder is empty");
        }
        if let Some(e) = self.eps_ladder.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            bail!("eps = {e} must lie in (0, 1]");
        }
        if self.n_traj == 0 {
            bail!("n_traj must be at least 1");
        }
        if self.n_steps < 2 {
            bail!("n_steps must be at least 2");
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            bail!("t_final = {} must be positive", self.t_final);
        }
        if self.m_count == 0 {
            bail!("m_count must be at least 1");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable") + "\n"
    }
}
