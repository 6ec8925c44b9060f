//! Passive tracers under the anomalous scaling
//! dx_ε/dt = ε^{1−2δ} V(t/ε^{2δ}, x_ε), x_ε(0) = 0.
//!
//! Integration happens in field time s = t/ε^{2δ}, where the equation reads
//! dx/ds = ε V(s, x). Within each micro-step the field is frozen at the step
//! midpoint and the position is advanced with classical RK4; the field itself
//! moves by exact OU updates between midpoints.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::stats::{EnsembleStats, LagGrid, TrajSummary};
use crate::error::TracerError;
use crate::field::{FieldRealization, SamplingStrategy, SpectralMeasure};
use crate::par::{try_map_indexed, Executor};
use crate::quadrature::QuadConfig;
use crate::rng::{StreamSeed, NOISE_STREAM};
use crate::theory::{scaling_exponent_delta, velocity_rms, SpectrumParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracerConfig {
    pub eps: f64,
    pub t_final: f64,
    /// Output times, sorted, starting at 0 and ending at or before `t_final`.
    pub out_grid: Vec<f64>,
    /// Micro-step in field time.
    pub dt_micro: f64,
    pub kappa: f64,
    pub m_count: usize,
    pub strategy: SamplingStrategy,
}

impl TracerConfig {
    /// Uniform output grid of `steps` intervals on `[0, t_final]`.
    pub fn uniform(eps: f64, t_final: f64, steps: usize, dt_micro: f64, m_count: usize) -> Self {
        let out_grid = uniform_grid(t_final, steps);
        Self {
            eps,
            t_final,
            out_grid,
            dt_micro,
            kappa: 0.0,
            m_count,
            strategy: SamplingStrategy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TracerError> {
        let bad = |m: String| Err(TracerError::InvalidConfig(m));
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return bad(format!("eps = {} must lie in (0, 1]", self.eps));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final = {} must be positive", self.t_final));
        }
        if !(self.dt_micro > 0.0 && self.dt_micro.is_finite()) {
            return bad(format!("dt_micro = {} must be positive", self.dt_micro));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa = {} must be nonnegative", self.kappa));
        }
        if self.m_count == 0 {
            return bad("m_count must be at least 1".into());
        }
        match self.out_grid.first() {
            Some(&t0) if t0 == 0.0 => {}
            _ => return bad("output grid must start at t = 0".into()),
        }
        if self.out_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("output grid must be strictly increasing".into());
        }
        if self.out_grid.last().is_some_and(|&t| t > self.t_final * (1.0 + 1e-12)) {
            return bad("output grid extends past t_final".into());
        }
        Ok(())
    }
}

pub fn uniform_grid(t_final: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|i| {
            if i == steps {
                t_final
            } else {
                t_final * i as f64 / steps as f64
            }
        })
        .collect()
}

/// min(0.1·K^{−2β}, 0.1·(2π/K)/V_rms).
pub fn default_dt_micro(p: &SpectrumParams) -> Result<f64, TracerError> {
    let k = p.support_k();
    let v_rms = velocity_rms(p, &QuadConfig::relative(1e-8))?;
    let by_rate = 0.1 / p.rate(k).max(f64::MIN_POSITIVE);
    let by_sweep = 0.1 * (2.0 * PI / k) / v_rms;
    Ok(by_rate.min(by_sweep))
}

/// Largest field-time horizon t_final/ε^{2δ} that the stratification floor
/// resolves, compared with k_low^{−2β}. Returns `(horizon, correlation_time)`.
pub fn horizon_vs_floor(
    p: &SpectrumParams,
    eps: f64,
    t_final: f64,
    k_low: f64,
) -> Result<(f64, f64), TracerError> {
    let delta = scaling_exponent_delta(p)?;
    Ok((t_final / eps.powf(2.0 * delta), 1.0 / p.rate(k_low)))
}

/// Rescaled path x_ε on the output grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub eps: f64,
    pub seed: u64,
    /// True for the frozen-position control process y_ε.
    pub frozen: bool,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleMode {
    /// Full dynamics, velocity sampled along the path.
    #[default]
    Full,
    /// Velocity sampled at the origin, same micro-stepping as `Full`.
    Frozen,
    /// Velocity sampled at the origin, time integral drawn exactly from the
    /// joint Gaussian law of each OU coordinate and its integral.
    FrozenExact,
}

impl EnsembleMode {
    pub fn is_frozen(self) -> bool {
        !matches!(self, EnsembleMode::Full)
    }
}

/// A validated configuration with its precomputed spectral discretization.
#[derive(Debug, Clone)]
pub struct Simulation {
    params: SpectrumParams,
    config: TracerConfig,
    measure: SpectralMeasure,
    time_scale: f64,
}

impl Simulation {
    pub fn new(p: &SpectrumParams, c: &TracerConfig) -> Result<Self, TracerError> {
        c.validate()?;
        let delta = scaling_exponent_delta(p)?;
        let measure = SpectralMeasure::new(p, c.m_count, c.strategy)?;
        Ok(Self {
            params: p.clone(),
            config: c.clone(),
            measure,
            time_scale: c.eps.powf(2.0 * delta),
        })
    }

    pub fn params(&self) -> &SpectrumParams {
        &self.params
    }

    pub fn config(&self) -> &TracerConfig {
        &self.config
    }

    pub fn measure(&self) -> &SpectralMeasure {
        &self.measure
    }

    /// ε^{2δ}: macroscopic time per unit of field time.
    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    pub fn field(&self, seed: StreamSeed) -> FieldRealization {
        self.measure.realize(seed)
    }

    pub fn run(&self, seed: StreamSeed, mode: EnsembleMode) -> Result<Trajectory, TracerError> {
        match mode {
            EnsembleMode::Full => self.trajectory(seed),
            EnsembleMode::Frozen => self.frozen(seed),
            EnsembleMode::FrozenExact => self.frozen_exact(seed),
        }
    }

    pub fn trajectory(&self, seed: StreamSeed) -> Result<Trajectory, TracerError> {
        let mut field = self.field(seed);
        self.integrate_field(&mut field, seed, false)
    }

    pub fn frozen(&self, seed: StreamSeed) -> Result<Trajectory, TracerError> {
        let mut field = self.field(seed);
        self.integrate_field(&mut field, seed, true)
    }

    /// Micro-stepping through a caller-supplied field (which must start at
    /// clock 0).
    pub fn integrate_field(
        &self,
        field: &mut FieldRealization,
        seed: StreamSeed,
        at_origin: bool,
    ) -> Result<Trajectory, TracerError> {
        let c = &self.config;
        let d = field.dim();
        let eps = c.eps;
        let mut noise = (c.kappa > 0.0).then(|| seed.stream(NOISE_STREAM));
        let k_max = field.max_wavenumber();
        let wavelength = if k_max > 0.0 { 2.0 * PI / k_max } else { f64::INFINITY };

        let mut x = vec![0.0; d];
        let mut positions = Vec::with_capacity(c.out_grid.len());
        positions.push(x.clone());
        let mut k1 = vec![0.0; d];
        let mut k2 = vec![0.0; d];
        let mut k3 = vec![0.0; d];
        let mut k4 = vec![0.0; d];
        let mut probe = vec![0.0; d];
        let mut step: u64 = 0;
        let mut pending_half = 0.0;

        for w in c.out_grid.windows(2) {
            let span = (w[1] - w[0]) / self.time_scale;
            let n_sub = ((span / c.dt_micro) * (1.0 - 1e-12)).ceil().max(1.0) as u64;
            let h = span / n_sub as f64;
            for _ in 0..n_sub {
                field.advance(pending_half + 0.5 * h);
                pending_half = 0.5 * h;

                if at_origin {
                    field.evaluate_origin_into(&mut k1);
                    for i in 0..d {
                        k1[i] *= eps;
                        x[i] += h * k1[i];
                    }
                } else {
                    field.evaluate_into(&x, &mut k1);
                    k1.iter_mut().for_each(|v| *v *= eps);
                    for i in 0..d {
                        probe[i] = x[i] + 0.5 * h * k1[i];
                    }
                    field.evaluate_into(&probe, &mut k2);
                    k2.iter_mut().for_each(|v| *v *= eps);
                    for i in 0..d {
                        probe[i] = x[i] + 0.5 * h * k2[i];
                    }
                    field.evaluate_into(&probe, &mut k3);
                    k3.iter_mut().for_each(|v| *v *= eps);
                    for i in 0..d {
                        probe[i] = x[i] + h * k3[i];
                    }
                    field.evaluate_into(&probe, &mut k4);
                    k4.iter_mut().for_each(|v| *v *= eps);
                    for i in 0..d {
                        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    }
                }

                let displacement = h * k1.iter().map(|v| v * v).sum::<f64>().sqrt();
                if displacement > 0.1 * wavelength {
                    return Err(TracerError::StepTooLarge {
                        step,
                        displacement,
                        wavelength,
                    });
                }
                if let Some(rng) = noise.as_mut() {
                    let sd = (2.0 * c.kappa * h * self.time_scale).sqrt();
                    for xi in x.iter_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *xi += sd * z;
                    }
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(TracerError::NonFinite { step });
                }
                step += 1;
            }
            positions.push(x.clone());
        }

        Ok(Trajectory {
            id: seed.trajectory,
            times: c.out_grid.clone(),
            positions,
            eps,
            seed: seed.master,
            frozen: at_origin,
        })
    }

    /// y_ε with each output interval drawn exactly: no micro-steps at all.
    pub fn frozen_exact(&self, seed: StreamSeed) -> Result<Trajectory, TracerError> {
        let c = &self.config;
        let mut field = self.field(seed);
        let d = field.dim();
        let mut noise = (c.kappa > 0.0).then(|| seed.stream(NOISE_STREAM));
        let mut y = vec![0.0; d];
        let mut positions = Vec::with_capacity(c.out_grid.len());
        positions.push(y.clone());
        let mut integral = vec![0.0; d];
        for (step, w) in c.out_grid.windows(2).enumerate() {
            let dt_macro = w[1] - w[0];
            field.integrate_origin_exact(dt_macro / self.time_scale, &mut integral);
            for i in 0..d {
                y[i] += c.eps * integral[i];
            }
            if let Some(rng) = noise.as_mut() {
                let sd = (2.0 * c.kappa * dt_macro).sqrt();
                for yi in y.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *yi += sd * z;
                }
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(TracerError::NonFinite { step: step as u64 });
            }
            positions.push(y.clone());
        }
        Ok(Trajectory {
            id: seed.trajectory,
            times: c.out_grid.clone(),
            positions,
            eps: c.eps,
            seed: seed.master,
            frozen: true,
        })
    }
}

/// Full dynamics for one seed.
pub fn integrate_trajectory(
    p: &SpectrumParams,
    c: &TracerConfig,
    seed: StreamSeed,
) -> Result<Trajectory, TracerError> {
    Simulation::new(p, c)?.trajectory(seed)
}

/// Frozen-position control process y_ε for one seed.
pub fn integrate_frozen(
    p: &SpectrumParams,
    c: &TracerConfig,
    seed: StreamSeed,
) -> Result<Trajectory, TracerError> {
    Simulation::new(p, c)?.frozen(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOptions {
    pub mode: EnsembleMode,
    /// Keep every trajectory in the result, not only the statistics.
    pub keep_trajectories: bool,
    pub executor: Executor,
    /// Lags in output-grid steps; defaults to `0..=n/2`.
    pub lags: Option<Vec<usize>>,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            mode: EnsembleMode::Full,
            keep_trajectories: false,
            executor: Executor::Parallel,
            lags: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub master_seed: u64,
    pub n_traj: usize,
    pub mode: EnsembleMode,
    pub trajectories: Option<Vec<Trajectory>>,
    pub stats: EnsembleStats,
}

/// Runs `n_traj` independent trajectories; trajectory `i` uses the seed
/// `(master_seed, i)` and its own field realization.
pub fn run_ensemble(
    p: &SpectrumParams,
    c: &TracerConfig,
    n_traj: usize,
    master_seed: u64,
    opts: &EnsembleOptions,
) -> Result<EnsembleResult, TracerError> {
    if n_traj == 0 {
        return Err(TracerError::InvalidConfig("n_traj must be at least 1".into()));
    }
    let sim = Simulation::new(p, c)?;
    let grid = match &opts.lags {
        Some(lags) => LagGrid::new(grid_spacing(&c.out_grid)?, lags.clone()),
        None => LagGrid::for_times(&c.out_grid).map_err(TracerError::Analysis)?,
    };
    let empty = EnsembleStats::new(p.dim(), grid);
    let outputs: Vec<(Option<Trajectory>, TrajSummary)> =
        try_map_indexed(n_traj, opts.executor, |i| {
            let seed = StreamSeed::new(master_seed, i as u64);
            let traj = sim.run(seed, opts.mode).map_err(|e| TracerError::Trajectory {
                id: i as u64,
                master_seed,
                source: Box::new(e),
            })?;
            let summary = empty.summarize(&traj)?;
            Ok::<_, TracerError>((opts.keep_trajectories.then_some(traj), summary))
        })?;
    let mut stats = empty;
    let mut trajectories = opts.keep_trajectories.then(|| Vec::with_capacity(n_traj));
    for (i, (traj, summary)) in outputs.into_iter().enumerate() {
        stats.insert(i as u64, summary)?;
        if let (Some(all), Some(t)) = (trajectories.as_mut(), traj) {
            all.push(t);
        }
    }
    Ok(EnsembleResult {
        master_seed,
        n_traj,
        mode: opts.mode,
        trajectories,
        stats,
    })
}

fn grid_spacing(times: &[f64]) -> Result<f64, TracerError> {
    if times.len() < 2 {
        return Err(TracerError::InvalidConfig("output grid needs two points".into()));
    }
    Ok(times[1] - times[0])
}
