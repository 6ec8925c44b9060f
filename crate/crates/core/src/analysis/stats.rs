//! Streaming per-lag moment accumulation over an ensemble.
//!
//! Statistics are kept per trajectory and keyed by trajectory id, so that
//! merging fragments computed on different workers, or in a different order,
//! gives bit-identical pooled sums: pooling always walks the ids in order.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::par::{map_indexed, Executor};
use crate::rng::{StreamSeed, BOOTSTRAP_STREAM};
use crate::tracer::Trajectory;

/// Bootstrap resamples used for standard errors.
pub const BOOTSTRAP_REPLICATES: usize = 200;
const BOOTSTRAP_MASTER: u64 = 0xB007_5742_A11E_0001;
const GRID_RTOL: f64 = 1e-9;

/// Lags measured in output-grid steps of length `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagGrid {
    pub dt: f64,
    pub lags: Vec<usize>,
}

impl LagGrid {
    pub fn new(dt: f64, lags: Vec<usize>) -> Self {
        Self { dt, lags }
    }

    /// Lags `0..=(n − 1)/2` for `n` uniformly spaced output times.
    pub fn for_times(times: &[f64]) -> Result<Self, AnalysisError> {
        let dt = uniform_spacing(times)?;
        Ok(Self::new(dt, (0..=(times.len() - 1) / 2).collect()))
    }

    pub fn tau(&self, i: usize) -> f64 {
        self.lags[i] as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }
}

fn uniform_spacing(times: &[f64]) -> Result<f64, AnalysisError> {
    if times.len() < 2 {
        return Err(AnalysisError::InsufficientData(
            "a trajectory needs at least two output times".into(),
        ));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(AnalysisError::GridMismatch("output times must increase".into()));
    }
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > GRID_RTOL * dt.max(w[1].abs()) {
            return Err(AnalysisError::GridMismatch(format!(
                "output grid is not uniform at index {}",
                i + 1
            )));
        }
    }
    Ok(dt)
}

/// Raw sums for one trajectory, per lag: count, Σ Δ, Σ Δ⊗Δ, Σ |Δ|⁴ and the
/// per-axis Σ Δ_i⁴. Increments are taken over all overlapping windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajSummary {
    pub count: Vec<u64>,
    pub sum: Vec<f64>,
    pub sum_outer: Vec<f64>,
    pub sum_norm4: Vec<f64>,
    pub sum_axis4: Vec<f64>,
}

impl TrajSummary {
    fn zeros(n_lags: usize, d: usize) -> Self {
        Self {
            count: vec![0; n_lags],
            sum: vec![0.0; n_lags * d],
            sum_outer: vec![0.0; n_lags * d * d],
            sum_norm4: vec![0.0; n_lags],
            sum_axis4: vec![0.0; n_lags * d],
        }
    }

    fn add_scaled(&mut self, other: &TrajSummary, times: u64) {
        let w = times as f64;
        for (a, b) in self.count.iter_mut().zip(&other.count) {
            *a += b * times;
        }
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += w * b;
        }
        for (a, b) in self.sum_outer.iter_mut().zip(&other.sum_outer) {
            *a += w * b;
        }
        for (a, b) in self.sum_norm4.iter_mut().zip(&other.sum_norm4) {
            *a += w * b;
        }
        for (a, b) in self.sum_axis4.iter_mut().zip(&other.sum_axis4) {
            *a += w * b;
        }
    }
}

/// Per-trajectory summaries of an ensemble on a common lag grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    dim: usize,
    grid: LagGrid,
    per_traj: BTreeMap<u64, TrajSummary>,
}

impl EnsembleStats {
    pub fn new(dim: usize, grid: LagGrid) -> Self {
        Self {
            dim,
            grid,
            per_traj: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &LagGrid {
        &self.grid
    }

    /// Number of trajectories.
    pub fn n(&self) -> usize {
        self.per_traj.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.per_traj.keys().copied()
    }

    /// Increment sums of one trajectory on this grid, without storing them.
    pub fn summarize(&self, traj: &Trajectory) -> Result<TrajSummary, AnalysisError> {
        let d = self.dim;
        if traj.dim() != d || traj.positions.iter().any(|x| x.len() != d) {
            return Err(AnalysisError::GridMismatch(format!(
                "trajectory {} is not {d}-dimensional",
                traj.id
            )));
        }
        if traj.times.len() != traj.positions.len() {
            return Err(AnalysisError::GridMismatch(format!(
                "trajectory {} has {} times but {} positions",
                traj.id,
                traj.times.len(),
                traj.positions.len()
            )));
        }
        let dt = uniform_spacing(&traj.times)?;
        if (dt - self.grid.dt).abs() > GRID_RTOL * self.grid.dt {
            return Err(AnalysisError::GridMismatch(format!(
                "trajectory {} has spacing {dt} but the lag grid uses {}",
                traj.id, self.grid.dt
            )));
        }
        let n = traj.positions.len();
        if let Some(&max_lag) = self.grid.lags.iter().max() {
            if max_lag >= n {
                return Err(AnalysisError::GridMismatch(format!(
                    "lag {max_lag} needs more than the {n} points of trajectory {}",
                    traj.id
                )));
            }
        }
        let mut s = TrajSummary::zeros(self.grid.len(), d);
        let mut delta = vec![0.0; d];
        for (li, &lag) in self.grid.lags.iter().enumerate() {
            for start in 0..n - lag {
                let (a, b) = (&traj.positions[start], &traj.positions[start + lag]);
                for i in 0..d {
                    delta[i] = b[i] - a[i];
                }
                s.count[li] += 1;
                let mut norm2 = 0.0;
                for i in 0..d {
                    s.sum[li * d + i] += delta[i];
                    s.sum_axis4[li * d + i] += delta[i].powi(4);
                    norm2 += delta[i] * delta[i];
                    for k in 0..d {
                        s.sum_outer[(li * d + i) * d + k] += delta[i] * delta[k];
                    }
                }
                s.sum_norm4[li] += norm2 * norm2;
            }
        }
        Ok(s)
    }

    /// Stores a summary under `id`. Ids must be unique.
    pub fn insert(&mut self, id: u64, summary: TrajSummary) -> Result<(), AnalysisError> {
        let l = self.grid.len();
        let d = self.dim;
        if summary.count.len() != l || summary.sum_outer.len() != l * d * d {
            return Err(AnalysisError::GridMismatch("summary shape does not match the grid".into()));
        }
        if self.per_traj.contains_key(&id) {
            return Err(AnalysisError::DuplicateTrajectory(id));
        }
        self.per_traj.insert(id, summary);
        Ok(())
    }

    pub fn accumulate(&mut self, traj: &Trajectory) -> Result<(), AnalysisError> {
        let s = self.summarize(traj)?;
        self.insert(traj.id, s)
    }

    /// Union of two fragments on the same grid with disjoint ids.
    pub fn merge(&self, other: &EnsembleStats) -> Result<EnsembleStats, AnalysisError> {
        if self.dim != other.dim || self.grid != other.grid {
            return Err(AnalysisError::GridMismatch(
                "fragments use different dimensions or lag grids".into(),
            ));
        }
        let mut out = self.clone();
        for (&id, s) in &other.per_traj {
            out.insert(id, s.clone())?;
        }
        Ok(out)
    }

    fn pooled(&self, multiplicity: Option<&[u64]>) -> TrajSummary {
        let mut total = TrajSummary::zeros(self.grid.len(), self.dim);
        for (i, s) in self.per_traj.values().enumerate() {
            let times = multiplicity.map_or(1, |m| m[i]);
            if times > 0 {
                total.add_scaled(s, times);
            }
        }
        total
    }
}

/// Functional form of [`EnsembleStats::accumulate`].
pub fn accumulate(
    mut stats: EnsembleStats,
    traj: &Trajectory,
) -> Result<EnsembleStats, AnalysisError> {
    stats.accumulate(traj)?;
    Ok(stats)
}

/// Functional form of [`EnsembleStats::merge`].
pub fn merge(a: &EnsembleStats, b: &EnsembleStats) -> Result<EnsembleStats, AnalysisError> {
    a.merge(b)
}

/// Pointwise moment curves derived from one pooled summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCurves {
    /// tr(E[Δ⊗Δ])/d per lag.
    pub msd: Vec<f64>,
    /// E|Δ|⁴ per lag.
    pub fourth: Vec<f64>,
    /// Axis-averaged excess kurtosis E[Δ_i⁴]/E[Δ_i²]² − 3 per lag.
    pub kurtosis: Vec<f64>,
}

fn moment_curves(total: &TrajSummary, d: usize) -> (Vec<Vec<f64>>, MomentCurves) {
    let l = total.count.len();
    let mut tensors = Vec::with_capacity(l);
    let mut curves = MomentCurves {
        msd: Vec::with_capacity(l),
        fourth: Vec::with_capacity(l),
        kurtosis: Vec::with_capacity(l),
    };
    for li in 0..l {
        let n = total.count[li] as f64;
        let t: Vec<f64> = total.sum_outer[li * d * d..(li + 1) * d * d].iter().map(|v| v / n).collect();
        let trace: f64 = (0..d).map(|i| t[i * d + i]).sum();
        curves.msd.push(trace / d as f64);
        curves.fourth.push(total.sum_norm4[li] / n);
        let mut k = 0.0;
        for i in 0..d {
            let m4 = total.sum_axis4[li * d + i] / n;
            let m2 = t[i * d + i];
            k += m4 / (m2 * m2) - 3.0;
        }
        curves.kurtosis.push(k / d as f64);
        tensors.push(t);
    }
    (tensors, curves)
}

/// Ensemble MSD with cluster-bootstrap uncertainties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdCurve {
    pub dim: usize,
    pub n_traj: usize,
    pub lag_steps: Vec<usize>,
    pub lags: Vec<f64>,
    pub counts: Vec<u64>,
    /// Row-major d×d second-moment tensor per lag.
    pub tensor: Vec<Vec<f64>>,
    pub tensor_stderr: Vec<Vec<f64>>,
    pub msd: Vec<f64>,
    pub stderr: Vec<f64>,
    pub fourth: Vec<f64>,
    pub fourth_stderr: Vec<f64>,
    pub kurtosis: Vec<f64>,
    pub kurtosis_stderr: Vec<f64>,
    /// False when a single trajectory makes the error bars meaningless.
    pub reliable: bool,
    pub replicates: Vec<MomentCurves>,
}

impl MsdCurve {
    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }
}

fn sample_sd(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.len() < 2 {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Pooled second-moment tensor per lag; standard errors come from resampling
/// whole trajectories, which respects the correlation between lags.
pub fn msd_curve(stats: &EnsembleStats) -> Result<MsdCurve, AnalysisError> {
    msd_curve_with(stats, BOOTSTRAP_REPLICATES, Executor::default())
}

pub fn msd_curve_with(
    stats: &EnsembleStats,
    replicates: usize,
    executor: Executor,
) -> Result<MsdCurve, AnalysisError> {
    let n = stats.n();
    if n == 0 {
        return Err(AnalysisError::InsufficientData("no trajectories".into()));
    }
    let d = stats.dim;
    let total = stats.pooled(None);
    let (tensor, point) = moment_curves(&total, d);
    let reliable = n >= 2;
    let reps: Vec<(Vec<Vec<f64>>, MomentCurves)> = if reliable {
        map_indexed(replicates, executor, |b| {
            let mut rng = StreamSeed::new(BOOTSTRAP_MASTER, b as u64).stream(BOOTSTRAP_STREAM);
            let mut mult = vec![0u64; n];
            for _ in 0..n {
                mult[rng.random_range(0..n)] += 1;
            }
            moment_curves(&stats.pooled(Some(&mult)), d)
        })
    } else {
        Vec::new()
    };
    let l = stats.grid.len();
    let sd_of = |f: &dyn Fn(&MomentCurves) -> f64| sample_sd(reps.iter().map(|(_, c)| f(c)));
    let stderr: Vec<f64> = (0..l).map(|i| sd_of(&|c| c.msd[i])).collect();
    let fourth_stderr: Vec<f64> = (0..l).map(|i| sd_of(&|c| c.fourth[i])).collect();
    let kurtosis_stderr: Vec<f64> = (0..l).map(|i| sd_of(&|c| c.kurtosis[i])).collect();
    let tensor_stderr: Vec<Vec<f64>> = (0..l)
        .map(|i| (0..d * d).map(|e| sample_sd(reps.iter().map(|(t, _)| t[i][e]))).collect())
        .collect();
    Ok(MsdCurve {
        dim: d,
        n_traj: n,
        lag_steps: stats.grid.lags.clone(),
        lags: (0..l).map(|i| stats.grid.tau(i)).collect(),
        counts: total.count,
        tensor,
        tensor_stderr,
        msd: point.msd,
        stderr,
        fourth: point.fourth,
        fourth_stderr,
        kurtosis: point.kurtosis,
        kurtosis_stderr,
        reliable,
        replicates: reps.into_iter().map(|(_, c)| c).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: u64, slope: f64, n: usize) -> Trajectory {
        Trajectory {
            id,
            times: (0..n).map(|i| i as f64 * 0.5).collect(),
            positions: (0..n).map(|i| vec![slope * i as f64, -slope * i as f64]).collect(),
            eps: 0.1,
            seed: 0,
            frozen: false,
        }
    }

    #[test]
    fn ballistic_paths_have_quadratic_msd() {
        let traj = line(0, 2.0, 11);
        let mut stats = EnsembleStats::new(2, LagGrid::for_times(&traj.times).unwrap());
        stats.accumulate(&traj).unwrap();
        stats.accumulate(&line(1, 2.0, 11)).unwrap();
        let c = msd_curve(&stats).unwrap();
        for (i, &lag) in c.lag_steps.iter().enumerate() {
            let disp = 2.0 * lag as f64;
            assert!((c.msd[i] - disp * disp).abs() < 1e-12);
            assert!((c.tensor[i][1] + disp * disp).abs() < 1e-12);
            assert_eq!(c.counts[i], 2 * (11 - lag) as u64);
        }
        assert!(c.reliable);
        assert!(c.stderr[3] < 1e-12);
    }

    #[test]
    fn single_trajectory_is_flagged() {
        let traj = line(0, 1.0, 5);
        let mut stats = EnsembleStats::new(2, LagGrid::for_times(&traj.times).unwrap());
        stats.accumulate(&traj).unwrap();
        let c = msd_curve(&stats).unwrap();
        assert!(!c.reliable);
        assert!(c.stderr.iter().all(|s| s.is_nan()));
    }

    #[test]
    fn empty_ensemble_is_an_error() {
        let stats = EnsembleStats::new(2, LagGrid::new(0.5, vec![0, 1]));
        assert!(matches!(msd_curve(&stats), Err(AnalysisError::InsufficientData(_))));
    }

    #[test]
    fn grid_mismatch_is_detected() {
        let mut stats = EnsembleStats::new(2, LagGrid::new(0.25, vec![0, 1]));
        assert!(matches!(
            stats.accumulate(&line(0, 1.0, 5)),
            Err(AnalysisError::GridMismatch(_))
        ));
        let mut uneven = line(1, 1.0, 5);
        uneven.times[3] = 1.6;
        let mut stats = EnsembleStats::new(2, LagGrid::new(0.5, vec![0, 1]));
        assert!(stats.accumulate(&uneven).is_err());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let t = line(7, 1.0, 5);
        let grid = LagGrid::for_times(&t.times).unwrap();
        let a = accumulate(EnsembleStats::new(2, grid.clone()), &t).unwrap();
        let b = accumulate(EnsembleStats::new(2, grid), &t).unwrap();
        assert_eq!(merge(&a, &b), Err(AnalysisError::DuplicateTrajectory(7)));
    }
}
