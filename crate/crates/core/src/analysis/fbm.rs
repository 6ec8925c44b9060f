//! Exact fractional Brownian motion samples, used as a synthetic ground truth
//! for the estimators.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::par::{map_indexed, Executor};
use crate::rng::StreamSeed;
use crate::theory::FbmModel;
use crate::tracer::Trajectory;

/// Largest grid handled by the dense Cholesky method.
pub const CHOLESKY_MAX_STEPS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FbmMethod {
    /// Dense Cholesky factor of the position covariance.
    Cholesky,
    /// Circulant embedding of the increment autocovariance.
    #[default]
    Circulant,
}

/// Cov(X(t), X(s)) = (D/2)(t^{2H} + s^{2H} − |t − s|^{2H}).
pub fn fbm_covariance(m: &FbmModel, t: f64, s: f64) -> f64 {
    let p = 2.0 * m.hurst;
    0.5 * m.diffusion * (t.abs().powf(p) + s.abs().powf(p) - (t - s).abs().powf(p))
}

/// Independent scalar paths on the grid `0, dt, …, steps·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmPaths {
    pub dt: f64,
    pub method: FbmMethod,
    /// Each path has `steps + 1` points and starts at 0.
    pub paths: Vec<Vec<f64>>,
}

impl FbmPaths {
    pub fn times(&self) -> Vec<f64> {
        let n = self.paths.first().map_or(0, Vec::len);
        (0..n).map(|i| i as f64 * self.dt).collect()
    }
}

fn normals(seed: u64, path: usize, n: usize) -> Vec<f64> {
    let mut rng = StreamSeed::new(seed, path as u64).stream(0);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Draws `n_paths` paths. Path `i` uses its own random stream, so the result
/// does not depend on the executor.
pub fn generate_fbm(
    m: &FbmModel,
    steps: usize,
    dt: f64,
    n_paths: usize,
    seed: u64,
    method: FbmMethod,
    executor: Executor,
) -> Result<FbmPaths, AnalysisError> {
    if !(m.hurst > 0.0 && m.hurst < 1.0) || !(m.diffusion >= 0.0) {
        return Err(AnalysisError::InvalidModel(format!(
            "hurst {} and diffusion {} do not define a fractional Brownian motion",
            m.hurst, m.diffusion
        )));
    }
    if steps == 0 || !(dt > 0.0 && dt.is_finite()) {
        return Err(AnalysisError::InsufficientData(
            "need at least one step and a positive dt".into(),
        ));
    }
    match method {
        FbmMethod::Cholesky => cholesky_paths(m, steps, dt, n_paths, seed, executor),
        FbmMethod::Circulant => match circulant_eigenvalues(m, steps, dt) {
            Some(eig) => Ok(circulant_paths(&eig, steps, dt, n_paths, seed, executor)),
            None if steps <= CHOLESKY_MAX_STEPS => {
                cholesky_paths(m, steps, dt, n_paths, seed, executor)
            }
            None => Err(AnalysisError::NotPositiveDefinite),
        },
    }
}

fn cholesky_paths(
    m: &FbmModel,
    steps: usize,
    dt: f64,
    n_paths: usize,
    seed: u64,
    executor: Executor,
) -> Result<FbmPaths, AnalysisError> {
    if steps > CHOLESKY_MAX_STEPS {
        return Err(AnalysisError::InsufficientData(format!(
            "Cholesky generation is limited to {CHOLESKY_MAX_STEPS} steps"
        )));
    }
    let cov = DMatrix::from_fn(steps, steps, |i, j| {
        fbm_covariance(m, (i + 1) as f64 * dt, (j + 1) as f64 * dt)
    });
    let scale = cov.diagonal().max();
    let mut factor = None;
    for jitter in [0.0, 1e-14, 1e-12, 1e-10] {
        let mut c = cov.clone();
        for i in 0..steps {
            c[(i, i)] += jitter * scale;
        }
        if let Some(ch) = c.cholesky() {
            factor = Some(ch.l());
            break;
        }
    }
    let l = factor.ok_or(AnalysisError::NotPositiveDefinite)?;
    let paths = map_indexed(n_paths, executor, |p| {
        let z = DVector::from_vec(normals(seed, p, steps));
        let x = &l * z;
        std::iter::once(0.0).chain(x.iter().copied()).collect()
    });
    Ok(FbmPaths {
        dt,
        method: FbmMethod::Cholesky,
        paths,
    })
}

/// Eigenvalues of the circulant embedding of fractional Gaussian noise, or
/// `None` if the embedding is not nonnegative definite.
fn circulant_eigenvalues(m: &FbmModel, steps: usize, dt: f64) -> Option<Vec<f64>> {
    let n = steps;
    let h2 = 2.0 * m.hurst;
    let var = m.diffusion * dt.powf(h2);
    let gamma = |k: usize| {
        let k = k as f64;
        0.5 * var * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
    };
    let len = 2 * n;
    let mut row: Vec<Complex<f64>> = (0..len)
        .map(|j| {
            let k = if j <= n { j } else { len - j };
            Complex::new(gamma(k), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut row);
    let max = row.iter().map(|c| c.re).fold(0.0, f64::max);
    let mut eig = Vec::with_capacity(len);
    for c in row {
        if c.re < -1e-10 * max {
            return None;
        }
        eig.push(c.re.max(0.0));
    }
    Some(eig)
}

fn circulant_paths(
    eig: &[f64],
    steps: usize,
    dt: f64,
    n_paths: usize,
    seed: u64,
    executor: Executor,
) -> FbmPaths {
    let len = eig.len();
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(len);
    let scale: Vec<f64> = eig.iter().map(|l| (l / len as f64).sqrt()).collect();
    let paths = map_indexed(n_paths, executor, |p| {
        let z = normals(seed, p, 2 * len);
        let mut buf: Vec<Complex<f64>> = (0..len)
            .map(|j| Complex::new(z[2 * j], z[2 * j + 1]) * scale[j])
            .collect();
        fft.process(&mut buf);
        let mut path = Vec::with_capacity(steps + 1);
        let mut x = 0.0;
        path.push(0.0);
        for c in &buf[..steps] {
            x += c.re;
            path.push(x);
        }
        path
    });
    FbmPaths {
        dt,
        method: FbmMethod::Circulant,
        paths,
    }
}

/// `n_traj` trajectories in `dim` dimensions with independent axes; axis `i`
/// of trajectory `k` is path `k·dim + i`.
pub fn fbm_trajectories(
    m: &FbmModel,
    steps: usize,
    dt: f64,
    n_traj: usize,
    dim: usize,
    seed: u64,
    method: FbmMethod,
    executor: Executor,
) -> Result<Vec<Trajectory>, AnalysisError> {
    let raw = generate_fbm(m, steps, dt, n_traj * dim, seed, method, executor)?;
    let times = raw.times();
    Ok((0..n_traj)
        .map(|k| Trajectory {
            id: k as u64,
            times: times.clone(),
            positions: (0..=steps)
                .map(|t| (0..dim).map(|i| raw.paths[k * dim + i][t]).collect())
                .collect(),
            eps: f64::NAN,
            seed,
            frozen: false,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brownian_covariance() {
        let m = FbmModel::new(2.0, 0.5).unwrap();
        assert!((fbm_covariance(&m, 3.0, 5.0) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn methods_agree_in_distribution() {
        let m = FbmModel::new(1.0, 0.75).unwrap();
        for method in [FbmMethod::Cholesky, FbmMethod::Circulant] {
            let p = generate_fbm(&m, 16, 0.25, 4000, 9, method, Executor::Sequential).unwrap();
            assert_eq!(p.method, method);
            let var: f64 = p.paths.iter().map(|x| x[16] * x[16]).sum::<f64>() / 4000.0;
            // Var X(4) = 4^{1.5} = 8; sampling error ≈ 8·sqrt(2/4000) ≈ 0.18.
            assert!((var - 8.0).abs() < 0.8, "{method:?}: {var}");
        }
    }

    #[test]
    fn executor_does_not_change_paths() {
        let m = FbmModel::new(1.0, 0.3).unwrap();
        let a = generate_fbm(&m, 64, 0.1, 8, 1, FbmMethod::Circulant, Executor::Parallel).unwrap();
        let b = generate_fbm(&m, 64, 0.1, 8, 1, FbmMethod::Circulant, Executor::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_input() {
        let m = FbmModel { diffusion: 1.0, hurst: 1.2 };
        assert!(generate_fbm(&m, 8, 0.1, 1, 0, FbmMethod::Circulant, Executor::Sequential).is_err());
        let m = FbmModel::new(1.0, 0.5).unwrap();
        assert!(generate_fbm(&m, 0, 0.1, 1, 0, FbmMethod::Circulant, Executor::Sequential).is_err());
        assert!(generate_fbm(&m, 5000, 0.1, 1, 0, FbmMethod::Cholesky, Executor::Sequential).is_err());
    }
}
