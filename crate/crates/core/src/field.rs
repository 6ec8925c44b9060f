//! Finite-mode synthesis of the Gaussian, Markovian, incompressible velocity
//! field.
//!
//! A realization is a sum of cosine/sine modes
//!
//! ```text
//! V(s, x) = Σ_j w_j [cos(k_j·x) P_j ξ_j(s) + sin(k_j·x) P_j η_j(s)]
//! ```
//!
//! where `P_j` holds an orthonormal basis of the plane orthogonal to `k_j`
//! (so every term is divergence free) and the coordinates of `ξ_j`, `η_j` are
//! independent stationary Ornstein–Uhlenbeck processes with rate |k_j|^{2β}
//! and unit variance. Wavevectors are drawn from the trace of the spectral
//! measure, optionally stratified in logarithmic shells; the weights make the
//! ensemble covariance equal to the continuum one for any mode count.

use std::io::{self, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::FieldError;
use crate::quadrature::{integrate, QuadConfig};
use crate::rng::StreamSeed;
use crate::theory::{unit_sphere_area, SpectrumParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplingStrategy {
    /// Independent draws from the whole measure.
    Iid,
    /// One wavevector per shell; shell edges are geometric between
    /// `k_low_fraction·K` and `K`, and the innermost shell also covers
    /// `[0, k_low_fraction·K]`.
    LogStratified { k_low_fraction: f64 },
}

impl Default for SamplingStrategy {
    fn default() -> Self {
        SamplingStrategy::LogStratified {
            k_low_fraction: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Shell {
    lo: f64,
    hi: f64,
    /// ∫ a(r) r^{1−2α} dr over the shell.
    profile_mass: f64,
    /// Upper bound of a(·) on the shell (a is nonincreasing).
    cap: f64,
}

fn profile_mass(p: &SpectrumParams, lo: f64, hi: f64) -> Result<f64, FieldError> {
    let q = 2.0 - 2.0 * p.alpha();
    let shell = p.shell();
    let ts = shell.taper_start();
    let mut mass = 0.0;
    let flat_hi = hi.min(ts);
    if flat_hi > lo {
        mass += shell.plateau() * (flat_hi.powf(q) - lo.powf(q)) / q;
    }
    let taper_lo = lo.max(ts);
    let taper_hi = hi.min(p.support_k());
    if taper_hi > taper_lo {
        let cfg = QuadConfig {
            rel_tol: 1e-12,
            abs_tol: 1e-300,
            max_intervals: 200,
        };
        mass += integrate(|r| p.radial_profile(r), taper_lo, taper_hi, &cfg)?.value;
    }
    Ok(mass)
}

/// Precomputed discretization of the spectral measure, shared by every
/// realization of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasure {
    params: SpectrumParams,
    strategy: SamplingStrategy,
    m_count: usize,
    shells: Vec<Shell>,
    /// ∫ a(r) r^{1−2α} dr over (0, K).
    profile_total: f64,
}

impl SpectralMeasure {
    pub fn new(
        p: &SpectrumParams,
        m_count: usize,
        strategy: SamplingStrategy,
    ) -> Result<Self, FieldError> {
        if m_count == 0 {
            return Err(FieldError::NoModes);
        }
        if p.alpha() >= 1.0 {
            return Err(FieldError::NotNormalizable(p.alpha()));
        }
        let k = p.support_k();
        let profile_total = profile_mass(p, 0.0, k)?;
        let shells = match strategy {
            SamplingStrategy::Iid => vec![Shell {
                lo: 0.0,
                hi: k,
                profile_mass: profile_total,
                cap: p.shell().plateau(),
            }],
            SamplingStrategy::LogStratified { k_low_fraction } => {
                if !(k_low_fraction > 0.0 && k_low_fraction < 1.0) {
                    return Err(FieldError::InvalidStrategy(format!(
                        "k_low_fraction = {k_low_fraction} must lie in (0, 1)"
                    )));
                }
                let k_low = k_low_fraction * k;
                let ratio = (k / k_low).ln();
                let edge = |i: usize| {
                    if i == m_count {
                        k
                    } else {
                        k_low * (ratio * i as f64 / m_count as f64).exp()
                    }
                };
                (0..m_count)
                    .map(|i| {
                        let lo = if i == 0 { 0.0 } else { edge(i) };
                        let hi = edge(i + 1);
                        Ok(Shell {
                            lo,
                            hi,
                            profile_mass: profile_mass(p, lo, hi)?,
                            cap: p.shell().value(lo),
                        })
                    })
                    .collect::<Result<Vec<_>, FieldError>>()?
            }
        };
        Ok(Self {
            params: p.clone(),
            strategy,
            m_count,
            shells,
            profile_total,
        })
    }

    pub fn params(&self) -> &SpectrumParams {
        &self.params
    }

    pub fn strategy(&self) -> SamplingStrategy {
        self.strategy
    }

    pub fn m_count(&self) -> usize {
        self.m_count
    }

    /// Smallest stratified shell edge, if stratified.
    pub fn k_low(&self) -> Option<f64> {
        match self.strategy {
            SamplingStrategy::Iid => None,
            SamplingStrategy::LogStratified { k_low_fraction } => {
                Some(k_low_fraction * self.params.support_k())
            }
        }
    }

    /// Total mass of the trace measure, trace ∫ R̂(k) dk.
    pub fn total_mass(&self) -> f64 {
        let d = self.params.dim();
        (d as f64 - 1.0) * unit_sphere_area(d) * self.profile_total
    }

    /// Shell bounds `(lo, hi)` in sampling order.
    pub fn shell_bounds(&self) -> Vec<(f64, f64)> {
        self.shells.iter().map(|s| (s.lo, s.hi)).collect()
    }

    fn shell_for(&self, j: usize) -> &Shell {
        if self.shells.len() == 1 {
            &self.shells[0]
        } else {
            &self.shells[j]
        }
    }

    fn weight(&self, j: usize) -> f64 {
        let area = unit_sphere_area(self.params.dim());
        match self.strategy {
            SamplingStrategy::Iid => (area * self.profile_total / self.m_count as f64).sqrt(),
            SamplingStrategy::LogStratified { .. } => (area * self.shells[j].profile_mass).sqrt(),
        }
    }

    /// Draws |k| on a shell from the density ∝ a(r) r^{1−2α} by rejection
    /// from the pure power law.
    fn sample_radius(&self, j: usize, rng: &mut ChaCha8Rng) -> f64 {
        let shell = self.shell_for(j);
        let q = 2.0 - 2.0 * self.params.alpha();
        let lo_q = shell.lo.powf(q);
        let span = shell.hi.powf(q) - lo_q;
        loop {
            let u: f64 = rng.random();
            let r = (lo_q + u * span).powf(1.0 / q).clamp(shell.lo, shell.hi);
            if r == 0.0 {
                continue;
            }
            let accept: f64 = rng.random();
            if accept * shell.cap < self.params.shell().value(r) {
                return r;
            }
        }
    }

    /// Draws a full realization with stationary OU states.
    pub fn realize(&self, seed: StreamSeed) -> FieldRealization {
        let d = self.params.dim();
        let mut modes = Vec::with_capacity(self.m_count);
        let mut streams = Vec::with_capacity(self.m_count);
        for j in 0..self.m_count {
            let mut rng = seed.stream(j as u64);
            let r = self.sample_radius(j, &mut rng);
            let dir = random_direction(d, &mut rng);
            let k: Vec<f64> = dir.iter().map(|c| c * r).collect();
            let basis = orthonormal_complement(&dir);
            let xi = (0..d - 1).map(|_| rng.sample(StandardNormal)).collect();
            let eta = (0..d - 1).map(|_| rng.sample(StandardNormal)).collect();
            modes.push(Mode {
                rate: self.params.rate(r),
                weight: self.weight(j),
                k,
                basis,
                xi,
                eta,
            });
            streams.push(rng);
        }
        FieldRealization::assemble(&self.params, modes, streams)
    }
}

fn random_direction(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

/// Orthonormal basis of the hyperplane orthogonal to the unit vector `e`.
pub fn orthonormal_complement(e: &[f64]) -> Vec<Vec<f64>> {
    let d = e.len();
    if d == 2 {
        return vec![vec![-e[1], e[0]]];
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| e[a].abs().total_cmp(&e[b].abs()));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d - 1);
    for &axis in order.iter().take(d - 1) {
        let mut v = vec![0.0; d];
        v[axis] = 1.0;
        // Two Gram-Schmidt passes.
        for _ in 0..2 {
            let proj: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(e).for_each(|(a, b)| *a -= proj * b);
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        v.iter_mut().for_each(|c| *c /= n);
        basis.push(v);
    }
    basis
}

/// One spectral mode, in plain form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: Vec<f64>,
    pub weight: f64,
    pub rate: f64,
    /// `d − 1` vectors spanning the plane orthogonal to `k`.
    pub basis: Vec<Vec<f64>>,
    /// Cosine-channel OU state, in basis coordinates.
    pub xi: Vec<f64>,
    /// Sine-channel OU state, in basis coordinates.
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone)]
struct OuCoefficients {
    ds: f64,
    decay: Vec<f64>,
    noise: Vec<f64>,
}

/// Per-mode coefficients for the joint draw of an OU coordinate X and its
/// integral I over a step of length `ds`:
/// X' = decay·X + noise·z1, I = gain·X + cross·z1 + residual·z2.
#[derive(Debug, Clone)]
struct IntegralCoefficients {
    ds: f64,
    decay: Vec<f64>,
    noise: Vec<f64>,
    gain: Vec<f64>,
    cross: Vec<f64>,
    residual: Vec<f64>,
}

impl IntegralCoefficients {
    fn new(rates: &[f64], ds: f64) -> Self {
        let m = rates.len();
        let mut c = Self {
            ds,
            decay: Vec::with_capacity(m),
            noise: Vec::with_capacity(m),
            gain: Vec::with_capacity(m),
            cross: Vec::with_capacity(m),
            residual: Vec::with_capacity(m),
        };
        for &r in rates {
            let x = r * ds;
            if x == 0.0 {
                c.decay.push(1.0);
                c.noise.push(0.0);
                c.gain.push(ds);
                c.cross.push(0.0);
                c.residual.push(0.0);
                continue;
            }
            let one_minus_e = -(-x).exp_m1();
            let sx = (-(-2.0 * x).exp_m1()).sqrt();
            // Var I = 2 ds² b(x)/x², Cov(X', I) = ds (1 − e)²/x.
            let var_i = 2.0 * ds * ds * ou_integral_bracket(x);
            let cov = ds * one_minus_e * one_minus_e / x;
            let cross = cov / sx;
            c.decay.push(1.0 - one_minus_e);
            c.noise.push(sx);
            c.gain.push(ds * one_minus_e / x);
            c.cross.push(cross);
            c.residual.push((var_i - cross * cross).max(0.0).sqrt());
        }
        c
    }
}

/// (x − 2(1 − e^{−x}) + (1 − e^{−2x})/2) / x², by series for small x.
pub(crate) fn ou_integral_bracket(x: f64) -> f64 {
    if x < 0.5 {
        // Σ_{n≥3} (−1)^n x^{n−2} (2 − 2^{n−1}) / n!
        let mut sum = 0.0;
        let mut xp = x;
        let mut fact = 6.0;
        let mut pow2 = 4.0;
        let mut sign = -1.0;
        for n in 3..30 {
            sum += sign * xp * (2.0 - pow2) / fact;
            xp *= x;
            fact *= (n + 1) as f64;
            pow2 *= 2.0;
            sign = -sign;
        }
        sum
    } else {
        (x - 2.0 * (-(-x).exp_m1()) - 0.5 * (-2.0 * x).exp_m1()) / (x * x)
    }
}

/// One sample of the velocity field, evolving in field time.
///
/// Storage is structure-of-arrays; the amplitude vectors `w P ξ` and `w P η`
/// are cached after each update.
#[derive(Debug, Clone)]
pub struct FieldRealization {
    params: SpectrumParams,
    dim: usize,
    pub(crate) k: Vec<f64>,
    pub(crate) weight: Vec<f64>,
    pub(crate) rate: Vec<f64>,
    pub(crate) basis: Vec<f64>,
    pub(crate) xi: Vec<f64>,
    eta: Vec<f64>,
    amp_cos: Vec<f64>,
    amp_sin: Vec<f64>,
    clock: f64,
    pub(crate) streams: Vec<ChaCha8Rng>,
    ou: Option<OuCoefficients>,
    ou_integral: Option<IntegralCoefficients>,
}

/// Draws `m_count` modes and stationary OU states.
pub fn sample_modes(
    p: &SpectrumParams,
    m_count: usize,
    strategy: SamplingStrategy,
    seed: StreamSeed,
) -> Result<FieldRealization, FieldError> {
    Ok(SpectralMeasure::new(p, m_count, strategy)?.realize(seed))
}

impl FieldRealization {
    /// Builds a realization from explicit modes. Orthogonality of the basis is
    /// not enforced here; see [`FieldRealization::orthogonality_defect`].
    pub fn from_modes(
        p: &SpectrumParams,
        modes: Vec<Mode>,
        seed: StreamSeed,
    ) -> Result<Self, FieldError> {
        if modes.is_empty() {
            return Err(FieldError::NoModes);
        }
        let d = p.dim();
        for (index, m) in modes.iter().enumerate() {
            let bad = |reason: &str| FieldError::MalformedMode {
                index,
                reason: reason.to_string(),
            };
            if m.k.len() != d {
                return Err(bad("wavevector dimension"));
            }
            if m.basis.len() != d - 1 || m.basis.iter().any(|b| b.len() != d) {
                return Err(bad("basis must hold d - 1 vectors of length d"));
            }
            if m.xi.len() != d - 1 || m.eta.len() != d - 1 {
                return Err(bad("OU state must have d - 1 coordinates"));
            }
            if !(m.rate >= 0.0) || !m.weight.is_finite() {
                return Err(bad("rate must be nonnegative and weight finite"));
            }
        }
        let streams = (0..modes.len()).map(|j| seed.stream(j as u64)).collect();
        Ok(Self::assemble(p, modes, streams))
    }

    fn assemble(p: &SpectrumParams, modes: Vec<Mode>, streams: Vec<ChaCha8Rng>) -> Self {
        let d = p.dim();
        let m = modes.len();
        let mut f = Self {
            params: p.clone(),
            dim: d,
            k: Vec::with_capacity(m * d),
            weight: Vec::with_capacity(m),
            rate: Vec::with_capacity(m),
            basis: Vec::with_capacity(m * (d - 1) * d),
            xi: Vec::with_capacity(m * (d - 1)),
            eta: Vec::with_capacity(m * (d - 1)),
            amp_cos: vec![0.0; m * d],
            amp_sin: vec![0.0; m * d],
            clock: 0.0,
            streams,
            ou: None,
            ou_integral: None,
        };
        for mode in modes {
            f.k.extend_from_slice(&mode.k);
            f.weight.push(mode.weight);
            f.rate.push(mode.rate);
            for b in &mode.basis {
                f.basis.extend_from_slice(b);
            }
            f.xi.extend_from_slice(&mode.xi);
            f.eta.extend_from_slice(&mode.eta);
        }
        for j in 0..m {
            f.refresh_amplitudes(j);
        }
        f
    }

    pub fn params(&self) -> &SpectrumParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weight.is_empty()
    }

    /// Current field time s.
    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn mode(&self, j: usize) -> Mode {
        let d = self.dim;
        let c = d - 1;
        Mode {
            k: self.k[j * d..(j + 1) * d].to_vec(),
            weight: self.weight[j],
            rate: self.rate[j],
            basis: (0..c)
                .map(|l| self.basis[(j * c + l) * d..(j * c + l + 1) * d].to_vec())
                .collect(),
            xi: self.xi[j * c..(j + 1) * c].to_vec(),
            eta: self.eta[j * c..(j + 1) * c].to_vec(),
        }
    }

    pub fn modes(&self) -> Vec<Mode> {
        (0..self.len()).map(|j| self.mode(j)).collect()
    }

    /// Largest |k̂·b| over all modes and basis vectors.
    pub fn orthogonality_defect(&self) -> f64 {
        let d = self.dim;
        let c = d - 1;
        let mut worst: f64 = 0.0;
        for j in 0..self.len() {
            let k = &self.k[j * d..(j + 1) * d];
            let kn = k.iter().map(|v| v * v).sum::<f64>().sqrt();
            for l in 0..c {
                let b = &self.basis[(j * c + l) * d..(j * c + l + 1) * d];
                let dot: f64 = k.iter().zip(b).map(|(a, b)| a * b).sum();
                worst = worst.max((dot / kn).abs());
            }
        }
        worst
    }

    fn refresh_amplitudes(&mut self, j: usize) {
        let d = self.dim;
        let c = d - 1;
        let w = self.weight[j];
        for i in 0..d {
            let mut ac = 0.0;
            let mut as_ = 0.0;
            for l in 0..c {
                let b = self.basis[(j * c + l) * d + i];
                ac += b * self.xi[j * c + l];
                as_ += b * self.eta[j * c + l];
            }
            self.amp_cos[j * d + i] = w * ac;
            self.amp_sin[j * d + i] = w * as_;
        }
    }

    /// Sets every OU coordinate to zero (the null field).
    pub fn zero_states(&mut self) {
        self.xi.iter_mut().for_each(|v| *v = 0.0);
        self.eta.iter_mut().for_each(|v| *v = 0.0);
        self.amp_cos.iter_mut().for_each(|v| *v = 0.0);
        self.amp_sin.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Sets every rate to zero, so that [`advance`](Self::advance) only moves
    /// the clock.
    pub fn freeze_amplitudes(&mut self) {
        self.rate.iter_mut().for_each(|r| *r = 0.0);
        self.ou = None;
        self.ou_integral = None;
    }

    /// Exact OU update of every mode over field time `ds`.
    ///
    /// Each coordinate moves as x ← e^{−λ ds} x + sqrt(1 − e^{−2λ ds}) ζ.
    /// A zero step draws nothing.
    pub fn advance(&mut self, ds: f64) {
        assert!(ds >= 0.0 && ds.is_finite(), "advance needs a finite ds >= 0, got {ds}");
        if ds == 0.0 {
            return;
        }
        if self.ou.as_ref().map(|c| c.ds) != Some(ds) {
            self.ou = Some(OuCoefficients {
                ds,
                decay: self.rate.iter().map(|&r| (-r * ds).exp()).collect(),
                noise: self
                    .rate
                    .iter()
                    .map(|&r| (-(-2.0 * r * ds).exp_m1()).sqrt())
                    .collect(),
            });
        }
        let c = self.dim - 1;
        let ou = self.ou.take().expect("coefficients just set");
        for j in 0..self.len() {
            let noise = ou.noise[j];
            if noise == 0.0 {
                continue;
            }
            let decay = ou.decay[j];
            let rng = &mut self.streams[j];
            for l in 0..c {
                let z: f64 = rng.sample(StandardNormal);
                let x = &mut self.xi[j * c + l];
                *x = decay * *x + noise * z;
            }
            for l in 0..c {
                let z: f64 = rng.sample(StandardNormal);
                let x = &mut self.eta[j * c + l];
                *x = decay * *x + noise * z;
            }
            self.refresh_amplitudes(j);
        }
        self.ou = Some(ou);
        self.clock += ds;
    }

    /// Moves the field forward by `ds` and writes ∫ V(s, 0) ds over that step
    /// into `out`. Each cosine-channel coordinate and its time integral are
    /// drawn from their exact joint Gaussian law, so the result has no
    /// time-discretization error whatever the size of `ds`.
    pub fn integrate_origin_exact(&mut self, ds: f64, out: &mut [f64]) {
        assert!(ds >= 0.0 && ds.is_finite(), "integration needs a finite ds >= 0, got {ds}");
        out.iter_mut().for_each(|v| *v = 0.0);
        if ds == 0.0 {
            return;
        }
        if self.ou_integral.as_ref().map(|c| c.ds) != Some(ds) {
            self.ou_integral = Some(IntegralCoefficients::new(&self.rate, ds));
        }
        let d = self.dim;
        let c = d - 1;
        let coef = self.ou_integral.take().expect("coefficients just set");
        for j in 0..self.len() {
            let w = self.weight[j];
            let rng = &mut self.streams[j];
            for l in 0..c {
                let idx = j * c + l;
                let x = self.xi[idx];
                let mut integral = coef.gain[j] * x;
                if coef.noise[j] != 0.0 {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    integral += coef.cross[j] * z1 + coef.residual[j] * z2;
                    self.xi[idx] = coef.decay[j] * x + coef.noise[j] * z1;
                }
                let b = &self.basis[idx * d..(idx + 1) * d];
                for i in 0..d {
                    out[i] += w * b[i] * integral;
                }
            }
            if coef.noise[j] != 0.0 {
                for l in 0..c {
                    let z: f64 = rng.sample(StandardNormal);
                    let e = &mut self.eta[j * c + l];
                    *e = coef.decay[j] * *e + coef.noise[j] * z;
                }
                self.refresh_amplitudes(j);
            }
        }
        self.ou_integral = Some(coef);
        self.clock += ds;
    }

    /// V(s, x) at the current clock.
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.evaluate_into(x, &mut out);
        out
    }

    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        if self.dim == 2 {
            let (x0, x1) = (x[0], x[1]);
            let (mut v0, mut v1) = (0.0, 0.0);
            for ((k, ac), as_) in self
                .k
                .chunks_exact(2)
                .zip(self.amp_cos.chunks_exact(2))
                .zip(self.amp_sin.chunks_exact(2))
            {
                let (s, c) = (k[0] * x0 + k[1] * x1).sin_cos();
                v0 += c * ac[0] + s * as_[0];
                v1 += c * ac[1] + s * as_[1];
            }
            out[0] = v0;
            out[1] = v1;
            return;
        }
        let d = self.dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.len() {
            let k = &self.k[j * d..(j + 1) * d];
            let phase: f64 = k.iter().zip(x).map(|(a, b)| a * b).sum();
            let (s, c) = phase.sin_cos();
            for i in 0..d {
                out[i] += c * self.amp_cos[j * d + i] + s * self.amp_sin[j * d + i];
            }
        }
    }

    /// V(s, 0): the sum of the cosine-channel amplitudes.
    pub fn evaluate_origin_into(&self, out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        for a in self.amp_cos.chunks_exact(d) {
            for i in 0..d {
                out[i] += a[i];
            }
        }
    }

    /// Analytic divergence of the mode sum at `x`.
    pub fn divergence_at(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut div = 0.0;
        for j in 0..self.len() {
            let k = &self.k[j * d..(j + 1) * d];
            let phase: f64 = k.iter().zip(x).map(|(a, b)| a * b).sum();
            let (s, c) = phase.sin_cos();
            let k_ac: f64 = k.iter().zip(&self.amp_cos[j * d..(j + 1) * d]).map(|(a, b)| a * b).sum();
            let k_as: f64 = k.iter().zip(&self.amp_sin[j * d..(j + 1) * d]).map(|(a, b)| a * b).sum();
            div += -s * k_ac + c * k_as;
        }
        div
    }

    /// Σ_j w_j |k_j| (|ξ_j| + |η_j|): the natural scale of the divergence
    /// terms, used to judge the accumulation residual.
    pub fn divergence_scale(&self) -> f64 {
        let d = self.dim;
        let c = d - 1;
        (0..self.len())
            .map(|j| {
                let kn = self.k[j * d..(j + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt();
                let xi = self.xi[j * c..(j + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt();
                let eta = self.eta[j * c..(j + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt();
                self.weight[j] * kn * (xi + eta)
            })
            .sum()
    }

    /// Largest |k_j|.
    pub fn max_wavenumber(&self) -> f64 {
        self.k
            .chunks_exact(self.dim)
            .map(|k| k.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Writes `kx,ky,…,weight,rate`, one row per mode.
    pub fn write_mode_table<W: Write>(&self, mut out: W) -> io::Result<()> {
        let d = self.dim;
        let names: Vec<String> = (0..d).map(axis_name).collect();
        writeln!(out, "{},weight,rate", names.join(","))?;
        for j in 0..self.len() {
            let mut row: Vec<String> =
                self.k[j * d..(j + 1) * d].iter().map(|v| format!("{v:.16e}")).collect();
            row.push(format!("{:.16e}", self.weight[j]));
            row.push(format!("{:.16e}", self.rate[j]));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn axis_name(i: usize) -> String {
    match i {
        0 => "kx".into(),
        1 => "ky".into(),
        2 => "kz".into(),
        _ => format!("k{}", i + 1),
    }
}
