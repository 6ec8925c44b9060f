//! Deterministic layer: the power-law spectrum, its admissibility checks, the
//! limit exponents and diffusion constant, and the finite-ε frozen-tracer MSD.
//!
//! Everything here is a pure function of its inputs.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ParamError, QuadratureError, TheoryError};
use crate::quadrature::{integrate_with_breaks, QuadConfig};

/// Slack used when comparing α + β against 1. Pairs within this distance of
/// the boundary are treated as the borderline (logarithmic) case.
pub const BOUNDARY_SLACK: f64 = 1e-12;

/// Unvalidated parameter bundle, as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RawParams {
    pub alpha: f64,
    pub beta: f64,
    pub dim: usize,
    /// a(0)
    pub plateau: f64,
    /// Start of the cosine taper; defaults to `support_k / 2`.
    pub taper_start: Option<f64>,
    pub support_k: f64,
    pub kappa: f64,
}

impl Default for RawParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 1.0,
            dim: 2,
            plateau: 1.0,
            taper_start: None,
            support_k: 1.0,
            kappa: 0.0,
        }
    }
}

/// The radial shell function a(·): flat at `plateau` up to `taper_start`,
/// then a cosine roll-off reaching zero at the support bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShellFunction {
    plateau: f64,
    taper_start: f64,
    support: f64,
}

impl ShellFunction {
    pub fn plateau(&self) -> f64 {
        self.plateau
    }

    pub fn taper_start(&self) -> f64 {
        self.taper_start
    }

    pub fn value(&self, r: f64) -> f64 {
        if r <= self.taper_start {
            self.plateau
        } else if r >= self.support {
            0.0
        } else {
            let s = (r - self.taper_start) / (self.support - self.taper_start);
            0.5 * self.plateau * (1.0 + (PI * s).cos())
        }
    }
}

/// Validated spectrum parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumParams {
    alpha: f64,
    beta: f64,
    dim: usize,
    shell: ShellFunction,
    support_k: f64,
    kappa: f64,
    anomalous_regime: bool,
}

impl SpectrumParams {
    /// α = 0.5, β = 1, d = 2, a(0) = 1, K = 1, κ = 0.
    pub fn reference() -> Self {
        validate_params(&RawParams::default()).expect("reference parameters are admissible")
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn shell(&self) -> &ShellFunction {
        &self.shell
    }
    pub fn support_k(&self) -> f64 {
        self.support_k
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    /// α + β > 1: the Taylor–Kubo integral diverges and the fBm limit applies.
    pub fn anomalous_regime(&self) -> bool {
        self.anomalous_regime
    }

    pub fn with_plateau(&self, plateau: f64) -> Result<Self, ParamError> {
        let mut raw = self.to_raw();
        raw.plateau = plateau;
        validate_params(&raw)
    }

    pub fn to_raw(&self) -> RawParams {
        RawParams {
            alpha: self.alpha,
            beta: self.beta,
            dim: self.dim,
            plateau: self.shell.plateau,
            taper_start: Some(self.shell.taper_start),
            support_k: self.support_k,
            kappa: self.kappa,
        }
    }

    /// a(r)·r^{1−2α}: the radial profile of the trace measure, without the
    /// angular factor (d−1)·|S^{d−1}|.
    pub fn radial_profile(&self, r: f64) -> f64 {
        self.shell.value(r) * r.powf(1.0 - 2.0 * self.alpha)
    }

    /// Mode relaxation rate |k|^{2β}.
    pub fn rate(&self, k_norm: f64) -> f64 {
        if k_norm == 0.0 {
            0.0
        } else {
            k_norm.powf(2.0 * self.beta)
        }
    }

    fn require_regime(&self, what: &'static str) -> Result<(), TheoryError> {
        if self.anomalous_regime {
            Ok(())
        } else {
            Err(TheoryError::OutsideAnomalousRegime {
                sum: self.alpha + self.beta,
                what,
            })
        }
    }
}

/// Checks admissibility of the raw parameters and tags the anomalous regime.
pub fn validate_params(raw: &RawParams) -> Result<SpectrumParams, ParamError> {
    for (name, v) in [
        ("alpha", raw.alpha),
        ("beta", raw.beta),
        ("plateau", raw.plateau),
        ("support_k", raw.support_k),
        ("kappa", raw.kappa),
    ] {
        if !v.is_finite() {
            return Err(ParamError::NotFinite(name));
        }
    }
    if raw.alpha >= 1.0 {
        return Err(ParamError::AlphaTooLarge(raw.alpha));
    }
    if raw.beta < 0.0 {
        return Err(ParamError::BetaNegative(raw.beta));
    }
    if raw.dim < 2 {
        return Err(ParamError::DimensionTooSmall(raw.dim));
    }
    if raw.support_k <= 0.0 {
        return Err(ParamError::SupportNotPositive(raw.support_k));
    }
    if raw.kappa < 0.0 {
        return Err(ParamError::KappaNegative(raw.kappa));
    }
    if raw.plateau <= 0.0 {
        return Err(ParamError::PlateauNotPositive(raw.plateau));
    }
    let taper_start = raw.taper_start.unwrap_or(0.5 * raw.support_k);
    if !taper_start.is_finite() {
        return Err(ParamError::NotFinite("taper_start"));
    }
    if taper_start <= 0.0 || taper_start >= raw.support_k {
        return Err(ParamError::NonMonotoneTaper {
            taper_start,
            support_k: raw.support_k,
        });
    }
    Ok(SpectrumParams {
        alpha: raw.alpha,
        beta: raw.beta,
        dim: raw.dim,
        shell: ShellFunction {
            plateau: raw.plateau,
            taper_start,
            support: raw.support_k,
        },
        support_k: raw.support_k,
        kappa: raw.kappa,
        anomalous_regime: raw.alpha + raw.beta - 1.0 > BOUNDARY_SLACK,
    })
}

/// Surface area of the unit sphere S^{d−1} in R^d.
pub fn unit_sphere_area(d: usize) -> f64 {
    match d {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI / (d as f64 - 2.0) * unit_sphere_area(d - 2),
    }
}

/// R̂(k) = a(|k|)/|k|^{2α+d−2} · (I − k⊗k/|k|²).
pub fn spectral_density(p: &SpectrumParams, k: &[f64]) -> Result<DMatrix<f64>, TheoryError> {
    let d = p.dim;
    if k.len() != d {
        return Err(TheoryError::DimensionMismatch {
            expected: d,
            got: k.len(),
        });
    }
    let norm2: f64 = k.iter().map(|v| v * v).sum();
    if norm2 == 0.0 {
        return Err(TheoryError::ZeroWavevector);
    }
    let norm = norm2.sqrt();
    let amp = p.shell.value(norm) / norm.powf(2.0 * p.alpha + d as f64 - 2.0);
    Ok(DMatrix::from_fn(d, d, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        amp * (delta - k[i] * k[j] / norm2)
    }))
}

/// exp(−|k|^{2β}·|dt|).
pub fn time_correlation(p: &SpectrumParams, k_norm: f64, dt: f64) -> f64 {
    (-p.rate(k_norm) * dt.abs()).exp()
}

/// Matrix-valued quadrature result.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEstimate {
    pub tensor: DMatrix<f64>,
    pub abs_error: f64,
}

/// Direction-averaged projector weights: for |x| = 0 both the longitudinal and
/// transverse parts equal |S^{d−1}|·(d−1)/d.
fn angular_weights(d: usize, z: f64, cfg: &QuadConfig) -> Result<(f64, f64, f64), QuadratureError> {
    if z == 0.0 {
        let w = unit_sphere_area(d) * (d as f64 - 1.0) / d as f64;
        return Ok((w, w, 0.0));
    }
    let outer = unit_sphere_area(d - 1);
    let dm1 = d as f64 - 1.0;
    let sin_pow = |phi: f64| phi.sin().powi(d as i32 - 2);
    let par = integrate_with_breaks(
        |phi| (z * phi.cos()).cos() * sin_pow(phi) * phi.sin().powi(2),
        &[0.0, 0.5 * PI, PI],
        cfg,
    )?;
    let perp = integrate_with_breaks(
        |phi| (z * phi.cos()).cos() * sin_pow(phi) * (1.0 - phi.sin().powi(2) / dm1),
        &[0.0, 0.5 * PI, PI],
        cfg,
    )?;
    Ok((
        outer * par.value,
        outer * perp.value,
        outer * (par.abs_error + perp.abs_error),
    ))
}

/// R(t, x) = ∫ cos(k·x) e^{−|k|^{2β}|t|} R̂(k) dk over the ball |k| ≤ K.
///
/// The radial variable is substituted as r = u^{1/(2−2α)}, which turns the
/// r^{1−2α} endpoint into a constant.
pub fn spatial_covariance(
    p: &SpectrumParams,
    t: f64,
    x: &[f64],
    cfg: &QuadConfig,
) -> Result<TensorEstimate, TheoryError> {
    let d = p.dim;
    if x.len() != d {
        return Err(TheoryError::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    let rho = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let power = 1.0 / (2.0 - 2.0 * p.alpha);
    let r_of = |u: f64| u.powf(power);
    let upper = p.support_k.powf(1.0 / power);
    let mut breaks = vec![0.0, p.shell.taper_start.powf(1.0 / power)];
    let t_abs = t.abs();
    if t_abs > 0.0 && p.beta > 0.0 {
        let u_t = t_abs.powf(-1.0 / (2.0 * p.beta)).powf(1.0 / power);
        if u_t < upper {
            breaks.push(u_t);
        }
    }
    breaks.push(upper);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let inner_cfg = QuadConfig {
        rel_tol: cfg.rel_tol * 0.1,
        ..*cfg
    };

    let radial = |u: f64, longitudinal: bool| -> f64 {
        let r = r_of(u);
        let a = p.shell.value(r);
        if a == 0.0 {
            return 0.0;
        }
        let weight = power * a * (-p.rate(r) * t_abs).exp();
        match angular_weights(d, r * rho, &inner_cfg) {
            Ok((par, perp, _)) => weight * if longitudinal { par } else { perp },
            Err(_) => f64::NAN,
        }
    };

    if rho == 0.0 {
        let q = integrate_with_breaks(|u| radial(u, false), &breaks, cfg)?;
        let tensor = DMatrix::identity(d, d) * q.value;
        return Ok(TensorEstimate {
            tensor,
            abs_error: q.abs_error,
        });
    }
    let perp = integrate_with_breaks(|u| radial(u, false), &breaks, cfg)?;
    let par = integrate_with_breaks(|u| radial(u, true), &breaks, cfg)?;
    let tensor = DMatrix::from_fn(d, d, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        let xx = x[i] * x[j] / (rho * rho);
        perp.value * delta + (par.value - perp.value) * xx
    });
    Ok(TensorEstimate {
        tensor,
        abs_error: perp.abs_error + par.abs_error,
    })
}

/// Root-mean-square speed sqrt(trace R(0, 0)).
pub fn velocity_rms(p: &SpectrumParams, cfg: &QuadConfig) -> Result<f64, TheoryError> {
    let zero = vec![0.0; p.dim];
    let r = spatial_covariance(p, 0.0, &zero, cfg)?;
    Ok(r.tensor.trace().sqrt())
}

/// Finiteness of the Taylor–Kubo integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TkVerdict {
    Converges,
    DivergesPower,
    DivergesLog,
}

/// Time-integrating R(t, 0) leaves a radial integrand ∝ a(r)·r^{1−2α−2β}
/// near the origin, integrable iff α + β < 1.
pub fn taylor_kubo_classify(p: &SpectrumParams) -> TkVerdict {
    let excess = p.alpha + p.beta - 1.0;
    if excess > BOUNDARY_SLACK {
        TkVerdict::DivergesPower
    } else if excess < -BOUNDARY_SLACK {
        TkVerdict::Converges
    } else {
        TkVerdict::DivergesLog
    }
}

/// δ = β/(α + 2β − 1).
pub fn scaling_exponent_delta(p: &SpectrumParams) -> Result<f64, TheoryError> {
    p.require_regime("the Taylor-Kubo integral no longer")?;
    let denom = p.alpha + 2.0 * p.beta - 1.0;
    if denom <= 0.0 {
        return Err(TheoryError::InvalidArgument(format!(
            "alpha + 2 beta - 1 = {denom} is not positive"
        )));
    }
    Ok(p.beta / denom)
}

/// H = 1/2 + (α + β − 1)/(2β).
pub fn hurst_exponent(p: &SpectrumParams) -> Result<f64, TheoryError> {
    if p.beta == 0.0 {
        return Err(TheoryError::InvalidArgument(
            "beta = 0 leaves the Hurst exponent undefined".into(),
        ));
    }
    p.require_regime("the Taylor-Kubo integral no longer")?;
    Ok(0.5 + (p.alpha + p.beta - 1.0) / (2.0 * p.beta))
}

/// Limit process: per-axis MSD `diffusion · t^{2·hurst}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbmModel {
    pub diffusion: f64,
    pub hurst: f64,
}

impl FbmModel {
    pub fn new(diffusion: f64, hurst: f64) -> Result<Self, TheoryError> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(TheoryError::InvalidArgument(format!(
                "Hurst exponent {hurst} outside (0, 1)"
            )));
        }
        if !(diffusion.is_finite() && diffusion >= 0.0) {
            return Err(TheoryError::InvalidArgument(format!(
                "diffusion coefficient {diffusion} must be finite and nonnegative"
            )));
        }
        Ok(Self { diffusion, hurst })
    }
}

/// D·t^{2H}, the per-axis mean squared displacement of the limit.
pub fn msd_theory(m: &FbmModel, t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        m.diffusion * t.powf(2.0 * m.hurst)
    }
}

/// Result of [`effective_diffusion`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiffusionEstimate {
    /// Limit model; `model.diffusion` is the coefficient of the per-axis MSD.
    pub model: FbmModel,
    /// The isotropic radial reduction of the printed diffusion-tensor integral.
    /// The stationary MSD of the tracer converges to twice this value (the
    /// double time integral covers both orderings of the two times).
    pub eq8_integral: f64,
    /// Absolute error estimate on `model.diffusion`.
    pub abs_error: f64,
}

/// Ratio between the MSD coefficient and the radial diffusion integral.
pub const MSD_SYMMETRY_FACTOR: f64 = 2.0;

/// e^{−u} − 1 + u without cancellation near 0.
fn exp_remainder(u: f64) -> f64 {
    if u < 1e-3 {
        let u2 = u * u;
        u2 * (0.5 - u / 6.0 + u2 / 24.0 - u2 * u / 120.0)
    } else {
        (-u).exp_m1() + u
    }
}

/// Computes the limit diffusion constant by quadrature.
///
/// With u = r^{2β} and γ = (1 − α)/β the radial integral becomes
/// (1/2β)∫₀^∞ (e^{−u} − 1 + u) u^{γ−3} du; both power-law ends are removed by
/// u = w^{1/γ} on [0, 1] and u = w^{−1/(1−γ)} on [1, ∞).
pub fn effective_diffusion(
    p: &SpectrumParams,
    cfg: &QuadConfig,
) -> Result<DiffusionEstimate, TheoryError> {
    if p.alpha >= 1.0 {
        return Err(TheoryError::OutsideAnomalousRegime {
            sum: p.alpha + p.beta,
            what: "the diffusion integral at k = 0",
        });
    }
    p.require_regime("the diffusion integral at large k")?;
    let hurst = hurst_exponent(p)?;
    let gamma = (1.0 - p.alpha) / p.beta;
    let inner_cfg = QuadConfig {
        rel_tol: cfg.rel_tol * 0.5,
        ..*cfg
    };
    let low = integrate_with_breaks(
        |w: f64| {
            if w == 0.0 {
                return 0.5 / gamma;
            }
            let u = w.powf(1.0 / gamma);
            exp_remainder(u) / (u * u) / gamma
        },
        &[0.0, 1.0],
        &inner_cfg,
    )?;
    let high = integrate_with_breaks(
        |w: f64| {
            if w == 0.0 {
                return 1.0 / (1.0 - gamma);
            }
            let u = w.powf(-1.0 / (1.0 - gamma));
            exp_remainder(u) / u / (1.0 - gamma)
        },
        &[0.0, 1.0],
        &inner_cfg,
    )?;
    let d = p.dim as f64;
    let prefactor = p.shell.plateau * (d - 1.0) / d * unit_sphere_area(p.dim) / (2.0 * p.beta);
    let eq8 = prefactor * (low.value + high.value);
    let err = prefactor * (low.abs_error + high.abs_error);
    Ok(DiffusionEstimate {
        model: FbmModel::new(MSD_SYMMETRY_FACTOR * eq8, hurst)?,
        eq8_integral: eq8,
        abs_error: MSD_SYMMETRY_FACTOR * err,
    })
}

/// Stationary MSD tensor of the frozen-position tracer at finite ε:
/// 2ε² ∫₀^T (T − u) R(u, 0) du with T = t/ε^{2δ}, computed as a nested
/// quadrature over [`spatial_covariance`].
pub fn finite_eps_msd_oracle(
    p: &SpectrumParams,
    eps: f64,
    t: f64,
    cfg: &QuadConfig,
) -> Result<TensorEstimate, TheoryError> {
    if !(eps > 0.0) {
        return Err(TheoryError::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    if !(t >= 0.0) {
        return Err(TheoryError::InvalidArgument(format!("t = {t} must be nonnegative")));
    }
    let delta = scaling_exponent_delta(p)?;
    let d = p.dim;
    if t == 0.0 {
        return Ok(TensorEstimate {
            tensor: DMatrix::zeros(d, d),
            abs_error: 0.0,
        });
    }
    let horizon = t / eps.powf(2.0 * delta);
    let origin = vec![0.0; d];
    let inner_cfg = QuadConfig {
        rel_tol: cfg.rel_tol * 0.1,
        ..*cfg
    };
    let integrand = |u: f64| -> f64 {
        match spatial_covariance(p, u, &origin, &inner_cfg) {
            Ok(r) => (horizon - u) * r.tensor[(0, 0)],
            Err(_) => f64::NAN,
        }
    };
    // Decades of the relaxation time scale as seed break points.
    let mut breaks = vec![0.0];
    let fastest = 1.0 / p.rate(p.support_k).max(f64::MIN_POSITIVE);
    let mut b = fastest;
    while b < horizon {
        breaks.push(b);
        b *= 10.0;
    }
    breaks.push(horizon);
    let q = integrate_with_breaks(integrand, &breaks, cfg)?;
    let scale = 2.0 * eps * eps;
    Ok(TensorEstimate {
        tensor: DMatrix::identity(d, d) * (scale * q.value),
        abs_error: scale * q.abs_error,
    })
}

/// Everything printed by the `theory` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheorySummary {
    pub params: SpectrumParams,
    pub anomalous_regime: bool,
    pub taylor_kubo: TkVerdict,
    pub delta: Option<f64>,
    pub hurst: Option<f64>,
    pub diffusion: Option<f64>,
    pub diffusion_abs_error: Option<f64>,
    pub eq8_integral: Option<f64>,
    pub velocity_rms: f64,
}

pub fn summarize(p: &SpectrumParams, cfg: &QuadConfig) -> Result<TheorySummary, TheoryError> {
    let regime = p.anomalous_regime();
    let (delta, hurst, diffusion) = if regime {
        let est = effective_diffusion(p, cfg)?;
        (Some(scaling_exponent_delta(p)?), Some(est.model.hurst), Some(est))
    } else {
        (None, None, None)
    };
    Ok(TheorySummary {
        params: p.clone(),
        anomalous_regime: regime,
        taylor_kubo: taylor_kubo_classify(p),
        delta,
        hurst,
        diffusion: diffusion.map(|e| e.model.diffusion),
        diffusion_abs_error: diffusion.map(|e| e.abs_error),
        eq8_integral: diffusion.map(|e| e.eq8_integral),
        velocity_rms: velocity_rms(p, cfg)?,
    })
}
