//! Power-law fits of the MSD curve and the pass/fail comparison with a
//! fractional Brownian motion model.

use serde::{Deserialize, Serialize};

use crate::analysis::stats::{MomentCurves, MsdCurve};
use crate::error::AnalysisError;
use crate::theory::{msd_theory, FbmModel};

/// Closed lag interval `[tau_min, tau_max]` used for fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub tau_min: f64,
    pub tau_max: f64,
}

impl FitWindow {
    pub fn new(tau_min: f64, tau_max: f64) -> Self {
        Self { tau_min, tau_max }
    }

    /// `[0.1·t_final, 0.5·t_final]`.
    pub fn default_for(t_final: f64) -> Self {
        Self::new(0.1 * t_final, 0.5 * t_final)
    }

    fn contains(&self, tau: f64) -> bool {
        let slack = 1e-9 * self.tau_max.abs();
        tau >= self.tau_min - slack && tau <= self.tau_max + slack
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub h_hat: f64,
    pub h_stderr: f64,
    pub d_hat: f64,
    pub d_stderr: f64,
    pub window: FitWindow,
    pub n_traj: usize,
    pub reliable: bool,
    /// Lags inside the window.
    pub lags: Vec<f64>,
    pub msd: Vec<f64>,
    pub msd_stderr: Vec<f64>,
    /// MSD / (d_hat·τ^{2 h_hat}) − 1.
    pub residuals: Vec<f64>,
    pub kurtosis: Vec<f64>,
    pub kurtosis_stderr: Vec<f64>,
    /// Window average of the excess kurtosis.
    pub mean_kurtosis: f64,
    pub mean_kurtosis_stderr: f64,
    /// Log-log slope of E|Δ|⁴ over the window.
    pub fourth_slope: f64,
    pub fourth_slope_stderr: f64,
}

struct LineFit {
    slope: f64,
    intercept: f64,
    slope_se: f64,
    intercept_se: f64,
}

fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> LineFit {
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..x.len() {
        sxx += w[i] * (x[i] - xm).powi(2);
        sxy += w[i] * (x[i] - xm) * (y[i] - ym);
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    // Residual-scaled errors; used only when no bootstrap is available.
    let n = x.len() as f64;
    let rss: f64 = (0..x.len())
        .map(|i| w[i] * (y[i] - intercept - slope * x[i]).powi(2))
        .sum();
    let s2 = if n > 2.0 { rss / (n - 2.0) } else { f64::NAN };
    LineFit {
        slope,
        intercept,
        slope_se: (s2 / sxx).sqrt(),
        intercept_se: (s2 * (1.0 / sw + xm * xm / sxx)).sqrt(),
    }
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Weighted least squares of log(MSD) on log(τ) over the window.
///
/// Weights are (MSD/σ)², the inverse variance of log MSD, when error bars are
/// available. Standard errors of all fitted quantities are the spread of the
/// same fit repeated on every bootstrap replicate of the curve.
pub fn fit_hurst(curve: &MsdCurve, window: FitWindow) -> Result<FitReport, AnalysisError> {
    if !(window.tau_min > 0.0 && window.tau_max > window.tau_min) {
        return Err(AnalysisError::DegenerateWindow(format!(
            "[{}, {}] is not a positive interval",
            window.tau_min, window.tau_max
        )));
    }
    let idx: Vec<usize> = (0..curve.len()).filter(|&i| window.contains(curve.lags[i])).collect();
    if idx.len() < 4 {
        return Err(AnalysisError::DegenerateWindow(format!(
            "{} lags in [{}, {}], at least 4 required",
            idx.len(),
            window.tau_min,
            window.tau_max
        )));
    }
    for &i in &idx {
        if !(curve.msd[i] > 0.0) {
            return Err(AnalysisError::NonPositiveMsd { lag: curve.lags[i] });
        }
    }
    let x: Vec<f64> = idx.iter().map(|&i| curve.lags[i].ln()).collect();
    let y: Vec<f64> = idx.iter().map(|&i| curve.msd[i].ln()).collect();
    let weights: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let se = curve.stderr[i];
            if curve.reliable && se.is_finite() && se > 0.0 {
                (curve.msd[i] / se).powi(2)
            } else {
                1.0
            }
        })
        .collect();
    let fit = weighted_line(&x, &y, &weights);
    let y4: Vec<f64> = idx.iter().map(|&i| curve.fourth[i].ln()).collect();
    let fit4 = weighted_line(&x, &y4, &weights);
    let kurt: Vec<f64> = idx.iter().map(|&i| curve.kurtosis[i]).collect();

    let on_replicate = |rep: &MomentCurves| -> Option<(f64, f64, f64, f64)> {
        let yr: Vec<f64> = idx.iter().map(|&i| rep.msd[i].ln()).collect();
        let y4r: Vec<f64> = idx.iter().map(|&i| rep.fourth[i].ln()).collect();
        if yr.iter().chain(&y4r).any(|v| !v.is_finite()) {
            return None;
        }
        let f = weighted_line(&x, &yr, &weights);
        let f4 = weighted_line(&x, &y4r, &weights);
        let k = mean(&idx.iter().map(|&i| rep.kurtosis[i]).collect::<Vec<_>>());
        Some((f.slope, f.intercept.exp(), f4.slope, k))
    };
    let reps: Vec<(f64, f64, f64, f64)> =
        curve.replicates.iter().filter_map(on_replicate).collect();

    let d_hat = fit.intercept.exp();
    let (h_se, d_se, s4_se, k_se) = if reps.len() >= 2 {
        let col = |f: fn(&(f64, f64, f64, f64)) -> f64| sd(&reps.iter().map(f).collect::<Vec<_>>());
        (
            0.5 * col(|r| r.0),
            col(|r| r.1),
            col(|r| r.2),
            col(|r| r.3),
        )
    } else {
        (0.5 * fit.slope_se, d_hat * fit.intercept_se, fit4.slope_se, f64::NAN)
    };
    let residuals = idx
        .iter()
        .map(|&i| curve.msd[i] / (d_hat * curve.lags[i].powf(fit.slope)) - 1.0)
        .collect();
    Ok(FitReport {
        h_hat: 0.5 * fit.slope,
        h_stderr: h_se,
        d_hat,
        d_stderr: d_se,
        window,
        n_traj: curve.n_traj,
        reliable: curve.reliable,
        lags: idx.iter().map(|&i| curve.lags[i]).collect(),
        msd: idx.iter().map(|&i| curve.msd[i]).collect(),
        msd_stderr: idx.iter().map(|&i| curve.stderr[i]).collect(),
        residuals,
        mean_kurtosis: mean(&kurt),
        kurtosis: kurt,
        kurtosis_stderr: idx.iter().map(|&i| curve.kurtosis_stderr[i]).collect(),
        mean_kurtosis_stderr: k_se,
        fourth_slope: fit4.slope,
        fourth_slope_stderr: s4_se,
    })
}

/// Acceptance bands used by [`compare_to_theory`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Bound on |h_hat − H|.
    pub hurst_abs: f64,
    /// Bound on |d_hat/D − 1|.
    pub diffusion_rel: f64,
    /// Mean excess kurtosis must lie within this many standard errors of 0.
    pub kurtosis_sigmas: f64,
    /// Bound on |fourth_slope − 4H|, checked only when set.
    pub fourth_slope_abs: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hurst_abs: 0.05,
            diffusion_rel: 0.2,
            kurtosis_sigmas: 3.0,
            fourth_slope_abs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub name: String,
    pub measured: f64,
    pub expected: f64,
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub model: FbmModel,
    pub tolerances: Tolerances,
    pub criteria: Vec<CriterionResult>,
    /// (τ, MSD/(D·τ^{2H}) − 1) over the fit window.
    pub relative_error: Vec<(f64, f64)>,
}

/// Checks a fit against the model. Missing or non-finite numbers fail.
pub fn compare_to_theory(report: &FitReport, m: &FbmModel, tol: &Tolerances) -> Verdict {
    let mut criteria = Vec::new();
    let mut push = |name: &str, measured: f64, expected: f64, deviation: f64, tolerance: f64| {
        criteria.push(CriterionResult {
            name: name.to_string(),
            measured,
            expected,
            deviation,
            tolerance,
            pass: deviation.is_finite() && deviation <= tolerance,
        });
    };
    push(
        "hurst",
        report.h_hat,
        m.hurst,
        (report.h_hat - m.hurst).abs(),
        tol.hurst_abs,
    );
    push(
        "diffusion",
        report.d_hat,
        m.diffusion,
        (report.d_hat / m.diffusion - 1.0).abs(),
        tol.diffusion_rel,
    );
    let k_dev = if report.reliable {
        report.mean_kurtosis.abs() / report.mean_kurtosis_stderr
    } else {
        f64::NAN
    };
    push("kurtosis", report.mean_kurtosis, 0.0, k_dev, tol.kurtosis_sigmas);
    if let Some(t4) = tol.fourth_slope_abs {
        let expected = 4.0 * m.hurst;
        push(
            "fourth_moment_slope",
            report.fourth_slope,
            expected,
            (report.fourth_slope - expected).abs(),
            t4,
        );
    }
    let relative_error = report
        .lags
        .iter()
        .zip(&report.msd)
        .map(|(&tau, &v)| (tau, v / msd_theory(m, tau) - 1.0))
        .collect();
    Verdict {
        pass: criteria.iter().all(|c| c.pass),
        model: *m,
        tolerances: *tol,
        criteria,
        relative_error,
    }
}
