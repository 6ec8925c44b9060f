//! Reference fractional Brownian motion, ensemble statistics, and the Hurst
//! and diffusion fits.

pub mod fbm;
pub mod fit;
pub mod stats;

pub use fbm::{fbm_covariance, fbm_trajectories, generate_fbm, FbmMethod, FbmPaths};
pub use fit::{compare_to_theory, fit_hurst, CriterionResult, FitReport, FitWindow, Tolerances, Verdict};
pub use stats::{accumulate, merge, msd_curve, EnsembleStats, LagGrid, MomentCurves, MsdCurve, TrajSummary};
