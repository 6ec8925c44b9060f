//! Passive tracers in Gaussian, Markovian, incompressible random velocity
//! fields with power-law spectra, and the fractional Brownian motion
//! diagnostics used to check their long-time limit.
//!
//! Modules, bottom up:
//!
//! * [`theory`]: exponents, spectral tensors, the limit diffusion constant and
//!   the finite-ε MSD obtained by quadrature.
//! * [`field`]: finite-mode velocity realizations with exact OU time stepping.
//! * [`tracer`]: the rescaled equation of motion and reproducible ensembles.
//! * [`analysis`]: exact fBm sampling, MSD statistics and Hurst fits.
//! * [`io`]: CSV and JSON formats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod field;
pub mod io;
pub mod par;
pub mod quadrature;
pub mod rng;
pub mod theory;
pub mod tracer;

pub use error::{AnalysisError, FieldError, ParamError, QuadratureError, TheoryError, TracerError};
pub use par::Executor;
pub use rng::StreamSeed;
