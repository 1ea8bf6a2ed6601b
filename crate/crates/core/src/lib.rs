//! Smooth approximations of nonsmooth convex losses by mollifier
//! convolution, ρₘ(u) = ∫ ρ(u + v/m) φ(v) dv, and their use in fitting and
//! diagnosing smoothed M-estimators for linear models.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`kernels`] | Gaussian and compact-bump mollifiers |
//! | [`losses`] | absolute, check, Huber and ReLU losses with curvature measures |
//! | [`mollify`] | ρₘ and its derivatives, rate diagnostics |
//! | [`estimator`] | smoothed Newton fits, exact scalar quantile regression |
//! | [`quadratic`] | quadratic approximation of the reparametrised objective |
//! | [`montecarlo`] | reproducible simulation experiments |

// `!(x > 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod error;
pub mod estimator;
pub mod kernels;
pub mod losses;
pub mod mollify;
pub mod montecarlo;
pub mod quadratic;
pub mod quadrature;

pub use distributions::{ErrorDensity, ErrorDist};
pub use error::{Error, Result};
pub use estimator::{FitResult, LinearSample, SolverOptions};
pub use kernels::MollifierKernel;
pub use losses::{CurvatureMeasure, LossSpec};
pub use mollify::{Method, SmoothedLoss};
pub use quadratic::QuadraticApprox;
