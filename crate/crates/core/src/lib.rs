//! Continuous-time survival models whose cumulative hazard solves a neural
//! ODE `Λ'(t) = h(Λ(t), t; x, θ)`, `Λ(0) = 0`.
//!
//! The pieces, bottom up:
//!
//! - [`nn`]: the feed-forward network behind `h`, with exact reverse-mode
//!   partials.
//! - [`ode`]: fixed-step RK4 and adaptive Dormand–Prince solvers, plus the
//!   batched cumulative-hazard solve in rescaled time.
//! - [`model`]: the `full`, `ph`, and `cox` hazard variants and curve
//!   prediction.
//! - [`adjoint`]: the censored log-likelihood and its gradient by a backward
//!   adjoint solve.
//! - [`train`]: RMSProp mini-batch training with early stopping.
//! - [`metrics`]: Kaplan–Meier, IPCW concordance, Brier and binomial
//!   log-likelihood scores, and the log-rank test.
//! - [`data`]: observations, CSV I/O, standardization, splits, and a
//!   simulation with crossing survival curves.
//!
//! ```
//! use odesurv::{ode::{solve_cumhaz, OdeConfig}, testing::ConstantHazard};
//!
//! let cumhaz = solve_cumhaz(&ConstantHazard(2.0), &[], &[0.0, 0.5, 1.0], &OdeConfig::default()).unwrap();
//! assert!((cumhaz[1] - 1.0).abs() < 1e-9);
//! ```

pub mod adjoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ode;
pub mod testing;
pub mod train;

pub use adjoint::{grad_cumhaz, loss, loss_grad, LossReport};
pub use data::{Dataset, Observation, Standardization};
pub use error::{Error, Result};
pub use metrics::{MetricReport, StepFunction, SurvivalMatrix, SurvivalPredictions};
pub use model::{Hazard, SurvivalCurve, SurvivalModel, Variant};
pub use ode::{Method, OdeConfig};
pub use train::{fit, ModelSpec, TrainConfig, TrainHistory};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/hazard-ode.md")]
    mod hazard_ode {}
    #[doc = include_str!("../../../book/src/solvers.md")]
    mod solvers {}
    #[doc = include_str!("../../../book/src/likelihood.md")]
    mod likelihood {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
