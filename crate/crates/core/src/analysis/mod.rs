//! Verification of the discretized optimality conditions, error metrics
//! against analytic references and observed convergence orders.

mod convergence;
mod kkt;
mod metrics;

pub use convergence::{fit_order, observed_order, ConvergenceRow, ConvergenceTable};
pub use kkt::{verify_kkt, BandedSystem, KktResidualReport};
pub use metrics::{dual_norm_bound, equidistant_stepsize, pointwise_error};
