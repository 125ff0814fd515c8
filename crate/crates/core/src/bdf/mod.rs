//! BDF integration: coefficients from arbitrary nodes, Newton-based implicit
//! steps, non-adaptive and adaptive drivers, the integration tape and dense output.

mod adaptive;
mod coefficients;
mod fixed;
mod grid;
mod newton;
mod stepping;
mod tape;

pub use adaptive::{integrate_adaptive, integrate_adaptive_with, AdaptiveSettings};
pub use coefficients::{
    compute_coefficients, interpolate, lagrange_basis, lagrange_basis_derivative, BdfCoefficients,
    MAX_ORDER,
};
pub use fixed::{
    integrate_nonadaptive, integrate_on_grid, nonadaptive_grid, NONADAPTIVE_NEWTON_TOLERANCE,
};
pub use grid::TimeGrid;
pub use newton::{newton_bdf_step, NewtonOutcome, NewtonSettings, NewtonSolver};
pub use tape::{IntegrationMode, IntegrationTape, NewtonStats, TAPE_FORMAT, TAPE_VERSION};
