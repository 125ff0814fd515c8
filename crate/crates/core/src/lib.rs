//! Variable-order BDF integration of ODE initial value problems, discrete
//! adjoints by reverse differentiation of the frozen scheme, and the
//! step-function approximation of the weak adjoint.

// `!(x <= limit)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod analysis;
pub mod bdf;
pub mod error;
pub mod model;

pub use error::{Error, Result};
