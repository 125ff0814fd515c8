//! Discrete adjoints of the frozen BDF scheme and the weak-adjoint step function.

mod io;
mod sweep;
mod weak;

pub use io::{AdjointDocument, ADJOINT_FORMAT, ADJOINT_VERSION};
pub use sweep::{adjoint_sweep, gradient_wrt_initial, DiscreteAdjoints};
pub use weak::{assemble_weak_adjoint, WeakAdjoint};
