//! Dense complex linear algebra, finite differences and a limited-memory
//! quasi-Newton minimizer.
//!
//! Every matrix in this crate is small (at most a few hundred rows), so all
//! operators are stored densely and matrix functions are evaluated through a
//! full Hermitian eigendecomposition.

mod fd;
mod lbfgs;
mod linalg;

pub use fd::{fd_gradient, FD_STEP};
pub use lbfgs::{lbfgs_minimize, LbfgsOptions, LbfgsResult, LbfgsStatus};
pub(crate) use linalg::exp_divided_differences;
pub use linalg::{
    canonicalize_phase, exp_hermitian_action, expectation, hermitian_deviation, hermitian_eig, inner, norm, normalized,
    ComplexMatrix, EigenDecomposition, StateVector, HERMITIAN_TOLERANCE,
};
