//! Ground states from the iterative exponential ansatz of the contracted
//! Schrödinger equation, and a neural surrogate that predicts the ansatz
//! parameters directly from the Hamiltonian parameters.
//!
//! A Hamiltonian family `H(f) = Σ_ℓ f_ℓ h_ℓ` fixes a list of operator terms.
//! The k-iteration contracted quantum eigensolver ([`cqe`]) prepares
//!
//! ```text
//! |Ψ(f)> = e^{B(k)} e^{iA(k)} ... e^{B(1)} e^{iA(1)} |Φ>
//! ```
//!
//! where every generator is a real combination of the same terms `h_ℓ`, and
//! each layer is found by minimizing the energy with L-BFGS. The [`dataset`]
//! module turns many such solves into training data, [`surrogate`] learns
//! the map `f -> {A(n), B(n)}` and [`eval`] feeds predictions back through
//! the physics.
//!
//! ```
//! use kcqe::{cqe, oracle, HamiltonianFamily, Mode};
//!
//! let family = HamiltonianFamily::hubbard(5, 2)?;
//! let solution = cqe::solve_kcqe(&family, &[4.0], 2, Mode::Hermitian)?;
//! let exact = oracle::exact_ground(&family, &[4.0])?.ground_energy();
//! assert!((solution.energy() - exact).abs() < 1e-6 * exact.abs());
//! # Ok::<(), kcqe::Error>(())
//! ```

// `!(x > 0.0)` is how parameters reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cqe;
pub mod dataset;
mod error;
pub mod eval;
pub mod hamiltonian;
pub mod hilbert;
pub mod numerics;
pub mod oracle;
pub mod surrogate;

pub use cqe::{AnsatzLayer, CqeSolution, Mode};
pub use error::{Error, Result};
pub use hamiltonian::{FamilyKind, HamiltonianFamily, ParameterRegime};
