//! Simulation and parameter estimation for phonon hopping and phonon
//! blockade in chains of trapped ions.
//!
//! All angular frequencies inside the library are in rad/s and all times in
//! seconds. Use [`units::hz`] to convert a cyclic frequency (the usual
//! `2π × value` quoting) to rad/s.
//!
//! Module map:
//! - [`chain`]: equilibrium geometry, hopping couplings and local-mode shifts.
//! - [`hilbert`]: truncated spin ⊗ Fock space, basis, elementary operators.
//! - [`dynamics`]: rotating-frame Hamiltonians and unitary propagation.
//! - [`spam`]: thermal preparation and readout error model.
//! - [`experiment`]: pulse sequences, readout, sideband spectroscopy.
//! - [`reduced`]: three-level, Jaynes-Cummings ladder and blockade diagnostics.
//! - [`fit`]: least-squares estimation of the chain parameters.

pub mod chain;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod hilbert;
mod linalg;
pub mod reduced;
pub mod spam;
pub mod units;

pub use error::{Error, Result};
