//! Simulation and pulse-optimization workbench for finite-energy GKP logical
//! qubits encoded in the motional modes of a trapped ion.
//!
//! The crate is organized around the experimental pipeline:
//! - [`hilbert`], [`operators`], [`states`], [`propagate`], [`wigner`]:
//!   dense linear algebra over truncated spin ⊗ Fock spaces;
//! - [`gkp`]: finite-energy codeword synthesis from the grid Hamiltonian;
//! - [`sdf`]: phase-modulated state-dependent-force pulses, constraints,
//!   filtering, and propagators;
//! - [`optimize`]: adjoint-gradient pulse optimization of the gate set;
//! - [`measure`]: logical Pauli and stabiliser-subsystem readout;
//! - [`tomography`]: CPTP-constrained process and state reconstruction;
//! - [`noise`]: Monte-Carlo motional-dephasing pipelines and error budgets.

pub mod error;
pub mod gkp;
pub mod hilbert;
pub mod measure;
pub mod noise;
pub mod operators;
pub mod optimize;
pub mod propagate;
pub mod reference;
pub mod sdf;
pub mod states;
pub mod tomography;
pub mod wigner;

pub use error::{GkpError, Result};
