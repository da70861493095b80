//! Memory-assisted quantum state transfer on excitation-conserving spin chains.
//!
//! A chain `A + C + B` evolves freely while Bob swaps his block `B` into fresh
//! memory registers. The crate computes the exact joint evolution by
//! excitation sector, the resulting transfer map and its recovery fidelity,
//! survival probabilities of the projected evolution, convergence
//! certificates, and time-scale fits.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod hamiltonian;
pub mod linalg;
pub mod propagator;
pub mod protocol;
pub mod sector_basis;

pub use error::{Error, Result};
