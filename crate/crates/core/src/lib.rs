//! Variational Monte Carlo for ab initio Hamiltonians in second quantization,
//! with a transformer backflow determinant ansatz.

pub mod ansatz;
pub mod determinant;
pub mod driver;
pub mod error;
pub mod fci;
pub mod hamiltonian;
pub mod linalg;
pub mod local_energy;
pub mod optimizer;
pub mod rng;
pub mod sampler;
pub mod spin;
pub mod wavefunction;

pub use error::{Error, Result};
