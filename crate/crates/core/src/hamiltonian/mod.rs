//! Orbital layouts, Hamiltonian assembly, the block-rotation rule, the
//! generalized eigenproblem and evaluation metrics.

mod assemble;
mod eigen;
pub mod io;
mod layout;
mod metrics;
mod synthetic;

pub use assemble::{assemble, assemble_vjp, ExpansionWeights};
pub use eigen::{cholesky, generalized_eigensolve, symmetric_eigen};
pub use layout::{block_rotate, build_orbital_layout, BlockMatrix, OrbitalLayout};
pub use metrics::{metrics, occupied_cosine, principal_cosines, Metrics, DEGENERACY_TOL};
pub use synthetic::{gen_synthetic_target, OverlapKind};
