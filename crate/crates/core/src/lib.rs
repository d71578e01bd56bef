pub mod bench;
pub mod cg;
pub mod counter;
pub mod error;
pub mod frame;
pub mod gradcheck;
pub mod hamiltonian;
pub mod harmonics;
pub mod harness;
pub mod irreps;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod params;
pub mod rng;
pub mod rotation;
pub mod so2;

pub use error::{Error, Result};
