//! Numerical laboratory for stochastic PDEs with Dirichlet boundary
//! conditions: simulation, stochastic flows, Feynman–Kac exit-time
//! representations, dyadic oscillation counts, hitting probabilities and
//! boundary-exponent diagnostics.

pub mod boundary;
pub mod domain;
pub mod error;
pub mod feynman_kac;
pub mod flows;
pub mod hitting;
pub mod linalg;
pub mod noise;
pub mod pilot;
pub mod rng;
pub mod solver;
pub mod sqrt_law;
pub mod stats;

pub use domain::Domain;
pub use error::{LabError, Result};
pub use noise::{generate_path, oscillation, refine_path, ScalarPath, WienerPath};
pub use solver::{coercivity_gap, energy_norms, solve, solve_recording, CoefficientSet, GridSolution, GridSpec, SpdeProblem};
