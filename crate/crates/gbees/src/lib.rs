//! Grid-based Bayesian estimation exploiting sparsity.
//!
//! Propagates a state PDF over phase space on a sparse, dynamically
//! maintained Cartesian grid: between measurements the Kolmogorov
//! forward equation is integrated with a second-order Godunov scheme
//! (corner transport upwind plus TVD flux limiting, central-difference
//! diffusion); at measurement times the PDF is updated via Bayes' rule
//! and renormalized. Only cells above a probability threshold, plus
//! their edge and pairwise-corner neighbors, are tracked.

pub mod bayes;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod models;
pub mod runner;
pub mod solver;

pub use error::{GbeesError, Result};
pub use grid::{Cell, CellIndex, GridGeometry, SparseGrid, MAX_DIM};
pub use models::{DynamicsModel, LorenzModel, RotationModel};
pub use solver::{advance_step, Limiter, SolverConfig, StepOutcome};
