//! Exact grid numerics for mean-field interacting particle systems.
//!
//! Everything lives on a uniform 1D grid: measures are weight vectors,
//! kernels are finite mode expansions, and small-N particle laws are
//! enumerated exhaustively so identities can be checked to round-off.

pub mod error;
pub mod dynamics;
pub mod exact_gibbs;
pub mod functionals;
pub mod grid;
pub mod kernel;
pub mod models;
pub mod tilts;

pub use error::{Error, Result};
pub use grid::{
    integrate, relative_entropy, relative_fisher, tv_distance, wasserstein2, Grid, GridMeasure,
    Topology,
};
