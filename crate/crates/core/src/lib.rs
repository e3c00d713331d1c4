//! Hybrid Jacobi coordinate descent for two-layer ReLU regression networks.
//!
//! * [`model`]: network, loss, gradient, seeded data and initialization.
//! * [`coord_eval`]: `O(n)` loss under a single-coordinate perturbation.
//! * [`optimizers`]: hybrid coordinate-descent epoch and gradient descent.
//! * [`harness`]: experiment runs, CSV metrics and SVG convergence plots.
//! * [`cli`]: the `hybrid-cd` command-line front end.

pub mod cli;
pub mod coord_eval;
pub mod error;
pub mod harness;
pub mod model;
pub mod optimizers;

pub use coord_eval::PreactivationCache;
pub use error::{Error, Result};
pub use model::{Dataset, NetworkParams, RngSeed};
pub use optimizers::{CoordinateTarget, EpochStats, GdConfig, HybridConfig, UpdateRule};
