//! Numerical verification of K-convexity and K-monotonicity on discretized
//! metric measure spaces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calculus;
pub mod error;
pub mod field;
pub mod flow;
pub mod hopflax;
pub mod io;
pub mod space;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
pub use field::{Density, ScalarField, VectorField};
pub use space::{build_grid, MetricMeasureSpace};
