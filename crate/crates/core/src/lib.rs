#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Joint visibility-region detection and near-field channel estimation for
//! extremely large antenna arrays.

pub mod alternating;
pub mod checks;
pub mod ep;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod metrics;
pub mod omp;
pub mod ifvbi;
pub mod oracles;
pub mod priors;
pub mod refine;
pub mod scene;

pub use error::{Error, Result};
