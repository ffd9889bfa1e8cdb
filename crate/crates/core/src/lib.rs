//! Importance measures, pruning operators, and the experiments that probe
//! how feature scaling and initialization bias them: over-parameterized
//! least squares with a fixed-point risk predictor, λ-scaled two-layer ReLU
//! networks, block-wise PL bounds for gradient descent, and l1 recovery
//! under spectrally biased covariance.

// `!(x > 0.0)` is the NaN-rejecting form used throughout for argument checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cgmt;
pub mod cli;
pub mod error;
pub mod importance;
pub mod l1_bias;
pub mod linalg;
pub mod linreg;
pub mod ppls;
pub mod rng;
pub mod shallow_net;

pub use error::{Error, Result};
