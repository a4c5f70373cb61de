//! Differentiable operations recorded on a [`Graph`](crate::graph::Graph).
//!
//! Every op validates shapes, checks its output for non-finite values, and
//! registers a backward closure capturing exactly the tensors it needs.

mod batchnorm;
mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod shape;

pub use batchnorm::BnState;

/// Forward-pass mode: training uses batch statistics and updates running
/// stats; evaluation uses frozen running stats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
