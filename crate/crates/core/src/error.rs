//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Malformed input data: non-finite values, bad labels, shape mismatches
    /// in user-supplied blocks.
    #[error("data error: {0}")]
    Data(String),

    /// Model cannot be fit on this input (e.g. dispersion unidentifiable).
    #[error("fit error: {0}")]
    Fit(String),

    /// An iterative solver ran out of iterations. Carries the last iterate
    /// and the gradient max-norm at that point.
    #[error(
        "{}no convergence after {iterations} iterations (gradient max-norm {gradient_norm:.3e})",
        node.as_ref().map(|n| format!("node {n}: ")).unwrap_or_default()
    )]
    Convergence {
        node: Option<String>,
        iterations: usize,
        gradient_norm: f64,
        last_iterate: Vec<f64>,
    },

    /// Caller misuse: dimension mismatch, unknown index, empty input where
    /// nonempty is required.
    #[error("usage error: {0}")]
    Usage(String),

    /// Violated internal invariant. Indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Attach the node a fit failure occurred at.
    pub fn at_node(self, node: &crate::hierarchy::NodeId) -> Error {
        match self {
            Error::Data(m) => Error::Data(format!("node {node}: {m}")),
            Error::Fit(m) => Error::Fit(format!("node {node}: {m}")),
            Error::Usage(m) => Error::Usage(format!("node {node}: {m}")),
            Error::Internal(m) => Error::Internal(format!("node {node}: {m}")),
            Error::Convergence {
                node: existing,
                iterations,
                gradient_norm,
                last_iterate,
            } => Error::Convergence {
                node: existing.or_else(|| Some(node.to_string())),
                iterations,
                gradient_norm,
                last_iterate,
            },
        }
    }
}
