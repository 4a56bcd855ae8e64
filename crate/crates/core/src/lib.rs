//! Moment-based fitting for deeply-nested hierarchical generalized linear
//! mixed models.
//!
//! The model attaches a fixed-effect vector to the root of a depth-`d`
//! grouping tree and a mean-zero Gaussian random-effect vector to every other
//! node, with a shared covariance matrix per level. Fitting runs in two
//! passes: a bottom-up pass that estimates effects at the leaves and prunes
//! the tree by moment-matching child estimates into parent estimates and
//! level covariances, and a top-down pass that refines every node's random
//! effects with empirical Bayes posterior means.
//!
//! Module map:
//! - [`hierarchy`]: the grouping tree, node labeling, ancestor queries.
//! - [`leaf_fit`]: per-leaf estimation (pseudo-inverse least squares,
//!   Firth-penalized logistic regression) with factored precision summaries.
//! - [`moment_fit`]: the bottom-up moment combination pass.
//! - [`ebayes`]: the top-down empirical Bayes refinement pass.
//! - [`predict`]: linear predictors, baselines, evaluation losses.
//! - [`simulate`]: seeded synthetic data generation for benchmarks.

pub mod ebayes;
pub mod error;
pub mod family;
pub mod hierarchy;
pub mod leaf_fit;
pub mod linalg;
pub mod moment_fit;
pub mod predict;
pub mod simulate;

pub use ebayes::{refine, RefinedEstimates};
pub use error::{Error, Result};
pub use family::Family;
pub use hierarchy::{HierarchyBuild, HierarchySpec, NodeId};
pub use leaf_fit::{LeafBlock, NodeEstimate};
pub use moment_fit::{fit, FitOptions, FittedModel, WeightScheme};
