//! Top-down empirical Bayes refinement of the random effects.
//!
//! The bottom-up pass leaves every node with a preliminary estimate that only
//! uses data below it. Working from the root down, each node's estimate is
//! replaced by the posterior mean of its random effect under the fitted
//! level covariance, conditioning on the node's own precision-coordinate
//! observation `Z b_hat` and the already-refined parent path. The posterior
//! covariance is kept alongside the mean so reports can quote uncertainty.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hierarchy::NodeId;
use crate::linalg::{spd_solve, stabilized_inverse, sym_eig, symmetrize};
use crate::moment_fit::FittedModel;

/// Refined estimates for every node of the tree.
#[derive(Debug, Clone)]
pub struct RefinedEstimates {
    /// Refined full path effects; the root entry is the fixed-effect vector.
    pub b_bar: BTreeMap<NodeId, DVector<f64>>,
    /// Posterior-mean random effects for every non-root node.
    pub u_hat: BTreeMap<NodeId, DVector<f64>>,
    /// Posterior covariance of each non-root node's random effect.
    pub posterior_cov: BTreeMap<NodeId, DMatrix<f64>>,
}

impl RefinedEstimates {
    /// Posterior-mean random effect, zero when the node is unknown.
    pub fn u_or_zero(&self, node: &NodeId, q: usize) -> DVector<f64> {
        self.u_hat
            .get(node)
            .cloned()
            .unwrap_or_else(|| DVector::zeros(q))
    }
}

/// Posterior update for one node given its precision-coordinate observation.
///
/// Solves for the posterior mean and covariance of `u` in the working model
/// `Z b_hat = Z1 b_parent + Z2 u + e`, `e ~ N(0, I)`, `u ~ N(0, sigma)`. A
/// singular prior is handled on its support: components of `u` in the null
/// space of `sigma` are pinned to zero with zero posterior variance.
pub fn posterior_update(
    z1: &DMatrix<f64>,
    z2: &DMatrix<f64>,
    z_b_hat: &DVector<f64>,
    b_parent: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let q = sigma.nrows();
    let (vals, vecs) = sym_eig(sigma);
    let lmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let support: Vec<usize> = (0..q)
        .filter(|&k| vals[k] > lmax * 1e-12 && vals[k] > 0.0)
        .collect();
    if support.is_empty() {
        return (DVector::zeros(q), DMatrix::zeros(q, q));
    }
    let s = support.len();
    let mut qs = DMatrix::<f64>::zeros(q, s);
    let mut prior_prec = DVector::<f64>::zeros(s);
    for (col, &k) in support.iter().enumerate() {
        qs.set_column(col, &vecs.column(k));
        prior_prec[col] = 1.0 / vals[k];
    }

    let resid = z_b_hat - z1 * b_parent;
    let z2_qs = z2 * &qs; // r x s
    let mut a = z2_qs.transpose() * &z2_qs;
    for k in 0..s {
        a[(k, k)] += prior_prec[k];
    }
    let rhs = z2_qs.transpose() * resid;
    let (alpha, _) = spd_solve(&a, &rhs);
    let u = &qs * alpha;
    let (a_inv, _) = stabilized_inverse(&a);
    let cov = symmetrize(&(&qs * a_inv * qs.transpose()));
    (u, cov)
}

/// Run the top-down refinement over the whole tree.
pub fn refine(model: &FittedModel) -> Result<RefinedEstimates> {
    let spec = &model.spec;
    let d = spec.depth;
    let mut b_bar: BTreeMap<NodeId, DVector<f64>> = BTreeMap::new();
    let mut u_hat: BTreeMap<NodeId, DVector<f64>> = BTreeMap::new();
    let mut posterior_cov: BTreeMap<NodeId, DMatrix<f64>> = BTreeMap::new();

    b_bar.insert(NodeId::root(), model.beta_bar.clone());

    for l in 0..d {
        let p_prev = spec.cumulative_dim(l);
        let q = spec.feature_dims[l + 1];
        let sigma = model.sigma_bar(l + 1);
        for parent in &spec.level_sets[l] {
            let parent_bar = b_bar
                .get(parent)
                .ok_or_else(|| Error::Internal(format!("no refined estimate for {parent}")))?
                .clone();
            for j in 1..=spec.num_children(parent) {
                let child = parent.child(j);
                let est = model
                    .node_estimates
                    .get(&child)
                    .ok_or_else(|| Error::Internal(format!("no estimate for {child}")))?;
                let z = est.z();
                let z1 = z.columns(0, p_prev).into_owned();
                let z2 = z.columns(p_prev, q).into_owned();
                let (u, cov) = posterior_update(&z1, &z2, &est.z_b_hat(), &parent_bar, sigma);
                let mut path = DVector::zeros(p_prev + q);
                path.rows_mut(0, p_prev).copy_from(&parent_bar);
                path.rows_mut(p_prev, q).copy_from(&u);
                b_bar.insert(child.clone(), path);
                u_hat.insert(child.clone(), u);
                posterior_cov.insert(child, cov);
            }
        }
    }

    Ok(RefinedEstimates {
        b_bar,
        u_hat,
        posterior_cov,
    })
}

/// One row of a per-node effect report.
#[derive(Debug, Clone)]
pub struct NodeEffectRow {
    pub node: NodeId,
    pub effect: f64,
    pub posterior_sd: f64,
    pub count: usize,
}

/// Per-node effect and posterior standard deviation for one covariate at one
/// level, sorted by observation count descending.
pub fn node_effect_report(
    refined: &RefinedEstimates,
    model: &FittedModel,
    level: usize,
    covariate: usize,
) -> Result<Vec<NodeEffectRow>> {
    if level < 1 || level > model.spec.depth {
        return Err(Error::Usage(format!(
            "level {level} outside 1..={}",
            model.spec.depth
        )));
    }
    let q = model.spec.feature_dims[level];
    if covariate >= q {
        return Err(Error::Usage(format!(
            "covariate index {covariate} outside the level's {q} features"
        )));
    }
    let mut rows: Vec<NodeEffectRow> = model.spec.level_sets[level]
        .iter()
        .map(|node| {
            let effect = refined.u_hat.get(node).map(|u| u[covariate]).unwrap_or(0.0);
            let var = refined
                .posterior_cov
                .get(node)
                .map(|c| c[(covariate, covariate)])
                .unwrap_or(0.0);
            NodeEffectRow {
                node: node.clone(),
                effect,
                posterior_sd: var.max(0.0).sqrt(),
                count: model.count(node),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.node.cmp(&b.node)));
    Ok(rows)
}
