//! Bottom-up moment-based fitting: prune the tree level by level, combining
//! child estimates into parent estimates and level covariance estimates.
//!
//! At level `l`, each child estimate carries a factored precision summary
//! `Z_ij = diag(D_ij) V_ij^T`. Splitting the rows of `V_ij` into the parent
//! block `V_ij1` and the level block `V_ij2` gives the two moment equations
//! the combination matches:
//!
//! ```text
//! E(V_ij^T b_hat_ij)   = V_ij1^T b_i
//! cov(V_ij^T b_hat_ij) = D_ij^{-2} + V_ij2^T Sigma_l V_ij2
//! ```
//!
//! Weighted by symmetric positive-definite `W_ij`, the parent estimate is
//!
//! ```text
//! b_hat_i = Omega_i^+  sum_j V_ij1 W_ij V_ij^T b_hat_ij,
//! Omega_i = sum_j V_ij1 W_ij V_ij1^T,
//! ```
//!
//! and the level covariance solves the induced matching equation in the
//! half-vectorized coordinates of symmetric matrices, followed by projection
//! onto the PSD cone. The eigendecomposition of `Omega_i` supplies the
//! parent's own precision summary, which is what lets the same step recurse
//! up the tree.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::ebayes::RefinedEstimates;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::hierarchy::{HierarchySpec, NodeId};
use crate::leaf_fit::{
    fit_leaf_gaussian, fit_leaf_logistic_firth_with, DispersionAccumulator, FirthOptions,
    LeafBlock, NodeEstimate,
};
use crate::linalg::{
    min_eigenvalue, psd_project, stabilized_inverse, sym_eig, symmetrize, unvech_scaled,
    vech_scaled, CompactSvd,
};

/// Floor applied to the pooled Gaussian dispersion so precision factors stay
/// finite when every leaf fits its data exactly.
const PHI_FLOOR: f64 = 1e-24;

/// Relative eigenvalue cutoff below which directions of a parent's
/// information matrix are dropped, propagating rank deficiency upward.
const OMEGA_RANK_TOL: f64 = 1e-12;

/// Per-child weighting used by the moment combination.
#[derive(Debug, Clone)]
pub enum WeightScheme {
    /// `W_ij = I`: unweighted moment matching. Exact on noiseless full-rank
    /// data, and the reference for oracle comparisons.
    Identity,
    /// `W_ij = (D_ij^{-2} + V_ij2^T S V_ij2)^{-1}` with `S` a pilot guess of
    /// the level covariance: the inverse of each child's marginal covariance
    /// under the pilot. With `pilot: None` the pilot comes from a first pass
    /// run with identity weights.
    SemiWeighted {
        /// One pilot matrix per level (index 0 is level 1); `None` selects
        /// the two-pass scheme.
        pilot: Option<Vec<DMatrix<f64>>>,
    },
}

impl Default for WeightScheme {
    fn default() -> Self {
        WeightScheme::SemiWeighted { pilot: None }
    }
}

impl WeightScheme {
    pub fn semi_weighted() -> WeightScheme {
        WeightScheme::SemiWeighted { pilot: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightScheme::Identity => "identity",
            WeightScheme::SemiWeighted { .. } => "semi_weighted",
        }
    }

    fn validate(&self, spec: &HierarchySpec) -> Result<()> {
        if let WeightScheme::SemiWeighted { pilot: Some(mats) } = self {
            if mats.len() != spec.depth {
                return Err(Error::Usage(format!(
                    "expected {} pilot covariances, got {}",
                    spec.depth,
                    mats.len()
                )));
            }
            for (l, m) in mats.iter().enumerate() {
                let q = spec.feature_dims[l + 1];
                if m.nrows() != q || m.ncols() != q {
                    return Err(Error::Usage(format!(
                        "pilot covariance for level {} must be {q} x {q}",
                        l + 1
                    )));
                }
                if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
                    return Err(Error::Usage(format!(
                        "pilot covariance for level {} is not symmetric",
                        l + 1
                    )));
                }
                if min_eigenvalue(m) < -1e-10 * (1.0 + m.amax()) {
                    return Err(Error::Usage(format!(
                        "pilot covariance for level {} is not positive semidefinite",
                        l + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pooled covariance estimate for one level of the hierarchy.
#[derive(Debug, Clone)]
pub struct LevelCovariance {
    pub level: usize,
    /// Symmetric PSD pooled estimate.
    pub sigma_bar: DMatrix<f64>,
    /// Total child weight that contributed.
    pub contributing_weight: f64,
    /// Smallest eigenvalue of the weighted average before the defensive
    /// final projection. Convex combinations of PSD inputs keep this at
    /// roundoff level.
    pub pre_clip_min_eigenvalue: f64,
}

/// Per-parent covariance estimate retained for diagnostics.
#[derive(Debug, Clone)]
pub struct SigmaHatRecord {
    pub parent: NodeId,
    pub level: usize,
    pub sigma_hat: DMatrix<f64>,
}

/// Output of the bottom-up pass.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub family: Family,
    /// Fixed-effect estimate, length q_0.
    pub beta_bar: DVector<f64>,
    /// Level covariances, index 0 is level 1.
    pub sigma_bars: Vec<DMatrix<f64>>,
    pub level_covariances: Vec<LevelCovariance>,
    /// All per-parent covariance estimates produced along the way.
    pub sigma_hats: Vec<SigmaHatRecord>,
    /// Pooled dispersion; 1 for the logistic family.
    pub phi_bar: f64,
    /// Preliminary estimates for every node, root and leaves included.
    pub node_estimates: BTreeMap<NodeId, NodeEstimate>,
    /// Observations under each node.
    pub counts: BTreeMap<NodeId, usize>,
    pub spec: HierarchySpec,
    pub warnings: Vec<String>,
    /// Filled by the empirical Bayes pass.
    pub refined: Option<RefinedEstimates>,
}

impl FittedModel {
    pub fn sigma_bar(&self, level: usize) -> &DMatrix<f64> {
        &self.sigma_bars[level - 1]
    }

    pub fn count(&self, node: &NodeId) -> usize {
        self.counts.get(node).copied().unwrap_or(0)
    }
}

/// Fitting knobs beyond the weight scheme.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub scheme: WeightScheme,
    pub firth: FirthOptions,
    /// Worker threads for the leaf fits; 0 or 1 runs sequentially. Results
    /// are merged in leaf order either way.
    pub jobs: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            scheme: WeightScheme::default(),
            // skewed trees put most of the data in a few leaves and leave
            // many small, nearly-separated ones that iterate longer
            firth: FirthOptions {
                max_iter: 200,
                ..FirthOptions::default()
            },
            jobs: 1,
        }
    }
}

/// Split a child's singular basis into the parent-block and level-block rows.
/// Returns `(V1, V2, D)` where `V1` holds the first `parent_dim` rows of `V`
/// and `V2` the remaining `child_dim` rows.
pub fn split_singular_basis(
    est: &NodeEstimate,
    parent_dim: usize,
    child_dim: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    if est.dim() != parent_dim + child_dim {
        return Err(Error::Internal(format!(
            "node {}: estimate has {} rows, expected {} + {}",
            est.node,
            est.dim(),
            parent_dim,
            child_dim
        )));
    }
    let v1 = est.v.rows(0, parent_dim).into_owned();
    let v2 = est.v.rows(parent_dim, child_dim).into_owned();
    Ok((v1, v2, est.d.clone()))
}

/// Weight rule with the pilot already resolved for one level.
#[derive(Debug, Clone, Copy)]
pub enum LevelWeights<'a> {
    Identity,
    SemiWeighted(&'a DMatrix<f64>),
}

/// Choose the per-child weight matrices for one parent's combination.
/// Returns the weights and whether any inverse needed ridge stabilization.
pub fn choose_weights(
    children: &[&NodeEstimate],
    parent_dim: usize,
    child_dim: usize,
    weights: LevelWeights<'_>,
) -> Result<(Vec<DMatrix<f64>>, bool)> {
    let mut out = Vec::with_capacity(children.len());
    let mut stabilized_any = false;
    for est in children {
        match weights {
            LevelWeights::Identity => out.push(DMatrix::identity(est.rank, est.rank)),
            LevelWeights::SemiWeighted(pilot) => {
                let (_, v2, d) = split_singular_basis(est, parent_dim, child_dim)?;
                let mut candidate = v2.transpose() * pilot * &v2;
                for k in 0..est.rank {
                    let dk = d[k];
                    candidate[(k, k)] += 1.0 / (dk * dk);
                }
                let (w, stabilized) = stabilized_inverse(&candidate);
                stabilized_any |= stabilized;
                out.push(w);
            }
        }
    }
    Ok((out, stabilized_any))
}

/// Result of combining one parent's children.
pub struct CombineResult {
    pub estimate: NodeEstimate,
    /// PSD-projected level covariance estimate from this parent.
    pub sigma_hat: DMatrix<f64>,
    /// Number of children.
    pub m: usize,
    /// The covariance matching system was rank-deficient and the least-norm
    /// solution was taken.
    pub sigma_least_norm: bool,
    /// All children carried zero information; the estimate is diffuse.
    pub diffuse: bool,
}

/// Combine the estimates of one parent's children into the parent estimate
/// and this parent's estimate of the level covariance.
pub fn combine_children(
    parent: &NodeId,
    children: &[&NodeEstimate],
    weights: &[DMatrix<f64>],
    parent_dim: usize,
    child_dim: usize,
) -> Result<CombineResult> {
    if children.is_empty() {
        return Err(Error::Internal(format!(
            "node {parent}: no children to combine"
        )));
    }
    if weights.len() != children.len() {
        return Err(Error::Internal(format!(
            "node {parent}: {} weights for {} children",
            weights.len(),
            children.len()
        )));
    }

    let m = children.len();
    let mut omega = DMatrix::<f64>::zeros(parent_dim, parent_dim);
    let mut rhs = DVector::<f64>::zeros(parent_dim);
    let mut splits = Vec::with_capacity(m);
    for (est, w) in children.iter().zip(weights) {
        let (v1, v2, d) = split_singular_basis(est, parent_dim, child_dim)?;
        let g = &v1 * w; // parent_dim x r
        omega += &g * v1.transpose();
        rhs += &g * (est.v.transpose() * &est.b_hat);
        splits.push((v1, v2, d));
    }
    omega = symmetrize(&omega);

    // Parent estimate and precision summary from the eigendecomposition of
    // Omega; directions below the rank cutoff are dropped.
    let (vals, vecs) = sym_eig(&omega);
    let lmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..parent_dim)
        .filter(|&k| vals[k] > lmax * OMEGA_RANK_TOL && vals[k] > 0.0)
        .collect();
    let diffuse = keep.is_empty();
    let estimate = if diffuse {
        NodeEstimate::diffuse(parent.clone(), parent_dim)
    } else {
        let mut v = DMatrix::<f64>::zeros(parent_dim, keep.len());
        let mut d = DVector::<f64>::zeros(keep.len());
        let mut b_hat = DVector::<f64>::zeros(parent_dim);
        for (col, &k) in keep.iter().enumerate() {
            v.set_column(col, &vecs.column(k));
            d[col] = vals[k].sqrt();
            let coeff = vecs.column(k).dot(&rhs) / vals[k];
            b_hat += vecs.column(k) * coeff;
        }
        NodeEstimate {
            node: parent.clone(),
            b_hat,
            v,
            d,
            rank: keep.len(),
        }
    };

    // Level covariance: match the empirical scatter of the weighted child
    // deviations against its model-implied value, solving for Sigma in
    // half-vectorized coordinates.
    let q = child_dim;
    let mut scatter = DMatrix::<f64>::zeros(q, q);
    let mut b_ops: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    for ((est, w), (v1, v2, d)) in children.iter().zip(weights).zip(&splits) {
        let h = v2 * w; // q x r
        let dev = &h * (est.v.transpose() * &est.b_hat) - &h * (v1.transpose() * &estimate.b_hat);
        scatter += &dev * dev.transpose();
        // subtract the sampling-noise part H D^{-2} H^T
        let mut hd = h.clone();
        for k in 0..est.rank {
            let mut col = hd.column_mut(k);
            col /= d[k] * d[k];
        }
        scatter -= hd * h.transpose();
        b_ops.push(&h * v2.transpose());
    }
    scatter = symmetrize(&scatter);

    let vech_len = q * (q + 1) / 2;
    let mut op = DMatrix::<f64>::zeros(vech_len, vech_len);
    let mut col_idx = 0;
    let inv_root2 = std::f64::consts::FRAC_1_SQRT_2;
    for a in 0..q {
        for b in a..q {
            // orthonormal symmetric basis element
            let mut basis = DMatrix::<f64>::zeros(q, q);
            if a == b {
                basis[(a, a)] = 1.0;
            } else {
                basis[(a, b)] = inv_root2;
                basis[(b, a)] = inv_root2;
            }
            let mut image = DMatrix::<f64>::zeros(q, q);
            for bj in &b_ops {
                image += bj * &basis * bj.transpose();
            }
            op.set_column(col_idx, &vech_scaled(&image));
            col_idx += 1;
        }
    }
    let target = vech_scaled(&scatter);
    let op_svd = CompactSvd::new(&op)?;
    let sigma_least_norm = op_svd.rank < vech_len;
    let solution = op_svd.min_norm_solve(&target);
    let sigma_hat = psd_project(&unvech_scaled(&solution, q));

    Ok(CombineResult {
        estimate,
        sigma_hat,
        m,
        sigma_least_norm,
        diffuse,
    })
}

/// Pool per-parent covariance estimates into the level estimate, weighting
/// each parent by its child count.
pub fn pool_level_covariance(
    level: usize,
    per_parent: &[(DMatrix<f64>, usize)],
) -> Result<LevelCovariance> {
    if per_parent.is_empty() {
        return Err(Error::Fit(format!(
            "level {level}: no covariance estimates to pool"
        )));
    }
    let q = per_parent[0].0.nrows();
    let mut total = 0.0;
    let mut acc = DMatrix::<f64>::zeros(q, q);
    for (sigma, m) in per_parent {
        let w = *m as f64;
        acc += sigma * w;
        total += w;
    }
    acc /= total;
    let averaged = symmetrize(&acc);
    let pre_clip_min_eigenvalue = min_eigenvalue(&averaged);
    Ok(LevelCovariance {
        level,
        sigma_bar: psd_project(&averaged),
        contributing_weight: total,
        pre_clip_min_eigenvalue,
    })
}

/// Everything one bottom-up pass produces: estimates for all nodes, pooled
/// level covariances, and the per-parent covariance records.
type PassOutput = (
    BTreeMap<NodeId, NodeEstimate>,
    Vec<LevelCovariance>,
    Vec<SigmaHatRecord>,
);

/// One full bottom-up pass over the tree with fixed per-level weights.
/// `pilots[l-1]`, when given, activates semi-weighting at level `l`.
fn combine_pass(
    leaf_estimates: &BTreeMap<NodeId, NodeEstimate>,
    spec: &HierarchySpec,
    pilots: Option<&[DMatrix<f64>]>,
    warnings: &mut Vec<String>,
) -> Result<PassOutput> {
    let d = spec.depth;
    let mut estimates: BTreeMap<NodeId, NodeEstimate> = leaf_estimates.clone();
    let mut level_covs: Vec<LevelCovariance> = Vec::with_capacity(d);
    let mut sigma_hats: Vec<SigmaHatRecord> = Vec::new();

    for l in (1..=d).rev() {
        let parent_dim = spec.cumulative_dim(l - 1);
        let child_dim = spec.feature_dims[l];
        let mut per_parent: Vec<(DMatrix<f64>, usize)> = Vec::new();
        for parent in &spec.level_sets[l - 1] {
            let m = spec.num_children(parent);
            let mut children: Vec<&NodeEstimate> = Vec::with_capacity(m as usize);
            for j in 1..=m {
                let child = parent.child(j);
                children.push(estimates.get(&child).ok_or_else(|| {
                    Error::Internal(format!("missing estimate for node {child}"))
                })?);
            }
            let level_weights = match pilots {
                Some(p) => LevelWeights::SemiWeighted(&p[l - 1]),
                None => LevelWeights::Identity,
            };
            let (weights, stabilized) =
                choose_weights(&children, parent_dim, child_dim, level_weights)?;
            if stabilized {
                warnings.push(format!(
                    "node {parent}: singular weight candidate, ridge-stabilized inverse used"
                ));
            }
            let combined = combine_children(parent, &children, &weights, parent_dim, child_dim)
                .map_err(|e| e.at_node(parent))?;
            if combined.diffuse {
                warnings.push(format!(
                    "node {parent}: children carry no information, diffuse estimate emitted"
                ));
            }
            if combined.sigma_least_norm {
                warnings.push(format!(
                    "node {parent}: covariance matching system singular at level {l}, least-norm solution used"
                ));
            }
            per_parent.push((combined.sigma_hat.clone(), combined.m));
            sigma_hats.push(SigmaHatRecord {
                parent: parent.clone(),
                level: l,
                sigma_hat: combined.sigma_hat,
            });
            estimates.insert(parent.clone(), combined.estimate);
        }
        level_covs.push(pool_level_covariance(l, &per_parent)?);
    }
    level_covs.reverse(); // index 0 = level 1
    Ok((estimates, level_covs, sigma_hats))
}

/// Fit the hierarchical model: leaf estimation, then the recursive moment
/// combination, with the weight scheme applied as configured.
pub fn fit(
    blocks: &[LeafBlock],
    spec: &HierarchySpec,
    family: Family,
    scheme: WeightScheme,
) -> Result<FittedModel> {
    fit_with(
        blocks,
        spec,
        family,
        &FitOptions {
            scheme,
            ..FitOptions::default()
        },
    )
}

pub fn fit_with(
    blocks: &[LeafBlock],
    spec: &HierarchySpec,
    family: Family,
    options: &FitOptions,
) -> Result<FittedModel> {
    spec.validate()?;
    options.scheme.validate(spec)?;
    let d = spec.depth;
    let p_leaf = spec.leaf_dim();
    let mut warnings = Vec::new();

    // Index blocks by leaf and demand exactly the spec's leaves.
    let mut by_leaf: BTreeMap<&NodeId, &LeafBlock> = BTreeMap::new();
    for block in blocks {
        if block.leaf.depth() != d {
            return Err(Error::Data(format!(
                "block for node {} is not at leaf depth {d}",
                block.leaf
            )));
        }
        if block.x.ncols() != p_leaf {
            return Err(Error::Data(format!(
                "leaf {}: feature matrix has {} columns, expected {p_leaf}",
                block.leaf,
                block.x.ncols()
            )));
        }
        if by_leaf.insert(&block.leaf, block).is_some() {
            return Err(Error::Data(format!(
                "duplicate block for leaf {}",
                block.leaf
            )));
        }
    }
    let leaves = &spec.level_sets[d];
    let mut ordered: Vec<&LeafBlock> = Vec::with_capacity(leaves.len());
    for leaf in leaves {
        ordered.push(
            by_leaf
                .remove(leaf)
                .ok_or_else(|| Error::Data(format!("no block for leaf {leaf}")))?,
        );
    }
    if let Some((extra, _)) = by_leaf.into_iter().next() {
        return Err(Error::Data(format!("block for unknown leaf {extra}")));
    }

    // Step 1: per-leaf estimates. Pure per-leaf work, so parallelism cannot
    // change the merged result.
    let fit_one = |block: &LeafBlock| -> Result<(NodeEstimate, f64, usize)> {
        match family {
            Family::Gaussian => fit_leaf_gaussian(block),
            Family::Logistic => {
                let est = fit_leaf_logistic_firth_with(block, &options.firth)?;
                Ok((est, 0.0, 0))
            }
        }
    };
    let leaf_results: Vec<Result<(NodeEstimate, f64, usize)>> = if options.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| Error::Internal(format!("worker pool: {e}")))?;
        pool.install(|| ordered.par_iter().map(|b| fit_one(b)).collect())
    } else {
        ordered.iter().map(|b| fit_one(b)).collect()
    };

    let mut leaf_estimates: BTreeMap<NodeId, NodeEstimate> = BTreeMap::new();
    let mut dispersion = DispersionAccumulator::default();
    for result in leaf_results {
        let (est, phi_hat, dof) = result?;
        dispersion.add(phi_hat, dof);
        leaf_estimates.insert(est.node.clone(), est);
    }

    // Dispersion pooling and the deferred precision rescaling of the leaves.
    let phi_bar = match family {
        Family::Gaussian => dispersion.pooled()?,
        Family::Logistic => 1.0,
    };
    if family == Family::Gaussian {
        let phi_eff = phi_bar.max(PHI_FLOOR);
        if phi_bar < PHI_FLOOR {
            warnings.push(format!(
                "pooled dispersion {phi_bar:.3e} floored at {PHI_FLOOR:.0e} for precision scaling"
            ));
        }
        let scale = phi_eff.sqrt().recip();
        for est in leaf_estimates.values_mut() {
            est.d *= scale;
        }
    }

    let explicit_pilot = match &options.scheme {
        WeightScheme::SemiWeighted { pilot: Some(p) } => Some(p.clone()),
        _ => None,
    };
    let (estimates, level_covs, sigma_hats) = match (&options.scheme, explicit_pilot) {
        (WeightScheme::Identity, _) => combine_pass(&leaf_estimates, spec, None, &mut warnings)?,
        (WeightScheme::SemiWeighted { .. }, Some(pilot)) => {
            combine_pass(&leaf_estimates, spec, Some(&pilot), &mut warnings)?
        }
        (WeightScheme::SemiWeighted { .. }, None) => {
            // Two-pass scheme: the identity pass supplies the pilots.
            let (_, pilot_covs, _) = combine_pass(&leaf_estimates, spec, None, &mut warnings)?;
            let pilots: Vec<DMatrix<f64>> = pilot_covs.into_iter().map(|c| c.sigma_bar).collect();
            combine_pass(&leaf_estimates, spec, Some(&pilots), &mut warnings)?
        }
    };

    let root = NodeId::root();
    let beta_bar = estimates
        .get(&root)
        .ok_or_else(|| Error::Internal("no root estimate".into()))?
        .b_hat
        .clone();

    // Observation counts per node, summed up the tree.
    let mut counts: BTreeMap<NodeId, usize> = BTreeMap::new();
    for block in &ordered {
        for k in 0..=d {
            let anc = block.leaf.ancestor(k)?;
            *counts.entry(anc).or_insert(0) += block.n();
        }
    }

    Ok(FittedModel {
        family,
        beta_bar,
        sigma_bars: level_covs.iter().map(|c| c.sigma_bar.clone()).collect(),
        level_covariances: level_covs,
        sigma_hats,
        phi_bar,
        node_estimates: estimates,
        counts,
        spec: spec.clone(),
        warnings,
        refined: None,
    })
}
