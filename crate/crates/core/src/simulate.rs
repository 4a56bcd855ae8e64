//! Seeded synthetic data generation for the two-level benchmark setup, plus
//! loss evaluation against the generating truth.
//!
//! One replicate draws model parameters (t-distributed fixed effects,
//! inverse-Wishart level covariances), allocates samples to a skewed
//! two-level tree through Pareto-weighted multinomials, draws per-node
//! Gaussian random effects and sign-flip predictors, and emits responses
//! from the requested family. Everything is driven by one counter-based
//! generator seeded per replicate stream, so a `(config, seed)` pair fully
//! determines the dataset regardless of thread count.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, ChiSquared, Distribution, Pareto, StandardNormal};

use crate::ebayes::RefinedEstimates;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::hierarchy::{build_hierarchy, HierarchyBuild, NodeId};
use crate::leaf_fit::LeafBlock;
use crate::moment_fit::FittedModel;
use crate::predict::{
    covariance_loss, fixed_effect_loss, misclassification, prediction_loss, random_effect_loss,
    EvalReport,
};

/// Generator configuration for one replicate.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    /// Number of level-1 groups.
    pub groups: usize,
    /// Number of level-2 leaves.
    pub leaves: usize,
    pub q0: usize,
    pub q1: usize,
    pub q2: usize,
    pub family: Family,
    pub seed: u64,
    /// Replicate index; selects an independent generator stream.
    pub replicate: u64,
    pub t_dof: f64,
    pub wishart_dof: f64,
    pub wishart_scale: f64,
    pub pareto_scale: f64,
    pub pareto_shape: f64,
    /// Gaussian response noise variance.
    pub phi: f64,
}

impl SimConfig {
    /// The benchmark configuration: 50 groups, 500 leaves, all feature
    /// dimensions 5.
    pub fn benchmark(family: Family, n: usize, seed: u64) -> SimConfig {
        SimConfig {
            n,
            groups: 50,
            leaves: 500,
            q0: 5,
            q1: 5,
            q2: 5,
            family,
            seed,
            replicate: 0,
            t_dof: 4.0,
            wishart_dof: 10.0,
            wishart_scale: 0.1,
            pareto_scale: 1.0,
            pareto_shape: 1.0,
            phi: 1.0,
        }
    }

    pub fn with_replicate(mut self, replicate: u64) -> SimConfig {
        self.replicate = replicate;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n < 1 || self.groups < 1 || self.leaves < self.groups {
            return Err(Error::Usage("need n >= 1 and leaves >= groups >= 1".into()));
        }
        if self.q0 < 1 || self.q1 < 1 || self.q2 < 1 {
            return Err(Error::Usage("feature dimensions must be at least 1".into()));
        }
        let qmax = self.q1.max(self.q2) as f64;
        if self.wishart_dof < qmax {
            return Err(Error::Usage(format!(
                "wishart dof {} below dimension {qmax}",
                self.wishart_dof
            )));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.replicate);
        rng
    }
}

/// True parameters of one replicate.
#[derive(Debug, Clone)]
pub struct SimParameters {
    pub beta: DVector<f64>,
    pub sigma1: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
    /// Gaussian response noise variance used by the generator.
    pub phi: f64,
}

/// Sample-to-leaf and leaf-to-group assignment.
#[derive(Debug, Clone)]
pub struct Allocation {
    /// Group index of each leaf (generated indices, before empty pruning).
    pub group_of_leaf: Vec<usize>,
    /// Sample count of each leaf; sums to `n`.
    pub samples_per_leaf: Vec<usize>,
}

/// One generated dataset with its truth.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub blocks: Vec<LeafBlock>,
    /// True response means per block, aligned with `blocks` rows.
    pub mu: Vec<DVector<f64>>,
    pub build: HierarchyBuild,
    pub params: SimParameters,
    /// True random effects by generated group / leaf index.
    pub u_groups: Vec<DVector<f64>>,
    pub u_leaves: Vec<DVector<f64>>,
    /// Fitted-tree node of each nonempty generated group / leaf.
    pub node_of_group: BTreeMap<usize, NodeId>,
    pub node_of_leaf: BTreeMap<usize, NodeId>,
    pub group_of_leaf: Vec<usize>,
    /// Generated nodes that received no samples and were dropped from the
    /// fitted hierarchy.
    pub empty_groups: usize,
    pub empty_leaves: usize,
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Student t via a normal over the square root of a scaled chi-squared.
fn student_t(rng: &mut ChaCha8Rng, dof: f64) -> f64 {
    let chi = ChiSquared::new(dof).expect("positive dof");
    let z: f64 = standard_normal(rng);
    z / (chi.sample(rng) / dof).sqrt()
}

/// Inverse-Wishart draw with identity shape via the Bartlett decomposition:
/// build the lower-triangular Wishart factor, invert it, and scale.
fn inverse_wishart_identity(rng: &mut ChaCha8Rng, q: usize, dof: f64, scale: f64) -> DMatrix<f64> {
    let mut a = DMatrix::<f64>::zeros(q, q);
    for i in 0..q {
        let chi = ChiSquared::new(dof - i as f64).expect("dof above dimension");
        a[(i, i)] = chi.sample(rng).max(f64::MIN_POSITIVE).sqrt();
        for j in 0..i {
            a[(i, j)] = standard_normal(rng);
        }
    }
    // W = A A^T ~ Wishart(I, dof); the draw is scale * W^{-1} = scale * A^{-T} A^{-1}
    let a_inv = a
        .solve_lower_triangular(&DMatrix::<f64>::identity(q, q))
        .expect("triangular factor invertible");
    let draw = a_inv.transpose() * a_inv * scale;
    crate::linalg::symmetrize(&draw)
}

/// Draw the fixed effects and the two level covariances.
pub fn draw_parameters(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> SimParameters {
    let beta = DVector::from_fn(cfg.q0, |_, _| student_t(rng, cfg.t_dof));
    let sigma1 = inverse_wishart_identity(rng, cfg.q1, cfg.wishart_dof, cfg.wishart_scale);
    let sigma2 = inverse_wishart_identity(rng, cfg.q2, cfg.wishart_dof, cfg.wishart_scale);
    SimParameters {
        beta,
        sigma1,
        sigma2,
        phi: cfg.phi,
    }
}

/// Multinomial draw by conditional binomials.
fn multinomial(rng: &mut ChaCha8Rng, n: usize, rates: &[f64]) -> Vec<usize> {
    let mut counts = vec![0usize; rates.len()];
    let mut remaining = n as u64;
    let mut tail: f64 = rates.iter().sum();
    for (k, &rate) in rates.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k == rates.len() - 1 {
            counts[k] = remaining as usize;
            break;
        }
        let p = (rate / tail).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, p)
            .expect("valid binomial")
            .sample(rng);
        counts[k] = draw as usize;
        remaining -= draw;
        tail -= rate;
        if tail <= 0.0 {
            break;
        }
    }
    counts
}

/// Pareto-weighted allocation of samples to leaves and leaves to groups.
pub fn allocate(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Allocation {
    let pareto = Pareto::new(cfg.pareto_scale, cfg.pareto_shape).expect("valid pareto");
    let leaf_rates: Vec<f64> = (0..cfg.leaves).map(|_| pareto.sample(rng)).collect();
    let samples_per_leaf = multinomial(rng, cfg.n, &leaf_rates);

    let group_rates: Vec<f64> = (0..cfg.groups).map(|_| pareto.sample(rng)).collect();
    let leaves_per_group = multinomial(rng, cfg.leaves, &group_rates);
    let mut group_of_leaf = Vec::with_capacity(cfg.leaves);
    for (g, &count) in leaves_per_group.iter().enumerate() {
        for _ in 0..count {
            group_of_leaf.push(g);
        }
    }
    Allocation {
        group_of_leaf,
        samples_per_leaf,
    }
}

fn gaussian_effect(rng: &mut ChaCha8Rng, sigma: &DMatrix<f64>) -> DVector<f64> {
    let q = sigma.nrows();
    let z = DVector::from_fn(q, |_, _| standard_normal(rng));
    match sigma.clone().cholesky() {
        Some(chol) => chol.l() * z,
        None => {
            // PSD fallback through the eigendecomposition
            let (vals, vecs) = crate::linalg::sym_eig(sigma);
            let mut w = vecs.transpose() * z;
            for k in 0..q {
                w[k] *= vals[k].max(0.0).sqrt();
            }
            &vecs * w
        }
    }
}

fn rademacher(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Draw random effects, predictors, and responses for a fixed allocation.
/// The two levels share the random-effect predictor draws.
pub fn draw_effects_and_responses(
    cfg: &SimConfig,
    params: &SimParameters,
    allocation: &Allocation,
    rng: &mut ChaCha8Rng,
) -> Result<SimDataset> {
    let u_groups: Vec<DVector<f64>> = (0..cfg.groups)
        .map(|_| gaussian_effect(rng, &params.sigma1))
        .collect();
    let u_leaves: Vec<DVector<f64>> = (0..cfg.leaves)
        .map(|_| gaussian_effect(rng, &params.sigma2))
        .collect();

    let q_shared = cfg.q1.max(cfg.q2);
    let p_leaf = cfg.q0 + cfg.q1 + cfg.q2;
    let mut label_rows: Vec<Vec<String>> = Vec::with_capacity(cfg.n);
    let mut x_rows: Vec<Vec<f64>> = Vec::with_capacity(cfg.n);
    let mut mu_rows: Vec<f64> = Vec::with_capacity(cfg.n);
    let mut y_rows: Vec<f64> = Vec::with_capacity(cfg.n);

    for (leaf_idx, &count) in allocation.samples_per_leaf.iter().enumerate() {
        let group_idx = allocation.group_of_leaf[leaf_idx];
        let u_g = &u_groups[group_idx];
        let u_l = &u_leaves[leaf_idx];
        for _ in 0..count {
            let x: Vec<f64> = (0..cfg.q0).map(|_| rademacher(rng)).collect();
            let z: Vec<f64> = (0..q_shared).map(|_| rademacher(rng)).collect();
            let mut eta = 0.0;
            for (k, xv) in x.iter().enumerate() {
                eta += params.beta[k] * xv;
            }
            for k in 0..cfg.q1 {
                eta += z[k] * u_g[k];
            }
            for k in 0..cfg.q2 {
                eta += z[k] * u_l[k];
            }
            let (mu, y) = match cfg.family {
                Family::Logistic => {
                    let mu = crate::family::logistic(eta);
                    let y = if rng.random::<f64>() < mu { 1.0 } else { 0.0 };
                    (mu, y)
                }
                Family::Gaussian => {
                    let y = eta + cfg.phi.sqrt() * standard_normal(rng);
                    (eta, y)
                }
            };
            label_rows.push(vec![format!("g{group_idx}"), format!("l{leaf_idx}")]);
            let mut feats = Vec::with_capacity(p_leaf);
            feats.extend_from_slice(&x);
            feats.extend_from_slice(&z[..cfg.q1]);
            feats.extend_from_slice(&z[..cfg.q2]);
            x_rows.push(feats);
            mu_rows.push(mu);
            y_rows.push(y);
        }
    }

    let build = build_hierarchy(&label_rows, &[cfg.q0, cfg.q1, cfg.q2], false)?;

    // Assemble blocks in leaf order; rows were generated leaf-major so each
    // leaf's rows are contiguous.
    let mut rows_by_leaf: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    for (row, leaf) in build.leaf_of_row.iter().enumerate() {
        rows_by_leaf.entry(leaf.clone()).or_default().push(row);
    }
    let mut blocks = Vec::with_capacity(rows_by_leaf.len());
    let mut mu = Vec::with_capacity(rows_by_leaf.len());
    for (leaf, rows) in &rows_by_leaf {
        let x = DMatrix::from_fn(rows.len(), p_leaf, |r, c| x_rows[rows[r]][c]);
        let y = DVector::from_fn(rows.len(), |r, _| y_rows[rows[r]]);
        mu.push(DVector::from_fn(rows.len(), |r, _| mu_rows[rows[r]]));
        blocks.push(LeafBlock::new(leaf.clone(), x, y)?);
    }

    // Map generated indices onto fitted nodes through the label dictionary.
    let mut node_of_group = BTreeMap::new();
    let mut node_of_leaf = BTreeMap::new();
    for (leaf_idx, &count) in allocation.samples_per_leaf.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let group_idx = allocation.group_of_leaf[leaf_idx];
        let g_label = format!("g{group_idx}");
        let l_label = format!("l{leaf_idx}");
        let node = build.resolve(&[&g_label, &l_label]);
        node_of_group.insert(group_idx, node.ancestor(1)?);
        node_of_leaf.insert(leaf_idx, node);
    }
    let empty_leaves = cfg.leaves - node_of_leaf.len();
    let empty_groups = cfg.groups - node_of_group.len();

    Ok(SimDataset {
        blocks,
        mu,
        build,
        params: params.clone(),
        u_groups,
        u_leaves,
        node_of_group,
        node_of_leaf,
        group_of_leaf: allocation.group_of_leaf.clone(),
        empty_groups,
        empty_leaves,
    })
}

/// Generate one replicate end to end.
pub fn generate(cfg: &SimConfig) -> Result<SimDataset> {
    cfg.validate()?;
    let mut rng = cfg.rng();
    let params = draw_parameters(cfg, &mut rng);
    let allocation = allocate(cfg, &mut rng);
    draw_effects_and_responses(cfg, &params, &allocation, &mut rng)
}

/// Score a fitted and refined model against the generating truth: the four
/// benchmark losses plus misclassification for the logistic family.
pub fn evaluate_against_truth(
    dataset: &SimDataset,
    model: &FittedModel,
    refined: &RefinedEstimates,
) -> Result<EvalReport> {
    let cfg_q0 = dataset.params.beta.len();
    let q1 = dataset.params.sigma1.nrows();
    let q2 = dataset.params.sigma2.nrows();

    let fixed = fixed_effect_loss(&dataset.params.beta, &model.beta_bar);
    let cov = vec![
        covariance_loss(&dataset.params.sigma1, model.sigma_bar(1))?,
        covariance_loss(&dataset.params.sigma2, model.sigma_bar(2))?,
    ];

    let pairs1: Vec<(DVector<f64>, DVector<f64>)> = dataset
        .u_groups
        .iter()
        .enumerate()
        .map(|(g, u)| {
            let u_hat = dataset
                .node_of_group
                .get(&g)
                .map(|node| refined.u_or_zero(node, q1))
                .unwrap_or_else(|| DVector::zeros(q1));
            (u.clone(), u_hat)
        })
        .collect();
    let pairs2: Vec<(DVector<f64>, DVector<f64>)> = dataset
        .u_leaves
        .iter()
        .enumerate()
        .map(|(l, u)| {
            let u_hat = dataset
                .node_of_leaf
                .get(&l)
                .map(|node| refined.u_or_zero(node, q2))
                .unwrap_or_else(|| DVector::zeros(q2));
            (u.clone(), u_hat)
        })
        .collect();
    let ranef = vec![
        random_effect_loss(&dataset.params.sigma1, &pairs1)?,
        random_effect_loss(&dataset.params.sigma2, &pairs2)?,
    ];

    // Estimated means from the refined path effects.
    let mut true_mu = Vec::new();
    let mut est_mu = Vec::new();
    let mut labels = Vec::new();
    for (block, mu_block) in dataset.blocks.iter().zip(&dataset.mu) {
        let group = block.leaf.ancestor(1)?;
        let u_g = refined.u_or_zero(&group, q1);
        let u_l = refined.u_or_zero(&block.leaf, q2);
        for r in 0..block.n() {
            let mut eta = 0.0;
            for k in 0..cfg_q0 {
                eta += model.beta_bar[k] * block.x[(r, k)];
            }
            for k in 0..q1 {
                eta += block.x[(r, cfg_q0 + k)] * u_g[k];
            }
            for k in 0..q2 {
                eta += block.x[(r, cfg_q0 + q1 + k)] * u_l[k];
            }
            true_mu.push(mu_block[r]);
            est_mu.push(model.family.mean(eta));
            labels.push(block.y[r]);
        }
    }
    let (pred, clamped) =
        prediction_loss(&true_mu, &est_mu, model.family, dataset.params.phi.max(1e-300))?;

    let miscls = match model.family {
        Family::Logistic => Some(misclassification(&est_mu, &labels, 0.5)?),
        Family::Gaussian => None,
    };

    Ok(EvalReport {
        fixed_effect_loss: Some(fixed),
        covariance_loss: cov,
        random_effect_loss: ranef,
        prediction_loss: Some(pred),
        misclassification: miscls,
        clamped_predictions: clamped,
        wall_clock_seconds: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(family: Family, seed: u64) -> SimConfig {
        SimConfig {
            n: 400,
            groups: 5,
            leaves: 20,
            q0: 2,
            q1: 2,
            q2: 2,
            family,
            seed,
            replicate: 0,
            t_dof: 4.0,
            wishart_dof: 10.0,
            wishart_scale: 0.1,
            pareto_scale: 1.0,
            pareto_shape: 1.0,
            phi: 1.0,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg(Family::Logistic, 42);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.blocks.len(), b.blocks.len());
        for (ba, bb) in a.blocks.iter().zip(&b.blocks) {
            assert_eq!(ba.leaf, bb.leaf);
            assert_eq!(ba.x, bb.x);
            assert_eq!(ba.y, bb.y);
        }
        assert_eq!(a.params.beta, b.params.beta);
        // a different replicate stream draws different data
        let c = generate(&cfg.clone().with_replicate(1)).unwrap();
        assert!(c.params.beta != a.params.beta);
    }

    #[test]
    fn t_draws_have_heavy_tailed_variance_near_two() {
        let cfg = small_cfg(Family::Gaussian, 7);
        let mut rng = cfg.rng();
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|_| student_t(&mut rng, 4.0)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 2.0).abs() < 0.2, "sample variance {var}");
    }

    #[test]
    fn covariance_draws_are_positive_definite() {
        let cfg = small_cfg(Family::Gaussian, 11);
        let mut rng = cfg.rng();
        for _ in 0..50 {
            let sigma = inverse_wishart_identity(&mut rng, 5, 10.0, 0.1);
            assert!((&sigma - sigma.transpose()).amax() < 1e-12);
            assert!(sigma.clone().cholesky().is_some());
        }
    }

    #[test]
    fn inverse_wishart_mean_matches_theory() {
        // E[scale * W^{-1}] = scale * I / (dof - q - 1)
        let cfg = small_cfg(Family::Gaussian, 13);
        let mut rng = cfg.rng();
        let q = 3;
        let reps = 4000;
        let mut mean = DMatrix::<f64>::zeros(q, q);
        for _ in 0..reps {
            mean += inverse_wishart_identity(&mut rng, q, 10.0, 0.1);
        }
        mean /= reps as f64;
        let expected = 0.1 / (10.0 - q as f64 - 1.0);
        for i in 0..q {
            assert!((mean[(i, i)] - expected).abs() < 0.15 * expected);
            for j in 0..i {
                assert!(mean[(i, j)].abs() < 0.15 * expected);
            }
        }
    }

    #[test]
    fn allocation_counts_sum_to_n() {
        let cfg = small_cfg(Family::Gaussian, 17);
        let mut rng = cfg.rng();
        let alloc = allocate(&cfg, &mut rng);
        assert_eq!(alloc.samples_per_leaf.iter().sum::<usize>(), cfg.n);
        assert_eq!(alloc.group_of_leaf.len(), cfg.leaves);
        assert!(alloc.group_of_leaf.iter().all(|&g| g < cfg.groups));
    }

    #[test]
    fn single_leaf_takes_all_samples() {
        let mut cfg = small_cfg(Family::Gaussian, 19);
        cfg.leaves = 1;
        cfg.groups = 1;
        let mut rng = cfg.rng();
        let alloc = allocate(&cfg, &mut rng);
        assert_eq!(alloc.samples_per_leaf, vec![cfg.n]);
    }

    #[test]
    fn pareto_allocation_is_heavily_skewed() {
        // median over seeds of the max leaf share is far above uniform
        let mut shares = Vec::new();
        for seed in 0..11 {
            let cfg = SimConfig {
                leaves: 500,
                groups: 50,
                n: 10_000,
                ..small_cfg(Family::Gaussian, 100 + seed)
            };
            let mut rng = cfg.rng();
            let alloc = allocate(&cfg, &mut rng);
            let max = *alloc.samples_per_leaf.iter().max().unwrap();
            shares.push(max as f64 / cfg.n as f64);
        }
        shares.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = shares[shares.len() / 2];
        assert!(median > 5.0 / 500.0, "median max share {median}");
    }

    #[test]
    fn zero_parameters_give_half_probabilities() {
        let cfg = small_cfg(Family::Logistic, 23);
        let mut rng = cfg.rng();
        let params = SimParameters {
            beta: DVector::zeros(cfg.q0),
            sigma1: DMatrix::zeros(cfg.q1, cfg.q1),
            sigma2: DMatrix::zeros(cfg.q2, cfg.q2),
            phi: cfg.phi,
        };
        let allocation = allocate(&cfg, &mut rng);
        let ds = draw_effects_and_responses(&cfg, &params, &allocation, &mut rng).unwrap();
        for mu_block in &ds.mu {
            assert!(mu_block.iter().all(|&m| m == 0.5));
        }
    }

    #[test]
    fn zero_noise_gaussian_reproduces_means() {
        let mut cfg = small_cfg(Family::Gaussian, 29);
        cfg.phi = 0.0;
        let ds = generate(&cfg).unwrap();
        for (block, mu_block) in ds.blocks.iter().zip(&ds.mu) {
            assert!((&block.y - mu_block).amax() == 0.0);
        }
    }

    #[test]
    fn leaf_response_mean_approaches_leaf_mu() {
        let mut cfg = small_cfg(Family::Logistic, 31);
        cfg.n = 20_000;
        cfg.leaves = 4;
        cfg.groups = 2;
        let ds = generate(&cfg).unwrap();
        let (largest, mu_block) = ds
            .blocks
            .iter()
            .zip(&ds.mu)
            .max_by_key(|(b, _)| b.n())
            .unwrap();
        let n = largest.n();
        assert!(n > 1000);
        let y_mean = largest.y.sum() / n as f64;
        let mu_mean = mu_block.sum() / n as f64;
        // binomial noise around the mean of the leaf's probabilities
        let se = (0.25 / n as f64).sqrt();
        assert!((y_mean - mu_mean).abs() < 4.0 * se);
    }

    #[test]
    fn empty_leaves_are_dropped_and_counted() {
        let mut cfg = small_cfg(Family::Gaussian, 37);
        cfg.n = 30; // far fewer samples than leaves
        cfg.leaves = 200;
        cfg.groups = 10;
        let ds = generate(&cfg).unwrap();
        assert!(ds.empty_leaves > 0);
        assert_eq!(ds.node_of_leaf.len() + ds.empty_leaves, cfg.leaves);
        assert_eq!(ds.blocks.len(), ds.node_of_leaf.len());
        let total: usize = ds.blocks.iter().map(|b| b.n()).sum();
        assert_eq!(total, cfg.n);
    }

    #[test]
    fn shared_predictors_between_levels() {
        let cfg = small_cfg(Family::Gaussian, 41);
        let ds = generate(&cfg).unwrap();
        for block in &ds.blocks {
            let z1 = block.x.columns(cfg.q0, cfg.q1);
            let z2 = block.x.columns(cfg.q0 + cfg.q1, cfg.q2);
            assert_eq!(z1, z2);
        }
    }
}
