//! Per-leaf estimation with factored precision summaries.
//!
//! Each leaf fit produces an effect estimate together with a matrix
//! `Z = diag(D) V^T` of full row rank such that, conditional on the true
//! effect vector `b`, `Z (b_hat - b)` is approximately standard normal. The
//! factored `(V, D)` form survives rank deficiency: `V` has orthonormal
//! columns spanning the identified subspace and `Z^T Z` equals the
//! information matrix of the estimate restricted to that subspace.
//!
//! For the Gaussian family the emitted scales are the raw singular values of
//! the design matrix; the caller rescales them by `phi_bar^{-1/2}` once the
//! dispersion has been pooled across leaves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::{log1p_exp, logistic};
use crate::hierarchy::NodeId;
use crate::linalg::{sym_eig, CompactSvd};

/// Observations of one leaf: a response vector and the stacked feature matrix
/// `[X_0 X_1 ... X_d]` whose column blocks follow the level feature widths.
#[derive(Debug, Clone)]
pub struct LeafBlock {
    pub leaf: NodeId,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
}

impl LeafBlock {
    pub fn new(leaf: NodeId, x: DMatrix<f64>, y: DVector<f64>) -> Result<LeafBlock> {
        if y.is_empty() {
            return Err(Error::Data(format!("leaf {leaf}: empty response vector")));
        }
        if x.nrows() != y.len() {
            return Err(Error::Data(format!(
                "leaf {leaf}: {} feature rows vs {} responses",
                x.nrows(),
                y.len()
            )));
        }
        Ok(LeafBlock { leaf, y, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// Preliminary estimate at a node: the effect vector along the root path and
/// the factored precision summary `Z = diag(D) V^T`.
#[derive(Debug, Clone)]
pub struct NodeEstimate {
    pub node: NodeId,
    /// Estimated effects on the root-to-node path, length p.
    pub b_hat: DVector<f64>,
    /// p x r with orthonormal columns.
    pub v: DMatrix<f64>,
    /// r positive scales; `Z^T Z = V diag(D^2) V^T`.
    pub d: DVector<f64>,
    pub rank: usize,
}

impl NodeEstimate {
    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    /// Materialize `Z = diag(D) V^T` (r x p).
    pub fn z(&self) -> DMatrix<f64> {
        let mut z = self.v.transpose();
        for k in 0..self.rank {
            let mut row = z.row_mut(k);
            row *= self.d[k];
        }
        z
    }

    /// `Z b_hat`, the observation vector of the node in precision
    /// coordinates.
    pub fn z_b_hat(&self) -> DVector<f64> {
        let mut out = self.v.transpose() * &self.b_hat;
        for k in 0..self.rank {
            out[k] *= self.d[k];
        }
        out
    }

    /// A rank-zero placeholder carrying no information.
    pub fn diffuse(node: NodeId, dim: usize) -> NodeEstimate {
        NodeEstimate {
            node,
            b_hat: DVector::zeros(dim),
            v: DMatrix::zeros(dim, 0),
            d: DVector::zeros(0),
            rank: 0,
        }
    }
}

/// Running weighted sum for pooling the Gaussian dispersion across leaves.
#[derive(Debug, Clone, Default)]
pub struct DispersionAccumulator {
    pub weighted_sum: f64,
    pub dof: usize,
}

impl DispersionAccumulator {
    pub fn add(&mut self, phi_hat: f64, dof: usize) {
        self.weighted_sum += dof as f64 * phi_hat;
        self.dof += dof;
    }

    pub fn pooled(&self) -> Result<f64> {
        if self.dof == 0 {
            return Err(Error::Fit(
                "dispersion unidentifiable: every leaf is saturated".into(),
            ));
        }
        Ok(self.weighted_sum / self.dof as f64)
    }
}

/// Pool per-leaf dispersion estimates weighted by residual degrees of
/// freedom. Errors when no leaf has residual degrees of freedom.
pub fn pool_dispersion(per_leaf: &[(f64, usize)]) -> Result<f64> {
    let mut acc = DispersionAccumulator::default();
    for &(phi_hat, dof) in per_leaf {
        acc.add(phi_hat, dof);
    }
    acc.pooled()
}

/// Minimum-norm least squares at one leaf. Returns the estimate with its
/// unscaled precision factor plus the leaf's dispersion estimate and residual
/// degrees of freedom.
pub fn fit_leaf_gaussian(block: &LeafBlock) -> Result<(NodeEstimate, f64, usize)> {
    if block.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "leaf {}: non-finite response",
            block.leaf
        )));
    }
    let svd = CompactSvd::new(&block.x).map_err(|e| e.at_node(&block.leaf))?;
    let b_hat = svd.min_norm_solve(&block.y);
    let n = block.n();
    let r = svd.rank;
    let resid = &block.y - &block.x * &b_hat;
    let (phi_hat, dof) = if r < n {
        (resid.norm_squared() / (n - r) as f64, n - r)
    } else {
        (0.0, 0)
    };
    let est = NodeEstimate {
        node: block.leaf.clone(),
        b_hat,
        v: svd.v,
        d: svd.singular_values,
        rank: r,
    };
    Ok((est, phi_hat, dof))
}

/// Which information matrix defines the precision summary of a Firth fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FirthInformation {
    /// Unpenalized Fisher information at the estimate.
    #[default]
    Fisher,
    /// Information of the augmented-data likelihood the Jeffreys penalty is
    /// equivalent to: working weights inflated by one plus the leverage.
    Augmented,
}

#[derive(Debug, Clone)]
pub struct FirthOptions {
    /// Convergence tolerance on the gradient max-norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Multiplier on the Jeffreys penalty; 1 is the standard estimator and 0
    /// recovers plain maximum likelihood.
    pub penalty_weight: f64,
    pub information: FirthInformation,
}

impl Default for FirthOptions {
    fn default() -> Self {
        FirthOptions {
            tol: 1e-8,
            max_iter: 25,
            penalty_weight: 1.0,
            information: FirthInformation::Fisher,
        }
    }
}

/// Firth bias-reduced logistic regression at one leaf.
///
/// The penalized likelihood is maximized in the row space of the design
/// matrix: rank-degenerate blocks are solved in the coordinate system of
/// their compact SVD and mapped back, which makes the returned estimate the
/// minimum-norm representative among the maximizers.
pub fn fit_leaf_logistic_firth(
    block: &LeafBlock,
    tol: f64,
    max_iter: usize,
) -> Result<NodeEstimate> {
    fit_leaf_logistic_firth_with(
        block,
        &FirthOptions {
            tol,
            max_iter,
            ..FirthOptions::default()
        },
    )
}

pub fn fit_leaf_logistic_firth_with(
    block: &LeafBlock,
    opts: &FirthOptions,
) -> Result<NodeEstimate> {
    for v in block.y.iter() {
        if *v != 0.0 && *v != 1.0 {
            return Err(Error::Data(format!(
                "leaf {}: logistic response must be 0 or 1, found {v}",
                block.leaf
            )));
        }
    }
    let svd = CompactSvd::new(&block.x).map_err(|e| e.at_node(&block.leaf))?;
    let n = block.n();
    let r = svd.rank;
    let p = block.x.ncols();
    if r == 0 {
        return Ok(NodeEstimate::diffuse(block.leaf.clone(), p));
    }

    // Reduced design: X = U diag(s) V^T, so X b = Xr c with b = V c.
    let mut xr = svd.u.clone();
    for (k, mut col) in xr.column_iter_mut().enumerate() {
        col *= svd.singular_values[k];
    }

    let pw = opts.penalty_weight;
    let mut c = DVector::<f64>::zeros(r);
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut info = DMatrix::<f64>::zeros(r, r);
    let mut weights = DVector::<f64>::zeros(n);
    let mut leverage = DVector::<f64>::zeros(n);
    // Levenberg-style damping engaged when a full or halved step fails to
    // improve the penalized likelihood (ill-conditioned information on
    // nearly separated leaves)
    let mut ridge = 0.0f64;

    let penalized_loglik = |c: &DVector<f64>| -> f64 {
        let eta = &xr * c;
        let mut ll = 0.0;
        for k in 0..n {
            ll += block.y[k] * eta[k] - log1p_exp(eta[k]);
        }
        if pw != 0.0 {
            let mut g = DMatrix::<f64>::zeros(r, r);
            for k in 0..n {
                let mu = logistic(eta[k]);
                let w = mu * (1.0 - mu);
                let row = xr.row(k);
                for a in 0..r {
                    for b in 0..r {
                        g[(a, b)] += w * row[a] * row[b];
                    }
                }
            }
            let (vals, _) = sym_eig(&g);
            let logdet: f64 = vals.iter().map(|&v| v.max(f64::MIN_POSITIVE).ln()).sum();
            ll += 0.5 * pw * logdet;
        }
        ll
    };

    for _ in 0..opts.max_iter {
        let eta = &xr * &c;
        let mut mu = DVector::<f64>::zeros(n);
        for k in 0..n {
            mu[k] = logistic(eta[k]);
            weights[k] = mu[k] * (1.0 - mu[k]);
        }
        // Fisher information in reduced coordinates.
        let mut xw = xr.clone();
        for k in 0..n {
            let mut row = xw.row_mut(k);
            row *= weights[k];
        }
        info = xr.transpose() * &xw;
        // Leverages h_k = w_k x_k^T I^{-1} x_k via M = Xr I^{-1}.
        let (inv, _) = crate::linalg::stabilized_inverse(&info);
        let m = &xr * &inv;
        for k in 0..n {
            leverage[k] = weights[k] * m.row(k).dot(&xr.row(k));
        }
        // Adjusted score: exact gradient of the penalized likelihood.
        let mut working = DVector::<f64>::zeros(n);
        for k in 0..n {
            working[k] = block.y[k] - mu[k] + pw * leverage[k] * (0.5 - mu[k]);
        }
        let score = xr.transpose() * working;
        grad_norm = score.amax();
        if grad_norm < opts.tol {
            converged = true;
            break;
        }
        // On small leaves the penalty's curvature is material and the plain
        // Fisher matrix gives slow linear convergence; use the exact negated
        // Hessian of the penalized likelihood there. Big leaves converge
        // quadratically on Fisher alone.
        let mut step_matrix = if pw != 0.0 && n <= 1024 {
            let mut neg_hess = info.clone();
            // unweighted leverage x_k^T G^{-1} x_k and the w-derivatives
            let mut g_grads: Vec<DMatrix<f64>> = Vec::with_capacity(r);
            for a in 0..r {
                let mut ga = DMatrix::<f64>::zeros(r, r);
                for k in 0..n {
                    let scale = weights[k] * (1.0 - 2.0 * mu[k]) * xr[(k, a)];
                    if scale != 0.0 {
                        let row = xr.row(k);
                        for i in 0..r {
                            for j in 0..r {
                                ga[(i, j)] += scale * row[i] * row[j];
                            }
                        }
                    }
                }
                g_grads.push(&inv * ga);
            }
            for a in 0..r {
                for b in a..r {
                    // second-derivative part through the leverages
                    let mut t2 = 0.0;
                    for k in 0..n {
                        let w_k = weights[k];
                        let w2 = w_k * ((1.0 - 2.0 * mu[k]).powi(2) - 2.0 * w_k);
                        let h_unw = if w_k > 0.0 { leverage[k] / w_k } else { 0.0 };
                        t2 += w2 * xr[(k, a)] * xr[(k, b)] * h_unw;
                    }
                    let t1 = (&g_grads[a] * &g_grads[b]).trace();
                    let dd = 0.5 * pw * (t2 - t1);
                    neg_hess[(a, b)] -= dd;
                    if a != b {
                        neg_hess[(b, a)] -= dd;
                    }
                }
            }
            neg_hess
        } else {
            info.clone()
        };
        if ridge > 0.0 {
            let scale = info.diagonal().amax().max(f64::MIN_POSITIVE);
            for k in 0..r {
                step_matrix[(k, k)] += ridge * scale;
            }
        }
        let (step_inv, _) = crate::linalg::stabilized_inverse(&step_matrix);
        let mut delta = &step_inv * &score;
        // near-null information directions can blow the raw step up by many
        // orders; cap the move so the line search operates at a sane scale
        const MAX_STEP: f64 = 5.0;
        let dmax = delta.amax();
        if dmax > MAX_STEP {
            delta *= MAX_STEP / dmax;
        }
        let current = penalized_loglik(&c);
        // Newton decrement below the objective's floating-point resolution:
        // no representable improvement is left.
        if score.dot(&delta).abs() <= 64.0 * f64::EPSILON * (1.0 + current.abs()) {
            converged = true;
            break;
        }
        // Line search: expand while the objective keeps rising (the Fisher
        // matrix can overestimate the penalized curvature), halve when the
        // full step overshoots, and reject with raised damping otherwise.
        let mut accepted = false;
        let mut improvement = 0.0;
        let full = penalized_loglik(&(&c + &delta));
        if full >= current {
            let mut best_t = 1.0;
            let mut best_v = full;
            let mut t = 2.0;
            for _ in 0..12 {
                let v = penalized_loglik(&(&c + &delta * t));
                if v > best_v {
                    best_v = v;
                    best_t = t;
                    t *= 2.0;
                } else {
                    break;
                }
            }
            improvement = best_v - current;
            c += &delta * best_t;
            accepted = true;
        } else {
            let mut t = 0.5;
            for _ in 0..20 {
                let candidate = &c + &delta * t;
                let value = penalized_loglik(&candidate);
                if value >= current {
                    improvement = value - current;
                    c = candidate;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
        }
        if accepted {
            ridge = if ridge > 1e-10 { ridge * 0.25 } else { 0.0 };
            // progress below the objective's resolution means stationarity
            // at this precision
            if improvement <= 64.0 * f64::EPSILON * (1.0 + current.abs()) {
                converged = true;
                break;
            }
        } else {
            ridge = (ridge * 16.0).max(1e-6);
        }
    }

    if !converged {
        let b = &svd.v * &c;
        return Err(Error::Convergence {
            node: Some(block.leaf.to_string()),
            iterations: opts.max_iter,
            gradient_norm: grad_norm,
            last_iterate: b.iter().cloned().collect(),
        });
    }

    // Precision summary from the chosen information matrix at the estimate.
    if opts.information == FirthInformation::Augmented {
        let mut xw = xr.clone();
        for k in 0..n {
            let mut row = xw.row_mut(k);
            row *= weights[k] * (1.0 + leverage[k]);
        }
        info = xr.transpose() * &xw;
    }
    let (vals, vecs) = sym_eig(&info);
    let lmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..r)
        .filter(|&k| vals[k] > lmax * 1e-12 && vals[k] > 0.0)
        .collect();
    let mut v_out = DMatrix::<f64>::zeros(p, keep.len());
    let mut d_out = DVector::<f64>::zeros(keep.len());
    for (col, &k) in keep.iter().enumerate() {
        let dir = &svd.v * vecs.column(k);
        v_out.set_column(col, &dir);
        d_out[col] = vals[k].sqrt();
    }
    Ok(NodeEstimate {
        node: block.leaf.clone(),
        b_hat: &svd.v * &c,
        v: v_out,
        rank: d_out.len(),
        d: d_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(x: DMatrix<f64>, y: Vec<f64>) -> LeafBlock {
        LeafBlock::new(NodeId(vec![1]), x, DVector::from_vec(y)).unwrap()
    }

    #[test]
    fn gaussian_mean_of_two_points() {
        let b = block(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]), vec![1.0, 3.0]);
        let (est, phi, dof) = fit_leaf_gaussian(&b).unwrap();
        assert!((est.b_hat[0] - 2.0).abs() < 1e-14);
        assert_eq!(est.rank, 1);
        assert_eq!(dof, 1);
        assert!((phi - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_rank_deficient_minimum_norm() {
        let b = block(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            vec![2.0, 2.0],
        );
        let (est, phi, dof) = fit_leaf_gaussian(&b).unwrap();
        assert!((est.b_hat[0] - 1.0).abs() < 1e-12);
        assert!((est.b_hat[1] - 1.0).abs() < 1e-12);
        assert_eq!(est.rank, 1);
        assert_eq!(dof, 1);
        assert!(phi.abs() < 1e-24);
    }

    #[test]
    fn gaussian_matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DMatrix::from_fn(8, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = DVector::from_fn(8, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let b = LeafBlock::new(NodeId(vec![1]), x.clone(), y.clone()).unwrap();
        let (est, _, _) = fit_leaf_gaussian(&b).unwrap();
        let oracle = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &y;
        assert!((est.b_hat - oracle).amax() < 1e-10);
    }

    #[test]
    fn gaussian_residual_orthogonal_to_column_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = 5 + (rng.random::<u32>() % 8) as usize;
            let p = 1 + (rng.random::<u32>() % 4) as usize;
            let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let b = LeafBlock::new(NodeId(vec![1]), x.clone(), y.clone()).unwrap();
            let (est, _, _) = fit_leaf_gaussian(&b).unwrap();
            let resid = &y - &x * &est.b_hat;
            assert!((x.transpose() * resid).amax() < 1e-8 * y.norm().max(1.0));
        }
    }

    #[test]
    fn gaussian_noiseless_bias_confined_to_null_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // rank-deficient design: third column is the sum of the first two
        let base = DMatrix::from_fn(9, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mut x = DMatrix::zeros(9, 3);
        x.set_column(0, &base.column(0));
        x.set_column(1, &base.column(1));
        x.set_column(2, &(base.column(0) + base.column(1)));
        let truth = DVector::from_vec(vec![0.7, -0.3, 0.4]);
        let y = &x * &truth;
        let b = LeafBlock::new(NodeId(vec![1]), x, y).unwrap();
        let (est, phi, _) = fit_leaf_gaussian(&b).unwrap();
        assert_eq!(est.rank, 2);
        let diff = &est.b_hat - &truth;
        let projected = &est.v * (est.v.transpose() * &diff);
        assert!(projected.amax() < 1e-10);
        assert!(phi < 1e-20);
    }

    #[test]
    fn orthonormal_v_positive_d_both_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let x = DMatrix::from_fn(10, 3, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
            let yg = DVector::from_fn(10, |_, _| rng.random::<f64>());
            let yl = DVector::from_fn(10, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
            let (g, _, _) =
                fit_leaf_gaussian(&LeafBlock::new(NodeId(vec![1]), x.clone(), yg).unwrap())
                    .unwrap();
            let l = fit_leaf_logistic_firth(
                &LeafBlock::new(NodeId(vec![1]), x.clone(), yl).unwrap(),
                1e-8,
                50,
            )
            .unwrap();
            for est in [g, l] {
                let vtv = est.v.transpose() * &est.v;
                let eye = DMatrix::<f64>::identity(est.rank, est.rank);
                assert!((vtv - eye).amax() < 1e-10);
                assert!(est.d.iter().all(|&d| d > 0.0));
            }
        }
    }

    #[test]
    fn pool_dispersion_examples() {
        assert!((pool_dispersion(&[(2.0, 1), (0.0, 0)]).unwrap() - 2.0).abs() < 1e-15);
        assert!((pool_dispersion(&[(1.0, 2), (4.0, 2)]).unwrap() - 2.5).abs() < 1e-15);
        assert!(matches!(
            pool_dispersion(&[(0.0, 0), (0.0, 0)]),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn pool_dispersion_monte_carlo_near_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut per_leaf = Vec::new();
        let mut total_dof = 0usize;
        for _ in 0..20 {
            let n = 12;
            let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let truth = DVector::from_vec(vec![0.5, -1.0]);
            let noise: DVector<f64> = DVector::from_fn(n, |_, _| {
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            });
            let y = &x * &truth + noise;
            let b = LeafBlock::new(NodeId(vec![1]), x, y).unwrap();
            let (_, phi, dof) = fit_leaf_gaussian(&b).unwrap();
            per_leaf.push((phi, dof));
            total_dof += dof;
        }
        let pooled = pool_dispersion(&per_leaf).unwrap();
        // var(phi_bar) ~ 2 phi^2 / total_dof for Gaussian residuals
        let se = (2.0 / total_dof as f64).sqrt();
        assert!((pooled - 1.0).abs() < 3.0 * se, "pooled {pooled}, se {se}");
    }

    #[test]
    fn firth_intercept_only_balanced_is_zero() {
        let b = block(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]), vec![0.0, 1.0]);
        let est = fit_leaf_logistic_firth(&b, 1e-10, 50).unwrap();
        assert!(est.b_hat[0].abs() < 1e-10);
    }

    #[test]
    fn firth_finite_under_perfect_separation() {
        let b = block(
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]),
            vec![0.0, 1.0],
        );
        let est = fit_leaf_logistic_firth(&b, 1e-8, 100).unwrap();
        assert!(est.b_hat.iter().all(|v| v.is_finite()));
        assert!(est.b_hat.norm() < 20.0);
    }

    #[test]
    fn firth_rejects_non_binary_response() {
        let b = block(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]), vec![0.0, 2.0]);
        assert!(matches!(
            fit_leaf_logistic_firth(&b, 1e-8, 50),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn firth_approaches_mle_as_penalty_shrinks() {
        // well-separated-from-degenerate dataset with an interior MLE
        let x = DMatrix::from_row_slice(
            8,
            2,
            &[
                1.0, -1.5, 1.0, -1.0, 1.0, -0.5, 1.0, 0.0, 1.0, 0.5, 1.0, 1.0, 1.0, 1.5, 1.0, 2.0,
            ],
        );
        let y = vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let b = block(x, y);
        let fit_at = |pw: f64| {
            fit_leaf_logistic_firth_with(
                &b,
                &FirthOptions {
                    penalty_weight: pw,
                    max_iter: 200,
                    ..FirthOptions::default()
                },
            )
            .unwrap()
            .b_hat
        };
        let mle = fit_at(0.0);
        let d1 = (fit_at(1.0) - &mle).norm();
        let d2 = (fit_at(0.5) - &mle).norm();
        let d3 = (fit_at(0.1) - &mle).norm();
        assert!(d1 > d2 && d2 > d3, "distances {d1} {d2} {d3}");
        assert!(d3 < d1 * 0.2);
    }

    #[test]
    fn augmented_information_inflates_scales_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x = DMatrix::from_fn(9, 2, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let y = DVector::from_fn(9, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
        let b = LeafBlock::new(NodeId(vec![1]), x, y).unwrap();
        let fisher = fit_leaf_logistic_firth_with(&b, &FirthOptions::default()).unwrap();
        let augmented = fit_leaf_logistic_firth_with(
            &b,
            &FirthOptions {
                information: FirthInformation::Augmented,
                ..FirthOptions::default()
            },
        )
        .unwrap();
        // the estimate is unchanged; the summary carries more information
        assert!((&fisher.b_hat - &augmented.b_hat).amax() < 1e-10);
        let total = |est: &NodeEstimate| est.d.iter().map(|d| d * d).sum::<f64>();
        assert!(total(&augmented) > total(&fisher));
        // both reconstruct PSD information matrices on the same row space
        let span_gap = &fisher.v * (fisher.v.transpose() * &augmented.v) - &augmented.v;
        assert!(span_gap.amax() < 1e-8);
    }

    #[test]
    fn firth_rank_deficient_minimum_norm_representative() {
        // duplicated column: estimate must have equal halves (zero component
        // in the null space of X)
        let x = DMatrix::from_row_slice(
            6,
            2,
            &[
                1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0,
            ],
        );
        let y = vec![1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let est = fit_leaf_logistic_firth(&block(x, y), 1e-8, 100).unwrap();
        assert_eq!(est.rank, 1);
        assert!((est.b_hat[0] - est.b_hat[1]).abs() < 1e-12);
    }
}
