//! Degenerate-depth checks: a depth-1 fit of the recursive machinery must
//! reproduce an independent transcription of the single-level moment
//! estimator written in plain dense algebra.

use std::collections::BTreeMap;

use hglmm_core::family::Family;
use hglmm_core::hierarchy::{build_hierarchy, HierarchySpec, NodeId};
use hglmm_core::leaf_fit::LeafBlock;
use hglmm_core::moment_fit::{fit, WeightScheme};
use hglmm_core::{ebayes, Error};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

struct Depth1Instance {
    blocks: Vec<LeafBlock>,
    spec: HierarchySpec,
    q0: usize,
    q1: usize,
    true_beta: DVector<f64>,
    true_u: Vec<DVector<f64>>,
}

fn make_instance(rng: &mut ChaCha8Rng, groups: usize, n: usize, noise: f64) -> Depth1Instance {
    let q0 = 2;
    let q1 = 2;
    let labels: Vec<Vec<String>> = (0..groups)
        .flat_map(|g| std::iter::repeat_n(vec![format!("g{g}")], n))
        .collect();
    let built = build_hierarchy(&labels, &[q0, q1], false).unwrap();
    let beta = DVector::from_fn(q0, |_, _| normal(rng));
    let sigma = 0.3;
    let mut blocks = Vec::new();
    let mut true_u = Vec::new();
    for leaf in &built.spec.level_sets[1] {
        let u = DVector::from_fn(q1, |_, _| normal(rng) * f64::sqrt(sigma));
        let x = DMatrix::from_fn(n, q0 + q1, |_, _| normal(rng));
        let y = DVector::from_fn(n, |r, _| {
            let mut eta = 0.0;
            for k in 0..q0 {
                eta += x[(r, k)] * beta[k];
            }
            for k in 0..q1 {
                eta += x[(r, q0 + k)] * u[k];
            }
            eta + noise * normal(rng)
        });
        blocks.push(LeafBlock::new(leaf.clone(), x, y).unwrap());
        true_u.push(u);
    }
    Depth1Instance {
        blocks,
        spec: built.spec,
        q0,
        q1,
        true_beta: beta,
        true_u,
    }
}

/// Direct transcription of the single-level estimator: per-group least
/// squares, pooled dispersion, weighted combination, and the covariance
/// matching solved through the Kronecker vectorization.
struct Depth1Oracle {
    beta: DVector<f64>,
    sigma: DMatrix<f64>,
    phi: f64,
    u_hat: Vec<DVector<f64>>,
}

fn clip_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut acc = DMatrix::zeros(m.nrows(), m.ncols());
    for k in 0..eig.eigenvalues.len() {
        if eig.eigenvalues[k] > 0.0 {
            let v = eig.eigenvectors.column(k);
            acc += v * v.transpose() * eig.eigenvalues[k];
        }
    }
    acc
}

fn depth1_oracle(instance: &Depth1Instance, semi_weighted: bool) -> Depth1Oracle {
    let q0 = instance.q0;
    let q1 = instance.q1;
    let p = q0 + q1;
    let m = instance.blocks.len();

    // per-group least squares and dispersion pooling
    let mut b_hats = Vec::new();
    let mut xtx_invs = Vec::new();
    let mut phi_num = 0.0;
    let mut phi_dof = 0.0;
    for block in &instance.blocks {
        let xtx = block.x.transpose() * &block.x;
        let xtx_inv = xtx.clone().try_inverse().expect("full-rank group");
        let b = &xtx_inv * block.x.transpose() * &block.y;
        let resid = &block.y - &block.x * &b;
        let dof = (block.n() - p) as f64;
        phi_num += resid.norm_squared();
        phi_dof += dof;
        b_hats.push(b);
        xtx_invs.push(xtx_inv);
    }
    let phi = phi_num / phi_dof;

    // Z_j = phi^{-1/2} D_j V_j^T from a fresh SVD of each design
    let mut vs = Vec::new();
    let mut dzs = Vec::new();
    for block in &instance.blocks {
        let svd = block.x.clone().svd(true, true);
        let vt = svd.v_t.unwrap();
        let v = vt.rows(0, p).transpose();
        let dz = DVector::from_iterator(
            p,
            svd.singular_values.iter().take(p).map(|s| s / phi.sqrt()),
        );
        vs.push(v);
        dzs.push(dz);
    }

    let combine = |pilot: Option<&DMatrix<f64>>| -> (DVector<f64>, DMatrix<f64>) {
        let mut omega = DMatrix::<f64>::zeros(q0, q0);
        let mut rhs = DVector::<f64>::zeros(q0);
        let mut weights = Vec::new();
        for j in 0..m {
            let v = &vs[j];
            let v1 = v.rows(0, q0).into_owned();
            let v2 = v.rows(q0, q1).into_owned();
            let w = match pilot {
                None => DMatrix::identity(p, p),
                Some(s) => {
                    let mut c = v2.transpose() * s * &v2;
                    for k in 0..p {
                        c[(k, k)] += 1.0 / (dzs[j][k] * dzs[j][k]);
                    }
                    c.try_inverse().expect("weight candidate invertible")
                }
            };
            omega += &v1 * &w * v1.transpose();
            rhs += &v1 * &w * v.transpose() * &b_hats[j];
            weights.push(w);
        }
        let beta = omega.clone().try_inverse().expect("omega invertible") * rhs;

        // covariance matching through vec coordinates
        let mut s_mat = DMatrix::<f64>::zeros(q1, q1);
        let mut kron = DMatrix::<f64>::zeros(q1 * q1, q1 * q1);
        for j in 0..m {
            let v = &vs[j];
            let v1 = v.rows(0, q0).into_owned();
            let v2 = v.rows(q0, q1).into_owned();
            let w = &weights[j];
            let a = &v2 * w * v.transpose() * &b_hats[j] - &v2 * w * v1.transpose() * &beta;
            s_mat += &a * a.transpose();
            let mut dz_inv2 = DMatrix::<f64>::zeros(p, p);
            for k in 0..p {
                dz_inv2[(k, k)] = 1.0 / (dzs[j][k] * dzs[j][k]);
            }
            s_mat -= &v2 * w * dz_inv2 * w * v2.transpose();
            let b = &v2 * w * v2.transpose();
            kron += b.kronecker(&b);
        }
        let vec_s = DVector::from_iterator(q1 * q1, s_mat.iter().cloned());
        let vec_sigma = kron
            .svd(true, true)
            .solve(&vec_s, 1e-12)
            .expect("kron system solvable");
        let sigma_raw = DMatrix::from_iterator(q1, q1, vec_sigma.iter().cloned());
        (beta, clip_psd(&sigma_raw))
    };

    let (beta, sigma) = if semi_weighted {
        let (_, pilot) = combine(None);
        combine(Some(&pilot))
    } else {
        combine(None)
    };

    // exact conditional-Gaussian posterior means with the plug-ins
    let mut u_hat = Vec::new();
    for block in &instance.blocks {
        let x0 = block.x.columns(0, q0).into_owned();
        let x1 = block.x.columns(q0, q1).into_owned();
        let marginal =
            &x1 * &sigma * x1.transpose() + DMatrix::<f64>::identity(block.n(), block.n()) * phi;
        let resid = &block.y - &x0 * &beta;
        let solved = marginal.cholesky().expect("marginal PD").solve(&resid);
        u_hat.push(&sigma * x1.transpose() * solved);
    }

    Depth1Oracle {
        beta,
        sigma,
        phi,
        u_hat,
    }
}

#[test]
fn depth1_fit_matches_direct_transcription_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    for _ in 0..10 {
        let instance = make_instance(&mut rng, 12, 25, 1.0);
        let model = fit(
            &instance.blocks,
            &instance.spec,
            Family::Gaussian,
            WeightScheme::Identity,
        )
        .unwrap();
        let oracle = depth1_oracle(&instance, false);
        assert!((&model.beta_bar - &oracle.beta).amax() < 1e-8);
        assert!((model.sigma_bar(1) - &oracle.sigma).amax() < 1e-8);
        assert!((model.phi_bar - oracle.phi).abs() < 1e-10);
        let refined = ebayes::refine(&model).unwrap();
        for (leaf, u_oracle) in instance.spec.level_sets[1].iter().zip(&oracle.u_hat) {
            let u = refined.u_hat.get(leaf).unwrap();
            assert!((u - u_oracle).amax() < 1e-8);
        }
    }
}

#[test]
fn depth1_fit_matches_direct_transcription_semi_weighted() {
    let mut rng = ChaCha8Rng::seed_from_u64(302);
    for _ in 0..10 {
        let instance = make_instance(&mut rng, 12, 25, 1.0);
        let model = fit(
            &instance.blocks,
            &instance.spec,
            Family::Gaussian,
            WeightScheme::semi_weighted(),
        )
        .unwrap();
        let oracle = depth1_oracle(&instance, true);
        assert!((&model.beta_bar - &oracle.beta).amax() < 1e-8);
        assert!((model.sigma_bar(1) - &oracle.sigma).amax() < 1e-8);
        let refined = ebayes::refine(&model).unwrap();
        for (leaf, u_oracle) in instance.spec.level_sets[1].iter().zip(&oracle.u_hat) {
            let u = refined.u_hat.get(leaf).unwrap();
            assert!((u - u_oracle).amax() < 1e-8);
        }
    }
}

#[test]
fn depth1_noiseless_recovers_beta_and_scatter() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let instance = make_instance(&mut rng, 8, 20, 0.0);
    let model = fit(
        &instance.blocks,
        &instance.spec,
        Family::Gaussian,
        WeightScheme::Identity,
    )
    .unwrap();
    assert!((&model.beta_bar - &instance.true_beta).amax() < 1e-8);
    // with exact leaf fits the level covariance is the clipped uncentered
    // scatter of the true deviations
    let q1 = instance.q1;
    let mut scatter = DMatrix::<f64>::zeros(q1, q1);
    for u in &instance.true_u {
        scatter += u * u.transpose();
    }
    scatter /= instance.true_u.len() as f64;
    assert!((model.sigma_bar(1) - clip_psd(&scatter)).amax() < 1e-7);
}

#[test]
fn fit_rejects_missing_and_duplicate_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(304);
    let instance = make_instance(&mut rng, 4, 10, 0.5);
    let mut missing = instance.blocks.clone();
    missing.remove(0);
    assert!(matches!(
        fit(
            &missing,
            &instance.spec,
            Family::Gaussian,
            WeightScheme::Identity
        ),
        Err(Error::Data(_))
    ));
    let mut duplicated = instance.blocks.clone();
    duplicated.push(instance.blocks[0].clone());
    assert!(matches!(
        fit(
            &duplicated,
            &instance.spec,
            Family::Gaussian,
            WeightScheme::Identity
        ),
        Err(Error::Data(_))
    ));
}

#[test]
fn parallel_leaf_fitting_is_bitwise_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(305);
    let instance = make_instance(&mut rng, 10, 15, 1.0);
    let sequential = fit(
        &instance.blocks,
        &instance.spec,
        Family::Gaussian,
        WeightScheme::semi_weighted(),
    )
    .unwrap();
    let parallel = hglmm_core::moment_fit::fit_with(
        &instance.blocks,
        &instance.spec,
        Family::Gaussian,
        &hglmm_core::moment_fit::FitOptions {
            scheme: WeightScheme::semi_weighted(),
            jobs: 4,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(sequential.beta_bar, parallel.beta_bar);
    assert_eq!(sequential.sigma_bars, parallel.sigma_bars);
    let keys: Vec<&NodeId> = sequential.node_estimates.keys().collect();
    for k in keys {
        assert_eq!(
            sequential.node_estimates[k].b_hat,
            parallel.node_estimates[k].b_hat
        );
    }
}

#[test]
fn estimates_stored_for_every_node() {
    let mut rng = ChaCha8Rng::seed_from_u64(306);
    let instance = make_instance(&mut rng, 5, 12, 0.7);
    let model = fit(
        &instance.blocks,
        &instance.spec,
        Family::Gaussian,
        WeightScheme::Identity,
    )
    .unwrap();
    let total_nodes: usize = instance.spec.level_sets.iter().map(|l| l.len()).sum();
    assert_eq!(model.node_estimates.len(), total_nodes);
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for node in model.node_estimates.keys() {
        *counts.entry(node.depth()).or_insert(0) += 1;
    }
    assert_eq!(counts[&0], 1);
}
