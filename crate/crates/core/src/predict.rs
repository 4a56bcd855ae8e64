//! Linear predictors, response-scale predictions, the global/local baseline
//! fitters, and the evaluation losses.

use nalgebra::{DMatrix, DVector};

use crate::ebayes::RefinedEstimates;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::hierarchy::{HierarchySpec, NodeId};
use crate::leaf_fit::{fit_leaf_gaussian, fit_leaf_logistic_firth_with, FirthOptions, LeafBlock};
use crate::linalg::sym_eig;

/// Features and tree position of one observation to score. The path may stop
/// short of leaf depth or point at nodes absent from the fitted tree; levels
/// below the deepest known ancestor contribute nothing.
#[derive(Debug, Clone)]
pub struct PredictionRequest {
    pub fixed: DVector<f64>,
    /// Random-effect features per level, index 0 is level 1.
    pub per_level: Vec<DVector<f64>>,
    pub path: NodeId,
}

/// Linear predictor: fixed contribution plus the random-effect contributions
/// along the resolved root-to-node path.
pub fn linear_predictor(
    req: &PredictionRequest,
    beta: &DVector<f64>,
    refined: &RefinedEstimates,
    spec: &HierarchySpec,
) -> Result<f64> {
    if req.fixed.len() != spec.feature_dims[0] {
        return Err(Error::Usage(format!(
            "fixed feature length {} does not match q_0 = {}",
            req.fixed.len(),
            spec.feature_dims[0]
        )));
    }
    if req.per_level.len() != spec.depth {
        return Err(Error::Usage(format!(
            "expected {} per-level feature vectors, got {}",
            spec.depth,
            req.per_level.len()
        )));
    }
    for (l, x) in req.per_level.iter().enumerate() {
        if x.len() != spec.feature_dims[l + 1] {
            return Err(Error::Usage(format!(
                "level {} features have length {}, expected {}",
                l + 1,
                x.len(),
                spec.feature_dims[l + 1]
            )));
        }
    }
    if req.path.depth() > spec.depth {
        return Err(Error::Usage(format!(
            "path {} deeper than the hierarchy",
            req.path
        )));
    }

    let mut eta = req.fixed.dot(beta);
    for l in 1..=req.path.depth() {
        let node = req.path.ancestor(l)?;
        match refined.u_hat.get(&node) {
            Some(u) => eta += req.per_level[l - 1].dot(u),
            None => break,
        }
    }
    Ok(eta)
}

/// Map a linear predictor to the response scale.
pub fn predict_response(eta: f64, family: Family) -> f64 {
    family.mean(eta)
}

/// Pooled single-model fit over all observations: minimum-norm least squares
/// for the Gaussian family, Firth logistic otherwise.
pub fn fit_global_baseline(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    family: Family,
) -> Result<DVector<f64>> {
    let block = LeafBlock::new(NodeId::root(), x.clone(), y.clone())?;
    match family {
        Family::Gaussian => Ok(fit_leaf_gaussian(&block)?.0.b_hat),
        Family::Logistic => Ok(fit_leaf_logistic_firth_with(
            &block,
            &FirthOptions {
                max_iter: 100,
                ..FirthOptions::default()
            },
        )?
        .b_hat),
    }
}

/// Independent per-group fits with the same covariates, using the leaf-fit
/// rules (minimum norm / Firth) for rank-deficient groups.
pub fn fit_local_baseline(
    groups: &[(DMatrix<f64>, DVector<f64>)],
    family: Family,
) -> Result<Vec<DVector<f64>>> {
    groups
        .iter()
        .map(|(x, y)| fit_global_baseline(x, y, family))
        .collect()
}

/// Misclassification rate with a normal-approximation confidence interval.
#[derive(Debug, Clone, Copy)]
pub struct Misclassification {
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// Error rate of thresholded probabilities against binary labels, with the
/// 95% Wald interval.
pub fn misclassification(
    probabilities: &[f64],
    labels: &[f64],
    threshold: f64,
) -> Result<Misclassification> {
    if probabilities.is_empty() {
        return Err(Error::Usage("no observations to score".into()));
    }
    if probabilities.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} probabilities vs {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    for y in labels {
        if *y != 0.0 && *y != 1.0 {
            return Err(Error::Usage(format!("label {y} is not binary")));
        }
    }
    let n = probabilities.len();
    let errors = probabilities
        .iter()
        .zip(labels)
        .filter(|(p, y)| (**p >= threshold) != (**y == 1.0))
        .count();
    let rate = errors as f64 / n as f64;
    let half_width = 1.96 * (rate * (1.0 - rate) / n as f64).sqrt();
    Ok(Misclassification {
        rate,
        ci_low: rate - half_width,
        ci_high: rate + half_width,
        n,
    })
}

/// Squared-error loss on the fixed effects.
pub fn fixed_effect_loss(true_beta: &DVector<f64>, est_beta: &DVector<f64>) -> f64 {
    (true_beta - est_beta).norm_squared()
}

/// Covariance loss `tr{(Sigma_hat Sigma^{-1} - I)^2}`; the true covariance
/// must be positive definite.
pub fn covariance_loss(true_sigma: &DMatrix<f64>, est_sigma: &DMatrix<f64>) -> Result<f64> {
    let q = true_sigma.nrows();
    let chol = true_sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Usage("true covariance is not positive definite".into()))?;
    let inv = chol.inverse();
    let m = est_sigma * inv - DMatrix::<f64>::identity(q, q);
    // trace of M^2 for M similar to a symmetric matrix
    let mut tr = 0.0;
    for i in 0..q {
        for j in 0..q {
            tr += m[(i, j)] * m[(j, i)];
        }
    }
    Ok(tr)
}

/// Average squared Mahalanobis error of the random-effect estimates at one
/// level, standardized by the true covariance.
pub fn random_effect_loss(
    true_sigma: &DMatrix<f64>,
    pairs: &[(DVector<f64>, DVector<f64>)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Usage("no random effects to score".into()));
    }
    let (vals, vecs) = sym_eig(true_sigma);
    if vals.iter().any(|&v| v <= 0.0) {
        return Err(Error::Usage(
            "true covariance is not positive definite".into(),
        ));
    }
    let inv_sqrt = DVector::from_iterator(vals.len(), vals.iter().map(|&v| 1.0 / v.sqrt()));
    let mut total = 0.0;
    for (u, u_hat) in pairs {
        let mut w = vecs.transpose() * (u - u_hat);
        for k in 0..w.len() {
            w[k] *= inv_sqrt[k];
        }
        total += w.norm_squared();
    }
    Ok(total / pairs.len() as f64)
}

/// Prediction loss: mean Kullback-Leibler divergence of the estimated from
/// the true Bernoulli means for the logistic family, dispersion-standardized
/// mean squared error for the Gaussian family. Returns the loss and how many
/// estimated means had to be clamped away from {0, 1}.
pub fn prediction_loss(
    true_mu: &[f64],
    est_mu: &[f64],
    family: Family,
    phi: f64,
) -> Result<(f64, usize)> {
    if true_mu.is_empty() || true_mu.len() != est_mu.len() {
        return Err(Error::Usage("mean vectors empty or mismatched".into()));
    }
    let n = true_mu.len() as f64;
    match family {
        Family::Gaussian => {
            let total: f64 = true_mu
                .iter()
                .zip(est_mu)
                .map(|(m, mh)| (m - mh) * (m - mh))
                .sum();
            Ok((total / (n * phi), 0))
        }
        Family::Logistic => {
            const EPS: f64 = 1e-12;
            let mut clamped = 0usize;
            let mut total = 0.0;
            for (&mu, &mu_hat_raw) in true_mu.iter().zip(est_mu) {
                let mu_hat = if !(EPS..=1.0 - EPS).contains(&mu_hat_raw) {
                    clamped += 1;
                    mu_hat_raw.clamp(EPS, 1.0 - EPS)
                } else {
                    mu_hat_raw
                };
                if mu > 0.0 {
                    total += mu * (mu / mu_hat).ln();
                }
                if mu < 1.0 {
                    total += (1.0 - mu) * ((1.0 - mu) / (1.0 - mu_hat)).ln();
                }
            }
            Ok((total / n, clamped))
        }
    }
}

/// Evaluation summary: simulation losses when the truth is known, plus
/// classification metrics and timing.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub fixed_effect_loss: Option<f64>,
    /// Per level, index 0 is level 1.
    pub covariance_loss: Vec<f64>,
    /// Per level, index 0 is level 1.
    pub random_effect_loss: Vec<f64>,
    pub prediction_loss: Option<f64>,
    pub misclassification: Option<Misclassification>,
    pub clamped_predictions: usize,
    pub wall_clock_seconds: f64,
}

/// Rating-count buckets used for the local-versus-global comparison table.
pub const RATING_BUCKETS: [(usize, usize); 4] = [(10, 20), (20, 50), (50, 100), (100, 1000)];

#[derive(Debug, Clone)]
pub struct BucketRow {
    /// Inclusive-on-the-right rating-count range; the first bucket also
    /// includes its left endpoint.
    pub bucket: (usize, usize),
    pub n: usize,
    pub local_error: f64,
    pub local_se: f64,
    pub global_error: f64,
    pub global_se: f64,
}

/// Per-bucket error rates of the local and global baselines, bucketed by the
/// number of observations in each observation's group. Observations outside
/// every bucket are dropped. Reported spreads are binomial standard errors.
pub fn bucketed_error_table(observations: &[(usize, bool, bool)]) -> Vec<BucketRow> {
    RATING_BUCKETS
        .iter()
        .enumerate()
        .map(|(idx, &(lo, hi))| {
            let in_bucket = |size: usize| {
                if idx == 0 {
                    size >= lo && size <= hi
                } else {
                    size > lo && size <= hi
                }
            };
            let members: Vec<&(usize, bool, bool)> = observations
                .iter()
                .filter(|(s, _, _)| in_bucket(*s))
                .collect();
            let n = members.len();
            let rate = |f: &dyn Fn(&(usize, bool, bool)) -> bool| {
                if n == 0 {
                    0.0
                } else {
                    members.iter().filter(|m| f(m)).count() as f64 / n as f64
                }
            };
            let local_error = rate(&|m| m.1);
            let global_error = rate(&|m| m.2);
            let se = |p: f64| {
                if n == 0 {
                    0.0
                } else {
                    (p * (1.0 - p) / n as f64).sqrt()
                }
            };
            BucketRow {
                bucket: (lo, hi),
                n,
                local_error,
                local_se: se(local_error),
                global_error,
                global_se: se(global_error),
            }
        })
        .collect()
}
