//! Dense linear-algebra helpers: compact SVD with a pseudo-inverse rank
//! cutoff, symmetric eigendecompositions, and projection onto the positive
//! semidefinite cone.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Compact singular value decomposition `X = U diag(s) V^T` truncated at the
/// standard pseudo-inverse cutoff `max(n, p) * eps * s_max`.
#[derive(Debug, Clone)]
pub struct CompactSvd {
    /// n x r, orthonormal columns.
    pub u: DMatrix<f64>,
    /// r singular values, descending, all above the cutoff.
    pub singular_values: DVector<f64>,
    /// p x r, orthonormal columns.
    pub v: DMatrix<f64>,
    pub rank: usize,
}

impl CompactSvd {
    pub fn new(x: &DMatrix<f64>) -> Result<CompactSvd> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite entry in matrix".into()));
        }
        let (n, p) = x.shape();
        let svd = x.clone().svd(true, true);
        let u_full = svd
            .u
            .ok_or_else(|| Error::Internal("svd did not produce U".into()))?;
        let vt_full = svd
            .v_t
            .ok_or_else(|| Error::Internal("svd did not produce V^T".into()))?;
        let s = svd.singular_values;
        let smax = s.iter().cloned().fold(0.0f64, f64::max);
        let cutoff = (n.max(p) as f64) * f64::EPSILON * smax;
        let rank = s.iter().filter(|&&sv| sv > cutoff && sv > 0.0).count();
        Ok(CompactSvd {
            u: u_full.columns(0, rank).into_owned(),
            singular_values: DVector::from_iterator(rank, s.iter().take(rank).cloned()),
            v: vt_full.rows(0, rank).transpose(),
            rank,
        })
    }

    /// Minimum-norm least-squares solution of `X b = y` through this SVD.
    pub fn min_norm_solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut uy = self.u.transpose() * y;
        for k in 0..self.rank {
            uy[k] /= self.singular_values[k];
        }
        &self.v * uy
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub fn sym_eig(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = symmetrize(a);
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(k));
    }
    (values, vectors)
}

/// `(A + A^T) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetrized input.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eig(a);
    vals[vals.len() - 1]
}

/// Project a symmetric matrix onto the positive semidefinite cone by setting
/// negative eigenvalues to exactly zero.
pub fn psd_project(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eig(a);
    let clipped = DVector::from_iterator(vals.len(), vals.iter().map(|&v| v.max(0.0)));
    reconstruct(&vecs, &clipped)
}

/// `V diag(d) V^T`.
pub fn reconstruct(vecs: &DMatrix<f64>, vals: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = vecs.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= vals[k];
    }
    symmetrize(&(scaled * vecs.transpose()))
}

/// Pseudo-inverse of a symmetric PSD matrix, dropping eigenvalues below
/// `rel_tol * lambda_max`.
pub fn psd_pinv(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eig(a);
    let lmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let cut = rel_tol * lmax;
    let inv = DVector::from_iterator(
        vals.len(),
        vals.iter()
            .map(|&v| if v > cut && v > 0.0 { 1.0 / v } else { 0.0 }),
    );
    reconstruct(&vecs, &inv)
}

/// Solve the symmetric positive-definite system `A x = b`, falling back to an
/// eigenvalue-floored inverse when Cholesky fails. Returns the solution and
/// whether stabilization kicked in.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let sym = symmetrize(a);
    if let Some(chol) = sym.clone().cholesky() {
        (chol.solve(b), false)
    } else {
        let inv = stabilized_inverse(&sym).0;
        (inv * b, true)
    }
}

/// Invert a symmetric matrix that should be positive definite, flooring
/// eigenvalues at `1e-12 * lambda_max` when it is not. The flag reports
/// whether flooring was needed.
pub fn stabilized_inverse(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (vals, vecs) = sym_eig(a);
    let lmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let floor = if lmax > 0.0 {
        lmax * 1e-12
    } else {
        f64::MIN_POSITIVE
    };
    let mut stabilized = false;
    let inv = DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| {
            if v < floor {
                stabilized = true;
                1.0 / floor
            } else {
                1.0 / v
            }
        }),
    );
    (reconstruct(&vecs, &inv), stabilized)
}

/// Half-vectorization of a symmetric matrix in the isometric scaling:
/// off-diagonal entries are multiplied by sqrt(2) so Euclidean norms in vech
/// coordinates equal Frobenius norms of the matrices.
pub fn vech_scaled(a: &DMatrix<f64>) -> DVector<f64> {
    let q = a.nrows();
    let mut out = Vec::with_capacity(q * (q + 1) / 2);
    let root2 = std::f64::consts::SQRT_2;
    for i in 0..q {
        for j in i..q {
            if i == j {
                out.push(a[(i, i)]);
            } else {
                out.push(root2 * 0.5 * (a[(i, j)] + a[(j, i)]));
            }
        }
    }
    DVector::from_vec(out)
}

/// Inverse of [`vech_scaled`].
pub fn unvech_scaled(v: &DVector<f64>, q: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(q, q);
    let root2 = std::f64::consts::SQRT_2;
    let mut idx = 0;
    for i in 0..q {
        for j in i..q {
            if i == j {
                a[(i, i)] = v[idx];
            } else {
                let val = v[idx] / root2;
                a[(i, j)] = val;
                a[(j, i)] = val;
            }
            idx += 1;
        }
    }
    a
}

/// Least-squares / least-norm solve of a dense system via SVD with the
/// pseudo-inverse cutoff.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(CompactSvd::new(a)?.min_norm_solve(b))
}
