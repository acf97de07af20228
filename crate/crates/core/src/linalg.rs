//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Largest entry of `|OᵀO − I|`.
pub fn orthogonality_error(o: &DMatrix<f64>) -> f64 {
    let g = o.transpose() * o;
    let mut worst = 0.0_f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Modified Gram–Schmidt on the columns, in place, left to right.
pub fn gram_schmidt(o: &mut DMatrix<f64>) {
    let k = o.ncols();
    for j in 0..k {
        for i in 0..j {
            let proj = o.column(i).dot(&o.column(j));
            let ci = o.column(i).clone_owned();
            o.column_mut(j).axpy(-proj, &ci, 1.0);
        }
        let norm = o.column(j).norm();
        o.column_mut(j).unscale_mut(norm);
    }
}

/// Orthonormal basis (as columns) of the orthogonal complement of the span of
/// `cols`, which must be orthonormal. Candidates are the canonical basis
/// vectors in order, keeping the one with the largest residual at each step.
pub fn complement_basis(cols: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    let target = dim - cols.len();
    let mut basis: Vec<DVector<f64>> = cols.to_vec();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(target);
    while out.len() < target {
        let mut best: Option<DVector<f64>> = None;
        let mut best_norm = -1.0;
        for e in 0..dim {
            let mut v = DVector::zeros(dim);
            v[e] = 1.0;
            // two passes for numerical orthogonality
            for _ in 0..2 {
                for b in &basis {
                    let p = b.dot(&v);
                    v.axpy(-p, b, 1.0);
                }
            }
            let nv = v.norm();
            if nv > best_norm + 1e-12 {
                best_norm = nv;
                best = Some(v);
            }
        }
        let v = best.expect("dim >= 1") / best_norm;
        basis.push(v.clone());
        out.push(v);
    }
    if out.is_empty() {
        DMatrix::zeros(dim, 0)
    } else {
        DMatrix::from_columns(&out)
    }
}

/// Haar-distributed draw from O(D): QR of a Gaussian matrix with the sign
/// correction that makes R's diagonal positive.
pub fn haar_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let z = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn eigen_range(a: &DMatrix<f64>) -> (f64, f64) {
    if a.nrows() == 0 {
        return (0.0, 0.0);
    }
    if a.nrows() == 1 {
        return (a[(0, 0)], a[(0, 0)]);
    }
    let eig = a.clone().symmetric_eigen();
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Rotation by `theta` in the plane.
pub fn rotation2(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}
