//! Bingham–von Mises–Fisher sampling on spheres and on the orthogonal group.
//!
//! The vector density is `exp(cᵀx + xᵀAx)` with respect to the uniform measure
//! on the unit sphere. The matrix density is `exp(tr(M0ᵀO + B OᵀSO))` with
//! respect to Haar measure on O(D), `B` diagonal.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{complement_basis, eigen_range, gram_schmidt, haar_orthogonal, orthogonality_error, symmetrize};
use crate::stats::log_bessel_i0;

/// Proposals spent on the uniform envelope before switching samplers.
const REJECTION_BUDGET: usize = 1000;
const MIN_ACCEPTANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorBmfParams {
    c: DVector<f64>,
    a: DMatrix<f64>,
}

impl VectorBmfParams {
    /// `a` is symmetrized on construction.
    pub fn new(c: DVector<f64>, a: DMatrix<f64>) -> Result<Self> {
        let d = c.len();
        if d == 0 {
            return Err(Error::Precondition("sphere dimension must be at least 1".into()));
        }
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::Precondition(format!(
                "quadratic coefficient is {}x{}, expected {d}x{d}",
                a.nrows(),
                a.ncols()
            )));
        }
        if c.iter().chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::non_finite("vector BMF parameters"));
        }
        Ok(Self { c, a: symmetrize(&a) })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn quadratic(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn log_kernel(&self, x: &DVector<f64>) -> f64 {
        self.c.dot(x) + (&self.a * x).dot(x)
    }
}

/// Log-density on the circle `θ ↦ c1 cosθ + c2 sinθ + p cos2θ + q sin2θ`
/// (constant dropped).
#[derive(Debug, Clone, Copy)]
pub(crate) struct CircleKernel {
    c1: f64,
    c2: f64,
    p: f64,
    q: f64,
}

impl CircleKernel {
    pub(crate) fn from_params(c: [f64; 2], a: [[f64; 2]; 2]) -> Self {
        Self {
            c1: c[0],
            c2: c[1],
            p: 0.5 * (a[0][0] - a[1][1]),
            q: 0.5 * (a[0][1] + a[1][0]),
        }
    }

    #[inline]
    pub(crate) fn eval(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        let (s2, c2) = (2.0 * s * c, c * c - s * s);
        self.c1 * c + self.c2 * s + self.p * c2 + self.q * s2
    }

    fn sup_bound(&self) -> f64 {
        self.c1.hypot(self.c2) + self.p.hypot(self.q)
    }

    fn lipschitz(&self) -> f64 {
        self.c1.hypot(self.c2) + 2.0 * self.p.hypot(self.q)
    }
}

/// Exact draw of an angle from `exp(kernel(θ))` on `[0, 2π)`.
pub(crate) fn sample_circle<R: Rng + ?Sized>(kernel: &CircleKernel, rng: &mut R) -> f64 {
    use std::f64::consts::TAU;
    let bound = kernel.sup_bound();
    let lip = kernel.lipschitz();

    // Coarse certificate: if even the largest attainable value sits far below
    // the envelope, the uniform proposal cannot reach the acceptance floor.
    let grid = 64;
    let h = TAU / grid as f64;
    let coarse_max = (0..grid)
        .map(|i| kernel.eval(i as f64 * h))
        .fold(f64::NEG_INFINITY, f64::max);
    let attainable = (coarse_max + 0.5 * lip * h).min(bound);
    if bound - attainable < -MIN_ACCEPTANCE.ln() {
        for _ in 0..REJECTION_BUDGET {
            let theta = rng.random::<f64>() * TAU;
            let u: f64 = rng.random();
            if u.ln() <= kernel.eval(theta) - bound {
                return theta;
            }
        }
    }
    sample_circle_adaptive(kernel, rng)
}

/// Rejection under a piecewise-constant envelope refined around the modes.
fn sample_circle_adaptive<R: Rng + ?Sized>(kernel: &CircleKernel, rng: &mut R) -> f64 {
    use std::f64::consts::TAU;
    let lip = kernel.lipschitz();
    let initial = 64;
    let mut cells: Vec<(f64, f64)> = (0..initial)
        .map(|i| (i as f64 * TAU / initial as f64, (i + 1) as f64 * TAU / initial as f64))
        .collect();
    let cell_bound = |a: f64, b: f64| -> f64 { kernel.eval(a).max(kernel.eval(b)) + 0.5 * lip * (b - a) };
    loop {
        let best = cells
            .iter()
            .map(|&(a, _)| kernel.eval(a))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut refined = Vec::with_capacity(cells.len());
        let mut changed = false;
        for &(a, b) in &cells {
            let w = b - a;
            if lip * w > 0.5 && cell_bound(a, b) > best - 40.0 && cells.len() < 200_000 {
                let parts = 8;
                for k in 0..parts {
                    refined.push((a + w * k as f64 / parts as f64, a + w * (k + 1) as f64 / parts as f64));
                }
                changed = true;
            } else {
                refined.push((a, b));
            }
        }
        cells = refined;
        if !changed {
            break;
        }
    }
    let bounds: Vec<f64> = cells.iter().map(|&(a, b)| cell_bound(a, b)).collect();
    let top = bounds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut cumulative = Vec::with_capacity(cells.len());
    let mut total = 0.0;
    for (&(a, b), &m) in cells.iter().zip(&bounds) {
        total += (b - a) * (m - top).exp();
        cumulative.push(total);
    }
    loop {
        let u = rng.random::<f64>() * total;
        let idx = cumulative.partition_point(|&c| c < u).min(cells.len() - 1);
        let (a, b) = cells[idx];
        let theta = a + (b - a) * rng.random::<f64>();
        let v: f64 = rng.random();
        if v.ln() <= kernel.eval(theta) - bounds[idx] {
            return theta;
        }
    }
}

fn uniform_sphere<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-300 {
            return v / n;
        }
    }
}

fn two_point<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    // P(+1) = e^c / (e^c + e^-c) = 1 / (1 + e^{-2c})
    let p_plus = 1.0 / (1.0 + (-2.0 * c).exp());
    if rng.random::<f64>() < p_plus {
        1.0
    } else {
        -1.0
    }
}

/// Draws from the vector BMF density on the unit sphere of `R^dim`.
///
/// Exact for `dim ≤ 2`. For higher dimensions the uniform-envelope rejection
/// sampler is exact; if it stalls, a great-circle Gibbs sweep started at the
/// best candidate direction is used instead.
pub fn sample_vector_bmf<R: Rng + ?Sized>(params: &VectorBmfParams, rng: &mut R) -> DVector<f64> {
    sample_vector_bmf_impl(params, None, rng)
}

/// Like [`sample_vector_bmf`], but a stalled rejection sampler falls back to a
/// single great-circle sweep started from `current`, which leaves the target
/// invariant.
pub fn sample_vector_bmf_from<R: Rng + ?Sized>(
    params: &VectorBmfParams,
    current: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    sample_vector_bmf_impl(params, Some(current), rng)
}

fn sample_vector_bmf_impl<R: Rng + ?Sized>(
    params: &VectorBmfParams,
    current: Option<&DVector<f64>>,
    rng: &mut R,
) -> DVector<f64> {
    let dim = params.dim();
    match dim {
        1 => DVector::from_element(1, two_point(params.c[0], rng)),
        2 => {
            let a = &params.a;
            let k = CircleKernel::from_params(
                [params.c[0], params.c[1]],
                [[a[(0, 0)], a[(0, 1)]], [a[(1, 0)], a[(1, 1)]]],
            );
            let theta = sample_circle(&k, rng);
            DVector::from_column_slice(&[theta.cos(), theta.sin()])
        }
        _ => {
            let (_, hi) = eigen_range(&params.a);
            let bound = params.c.norm() + hi;
            for _ in 0..REJECTION_BUDGET {
                let x = uniform_sphere(dim, rng);
                let u: f64 = rng.random();
                if u.ln() <= params.log_kernel(&x) - bound {
                    return normalize(x);
                }
            }
            let start = match current {
                Some(x) => x.clone(),
                None => best_direction(params),
            };
            let sweeps = if current.is_some() { 1 } else { 25 * dim };
            let mut x = start;
            for _ in 0..sweeps {
                x = great_circle_sweep(params, &x, rng);
            }
            normalize(x)
        }
    }
}

fn normalize(x: DVector<f64>) -> DVector<f64> {
    let n = x.norm();
    x / n
}

fn best_direction(params: &VectorBmfParams) -> DVector<f64> {
    let dim = params.dim();
    let mut candidates = Vec::new();
    if params.c.norm() > 0.0 {
        candidates.push(params.c.normalize());
    }
    let eig = params.a.clone().symmetric_eigen();
    for j in 0..dim {
        let v = eig.eigenvectors.column(j).clone_owned();
        candidates.push(v.clone());
        candidates.push(-v);
    }
    candidates
        .into_iter()
        .max_by(|x, y| params.log_kernel(x).total_cmp(&params.log_kernel(y)))
        .expect("non-empty")
}

/// One sweep of exact conditional draws along `dim − 1` great circles through
/// the current point, each spanned by `x` and a direction orthogonal to it.
fn great_circle_sweep<R: Rng + ?Sized>(
    params: &VectorBmfParams,
    x: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let dim = params.dim();
    let mut x = x.clone();
    for _ in 0..dim - 1 {
        let mut u = uniform_sphere(dim, rng);
        let p = u.dot(&x);
        u.axpy(-p, &x, 1.0);
        let un = u.norm();
        if un < 1e-12 {
            continue;
        }
        u /= un;
        let ax = &params.a * &x;
        let au = &params.a * &u;
        let k = CircleKernel::from_params(
            [params.c.dot(&x), params.c.dot(&u)],
            [[x.dot(&ax), x.dot(&au)], [u.dot(&ax), u.dot(&au)]],
        );
        let theta = sample_circle(&k, rng);
        x = &x * theta.cos() + &u * theta.sin();
        x = normalize(x);
    }
    x
}

/// One full Gibbs scan over O(D) for the matrix BMF target
/// `exp(tr(M0ᵀO + B OᵀSO))`, `B = diag(bdiag)`.
///
/// Each column is first redrawn from the vector BMF restricted to the
/// orthogonal complement of the other columns (a sign choice for square O);
/// then every column pair is rotated within its plane by an exact draw from
/// the induced circle density. The result is re-orthonormalized.
pub fn gibbs_scan_orthogonal<R: Rng + ?Sized>(
    o: &DMatrix<f64>,
    s: &DMatrix<f64>,
    bdiag: &[f64],
    m0: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = o.nrows();
    if o.ncols() != d || s.nrows() != d || s.ncols() != d || bdiag.len() != d || m0.nrows() != d || m0.ncols() != d {
        return Err(Error::Precondition("dimension mismatch in orthogonal scan".into()));
    }
    let err = orthogonality_error(o);
    if !(err < 1e-10) {
        return Err(Error::Precondition(format!("input not orthogonal (error {err:e})")));
    }
    if (s - s.transpose()).amax() > 1e-9 * (1.0 + s.amax()) {
        return Err(Error::Precondition("scatter matrix not symmetric".into()));
    }
    let mut o = o.clone();

    for j in 0..d {
        let others: Vec<DVector<f64>> = (0..d).filter(|&k| k != j).map(|k| o.column(k).clone_owned()).collect();
        let n = complement_basis(&others, d);
        let nvec = n.column(0).clone_owned();
        let c = nvec.dot(&m0.column(j));
        let sign = two_point(c, rng);
        o.set_column(j, &(nvec * sign));
    }

    for j in 0..d {
        for k in (j + 1)..d {
            let oj = o.column(j).clone_owned();
            let ok = o.column(k).clone_owned();
            // o_j' = cosθ o_j + sinθ o_k ; o_k' = cosθ o_k − sinθ o_j
            let p = DMatrix::from_columns(&[oj.clone(), ok.clone()]);
            let q = DMatrix::from_columns(&[ok, -oj]);
            let c = p.transpose() * m0.column(j) + q.transpose() * m0.column(k);
            let a = (p.transpose() * s * &p) * bdiag[j] + (q.transpose() * s * &q) * bdiag[k];
            let kern = CircleKernel::from_params([c[0], c[1]], [[a[(0, 0)], a[(0, 1)]], [a[(1, 0)], a[(1, 1)]]]);
            let theta = sample_circle(&kern, rng);
            let (sn, cs) = theta.sin_cos();
            let x = DVector::from_column_slice(&[cs, sn]);
            o.set_column(j, &(&p * &x));
            o.set_column(k, &(&q * &x));
        }
    }
    gram_schmidt(&mut o);
    Ok(o)
}

/// Draw from the matrix BMF prior `exp(tr(M0ᵀO))`.
///
/// Haar when `M0 = 0`; exact for `D ≤ 2`. For larger `D` with `M0 ≠ 0` the
/// draw is the state after a fixed number of Gibbs scans from a Haar start.
pub fn sample_orientation_prior<R: Rng + ?Sized>(m0: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let d = m0.nrows();
    if m0.iter().all(|v| *v == 0.0) {
        return haar_orthogonal(d, rng);
    }
    match d {
        1 => DMatrix::from_element(1, 1, two_point(m0[(0, 0)], rng)),
        2 => {
            // O = [[cos, -s sin], [sin, s cos]], s = ±1
            let coef = |s: f64| (m0[(0, 0)] + s * m0[(1, 1)], m0[(1, 0)] - s * m0[(0, 1)]);
            let (a_p, b_p) = coef(1.0);
            let (a_m, b_m) = coef(-1.0);
            let lp = log_bessel_i0(a_p.hypot(b_p));
            let lm = log_bessel_i0(a_m.hypot(b_m));
            let p_plus = 1.0 / (1.0 + (lm - lp).exp());
            let (s, a, b) = if rng.random::<f64>() < p_plus { (1.0, a_p, b_p) } else { (-1.0, a_m, b_m) };
            let theta = sample_circle(&CircleKernel::from_params([a, b], [[0.0, 0.0], [0.0, 0.0]]), rng);
            let (sn, cs) = theta.sin_cos();
            DMatrix::from_row_slice(2, 2, &[cs, -s * sn, sn, s * cs])
        }
        _ => {
            let mut o = haar_orthogonal(d, rng);
            let zero = DMatrix::zeros(d, d);
            let b = vec![0.0; d];
            for _ in 0..50 {
                o = gibbs_scan_orthogonal(&o, &zero, &b, m0, rng).expect("valid scan state");
            }
            o
        }
    }
}
