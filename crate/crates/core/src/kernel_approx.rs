//! Location-dependent Gaussian kernel operator `K_Σ g(x) = E_{Y~g} φ_{Σ(Y)}(x − Y)`
//! whose covariance is stretched along the tangent space and shrunk across
//! it, and grid scans of its approximation error.

use std::f64::consts::{PI, TAU};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::Serialize;

use crate::distributions::base_density;
use crate::error::{Error, Result};
use crate::geometry::{ball_kernel_normalizer, true_density, Coord, ManifoldSpec, NoiseModel, NoiseSpec, SmoothnessSpec};
use crate::rng::RngStream;
use crate::stats::{gauss_legendre_on, linear_fit, simpson_weights};
use crate::target::{GaussianTarget, GeneratorTarget, Target};

/// Mahalanobis radius beyond which kernel contributions are dropped.
const CUTOFF: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnisotropicScale {
    pub sigma: f64,
    pub delta: f64,
    pub smoothness: SmoothnessSpec,
}

impl AnisotropicScale {
    pub fn new(sigma: f64, delta: f64, smoothness: SmoothnessSpec) -> Result<Self> {
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(Error::domain("sigma", sigma));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::domain("delta", delta));
        }
        Ok(Self {
            sigma,
            delta,
            smoothness,
        })
    }

    /// Tangential variance `σ^{2α0}`.
    pub fn tangent_var(&self) -> f64 {
        self.sigma.powf(2.0 * self.smoothness.alpha0)
    }

    /// Normal variance `δ² σ^{2α⊥}`.
    pub fn normal_var(&self) -> f64 {
        self.delta * self.delta * self.sigma.powf(2.0 * self.smoothness.alpha_perp)
    }

    /// `σ^{α0 − α⊥} ≤ δ`, the regime the approximation bound covers.
    pub fn is_valid(&self) -> bool {
        self.sigma.powf(self.smoothness.alpha0 - self.smoothness.alpha_perp) <= self.delta * (1.0 + 1e-12)
    }
}

/// `T σ^{2α0} Tᵀ + N δ²σ^{2α⊥} Nᵀ` for orthonormal tangent/normal bases.
pub fn sigma_from_frame(tangent: &DMatrix<f64>, normal: &DMatrix<f64>, scale: &AnisotropicScale) -> DMatrix<f64> {
    tangent * tangent.transpose() * scale.tangent_var() + normal * normal.transpose() * scale.normal_var()
}

/// Covariance at `x`, aligned with the frame at its nearest point on `spec`.
pub fn sigma_at(x: &DVector<f64>, spec: &ManifoldSpec, scale: &AnisotropicScale) -> Result<DMatrix<f64>> {
    let p = spec.project(x)?;
    if p.multi_valued {
        return Err(Error::Precondition(format!("projection of {:?} is not unique", x.as_slice())));
    }
    let (t, n) = spec.frame(&p.coord)?;
    Ok(sigma_from_frame(&t, &n, scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = crate::stats::mean(xs);
        let se = if n > 1 { (crate::stats::variance(xs) / n as f64).sqrt() } else { 0.0 };
        Self { value: mean, se, n }
    }
}

fn gaussian_pdf(r: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Precondition("kernel covariance is not positive definite".into()))?;
    let l = chol.l();
    let z = l.solve_lower_triangular(r).expect("positive diagonal");
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((-0.5 * (r.len() as f64 * (2.0 * PI).ln() + log_det + z.norm_squared())).exp())
}

/// Monte-Carlo estimate of `K_Σ g(x)` with `Y ~ g` and `Σ(Y)` from `sigma`.
pub fn apply_kernel_operator_with(
    g: &dyn Target,
    x: &DVector<f64>,
    sigma: impl Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<McEstimate> {
    if n_mc == 0 {
        return Err(Error::Precondition("n_mc must be at least 1".into()));
    }
    let mut vals = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let y = g.sample(rng)?;
        vals.push(gaussian_pdf(&(x - &y), &sigma(&y)?)?);
    }
    Ok(McEstimate::from_samples(&vals))
}

/// Monte-Carlo estimate of `K_Σ g(x)` with the manifold-adapted `Σ(Y)`.
pub fn apply_kernel_operator(
    g: &dyn Target,
    x: &DVector<f64>,
    spec: &ManifoldSpec,
    scale: &AnisotropicScale,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<McEstimate> {
    apply_kernel_operator_with(g, x, |y| sigma_at(y, spec, scale), n_mc, rng)
}

/// What an error scan smooths and compares against.
#[derive(Debug, Clone, PartialEq)]
pub enum ScanTarget {
    /// A planar curve family under the orthonormal noise model.
    Manifold { spec: ManifoldSpec, noise: NoiseSpec },
    /// `N(0, diag(sd²))` around the flat line, with its own smoothness.
    FlatGaussian {
        sd: [f64; 2],
        delta: f64,
        beta0: f64,
        beta_perp: f64,
    },
}

impl ScanTarget {
    pub fn smoothness(&self) -> Result<SmoothnessSpec> {
        match self {
            ScanTarget::Manifold { spec, noise } => SmoothnessSpec::for_manifold(spec, noise),
            ScanTarget::FlatGaussian { beta0, beta_perp, .. } => SmoothnessSpec::new(*beta0, *beta_perp, 1, 2),
        }
    }

    pub fn delta(&self) -> f64 {
        match self {
            ScanTarget::Manifold { noise, .. } => noise.delta,
            ScanTarget::FlatGaussian { delta, .. } => *delta,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ScanTarget::Manifold { spec, noise } => {
                if spec.ambient_dim() != 2 || matches!(spec, ManifoldSpec::FlatLine) {
                    return Err(Error::Mode("grid scans need a planar curve family".into()));
                }
                if noise.model != NoiseModel::Orthonormal {
                    return Err(Error::Mode("grid scans use the orthonormal noise model".into()));
                }
                spec.validate()?;
                noise.validate()
            }
            ScanTarget::FlatGaussian { sd, .. } => {
                if sd.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::domain("sd", sd[0].min(sd[1])));
                }
                Ok(())
            }
        }
    }

    fn sampler(&self) -> Result<Box<dyn Target>> {
        Ok(match self {
            ScanTarget::Manifold { spec, noise } => Box::new(GeneratorTarget::new(spec.clone(), *noise)?),
            ScanTarget::FlatGaussian { sd, .. } => Box::new(GaussianTarget::new(
                DVector::zeros(2),
                DMatrix::from_diagonal(&DVector::from_column_slice(&[sd[0] * sd[0], sd[1] * sd[1]])),
            )?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRow {
    pub sigma: f64,
    pub sup_error: f64,
    pub hellinger_sq: f64,
    /// Standard error of a Monte-Carlo cross-check of `K_Σ g` at the point of
    /// largest error.
    pub mc_se: f64,
    /// `K_Σ g` there from the Monte-Carlo cross-check.
    pub mc_value: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
    /// Least-squares slope of `log hellinger_sq` against `log σ` over the
    /// valid rows (all rows when fewer than two are valid).
    pub slope: f64,
}

/// Uniform grid with `intervals` cells per axis over a box.
struct Grid {
    x0: [f64; 2],
    h: [f64; 2],
    n: usize,
}

impl Grid {
    fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [self.x0[0] + i as f64 * self.h[0], self.x0[1] + j as f64 * self.h[1]]
    }
}

/// Error of `K_Σ g` against `g` on a `grid × grid` Simpson grid for each `σ`
/// in `sigmas` (which must be decreasing).
pub fn approximation_error_scan(
    target: &ScanTarget,
    sigmas: &[f64],
    grid: usize,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<ScanTable> {
    target.validate()?;
    if sigmas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition("sigma grid must be strictly decreasing".into()));
    }
    if grid < 2 || grid % 2 == 1 {
        return Err(Error::Precondition("grid needs an even number of intervals".into()));
    }
    let smooth = target.smoothness()?;
    let delta = target.delta();
    let sampler = target.sampler()?;
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let scale = AnisotropicScale::new(sigma, delta.min(1.0), smooth)?;
        let scale = AnisotropicScale { delta, ..scale };
        let reach = 4.0 * scale.tangent_var().max(scale.normal_var()).sqrt();
        let (lo, hi) = bounding_box(target);
        let g = Grid {
            x0: [lo[0] - reach, lo[1] - reach],
            h: [(hi[0] - lo[0] + 2.0 * reach) / grid as f64, (hi[1] - lo[1] + 2.0 * reach) / grid as f64],
            n: grid + 1,
        };
        let smoothed = smoothed_on_grid(target, &scale, &g)?;
        let wx = simpson_weights(grid, g.h[0]);
        let wy = simpson_weights(grid, g.h[1]);
        let mut hel = 0.0;
        let mut sup: f64 = 0.0;
        let mut arg = [0.0; 2];
        for i in 0..g.n {
            for j in 0..g.n {
                let p = g.point(i, j);
                let x = DVector::from_column_slice(&p);
                let f0 = sampler.density(&x);
                let k = smoothed[i * g.n + j];
                hel += wx[i] * wy[j] * (k.sqrt() - f0.sqrt()).powi(2);
                let in_tube = match target {
                    ScanTarget::Manifold { spec, .. } => spec.project(&x)?.dist <= delta,
                    ScanTarget::FlatGaussian { .. } => true,
                };
                if in_tube && (k - f0).abs() > sup {
                    sup = (k - f0).abs();
                    arg = p;
                }
            }
        }
        let x = DVector::from_column_slice(&arg);
        let mc = match target {
            ScanTarget::Manifold { spec, .. } => apply_kernel_operator(sampler.as_ref(), &x, spec, &scale, n_mc, rng)?,
            ScanTarget::FlatGaussian { .. } => {
                let s = flat_sigma(&scale);
                apply_kernel_operator_with(sampler.as_ref(), &x, |_| Ok(s.clone()), n_mc, rng)?
            }
        };
        rows.push(ScanRow {
            sigma,
            sup_error: sup,
            hellinger_sq: hel,
            mc_se: mc.se,
            mc_value: mc.value,
            valid: scale.is_valid(),
        });
    }
    let use_rows: Vec<&ScanRow> = if rows.iter().filter(|r| r.valid).count() >= 2 {
        rows.iter().filter(|r| r.valid).collect()
    } else {
        rows.iter().collect()
    };
    let pts: Vec<(f64, f64)> = use_rows
        .iter()
        .filter(|r| r.hellinger_sq > 0.0)
        .map(|r| (r.sigma.ln(), r.hellinger_sq.ln()))
        .collect();
    let slope = if pts.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        linear_fit(&x, &y).0
    } else {
        f64::NAN
    };
    Ok(ScanTable { rows, slope })
}

fn flat_sigma(scale: &AnisotropicScale) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(&[scale.tangent_var(), scale.normal_var()]))
}

fn bounding_box(target: &ScanTarget) -> ([f64; 2], [f64; 2]) {
    match target {
        ScanTarget::FlatGaussian { sd, .. } => ([-6.0 * sd[0], -6.0 * sd[1]], [6.0 * sd[0], 6.0 * sd[1]]),
        ScanTarget::Manifold { spec, noise } => {
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for (c, _) in tube_nodes(spec, noise.beta0, 4096) {
                let y = spec.embed_unchecked(&c);
                for k in 0..2 {
                    lo[k] = lo[k].min(y[k]);
                    hi[k] = hi[k].max(y[k]);
                }
            }
            let pad = noise.delta * 1.01;
            ([lo[0] - pad, lo[1] - pad], [hi[0] + pad, hi[1] + pad])
        }
    }
}

/// Quadrature nodes of the base law along the curve pieces, with weights.
fn tube_nodes(spec: &ManifoldSpec, beta0: f64, n: usize) -> Vec<(Coord, f64)> {
    match *spec {
        ManifoldSpec::TwoCircles { radii, .. } => (0..2)
            .flat_map(|p| {
                let share = radii[p] / (radii[0] + radii[1]);
                (0..n).map(move |k| (Coord::on_piece(p, TAU * k as f64 / n as f64), share / n as f64))
            })
            .collect(),
        _ => (0..n)
            .map(|k| {
                let t = (k as f64 + 0.5) / n as f64;
                (Coord::curve(t), base_density(beta0, t) / n as f64)
            })
            .collect(),
    }
}

/// `K_Σ g` on the grid: closed form for the flat Gaussian; otherwise the law
/// is discretized in (foot, normal offset) and each node's Gaussian is
/// scattered onto the grid points within the cutoff ellipse.
fn smoothed_on_grid(target: &ScanTarget, scale: &AnisotropicScale, g: &Grid) -> Result<Vec<f64>> {
    let mut out = vec![0.0; g.n * g.n];
    match target {
        ScanTarget::FlatGaussian { sd, .. } => {
            let cov = DMatrix::from_diagonal(&DVector::from_column_slice(&[
                sd[0] * sd[0] + scale.tangent_var(),
                sd[1] * sd[1] + scale.normal_var(),
            ]));
            let gt = GaussianTarget::new(DVector::zeros(2), cov)?;
            for i in 0..g.n {
                for j in 0..g.n {
                    out[i * g.n + j] = gt.density(&DVector::from_column_slice(&g.point(i, j)));
                }
            }
        }
        ScanTarget::Manifold { spec, noise } => {
            let tangent_sd = scale.tangent_var().sqrt();
            let max_speed = match *spec {
                ManifoldSpec::TwoCircles { radii, .. } => TAU * radii[0].max(radii[1]),
                _ => spec.speed(&Coord::curve(1.0)).max(spec.speed(&Coord::curve(0.0))),
            };
            // node spacing along the curve at most a third of the tangential sd
            let n_t = ((3.0 * max_speed / tangent_sd).ceil() as usize).clamp(256, 400_000);
            let beta = noise.beta_perp;
            let c_perp = ball_kernel_normalizer(beta, 1) / noise.delta;
            let (s_nodes, s_w) = gauss_legendre_on(32, -noise.delta, noise.delta);
            let weights: Vec<f64> = s_nodes
                .iter()
                .zip(&s_w)
                .map(|(s, w)| w * c_perp * (1.0 - (s / noise.delta).powi(2)).powf(beta))
                .collect();
            for (c, wt) in tube_nodes(spec, noise.beta0, n_t) {
                if wt == 0.0 {
                    continue;
                }
                let y0 = spec.embed_unchecked(&c);
                let (t, n) = spec.frame(&c)?;
                let nv = Vector2::new(n[(0, 0)], n[(1, 0)]);
                let base_sigma = Matrix2::from_iterator(sigma_from_frame(&t, &n, scale).iter().copied());
                for (s, ws) in s_nodes.iter().zip(&weights) {
                    let y = Vector2::new(y0[0], y0[1]) + nv * *s;
                    let sig = if spec.pieces() > 1 {
                        let yy = DVector::from_column_slice(y.as_slice());
                        let p = spec.project(&yy)?;
                        let (t2, n2) = spec.frame(&p.coord)?;
                        Matrix2::from_iterator(sigma_from_frame(&t2, &n2, scale).iter().copied())
                    } else {
                        base_sigma
                    };
                    scatter(&mut out, g, &y, &sig, wt * ws);
                }
            }
        }
    }
    Ok(out)
}

fn scatter(out: &mut [f64], g: &Grid, y: &Vector2<f64>, sig: &Matrix2<f64>, w: f64) {
    let inv = sig.try_inverse().expect("SPD kernel covariance");
    let norm = w / (TAU * sig.determinant().sqrt());
    let rx = CUTOFF * sig[(0, 0)].sqrt();
    let ry = CUTOFF * sig[(1, 1)].sqrt();
    let i0 = (((y[0] - rx - g.x0[0]) / g.h[0]).floor().max(0.0)) as usize;
    let i1 = (((y[0] + rx - g.x0[0]) / g.h[0]).ceil().min((g.n - 1) as f64)).max(0.0) as usize;
    let j0 = (((y[1] - ry - g.x0[1]) / g.h[1]).floor().max(0.0)) as usize;
    let j1 = (((y[1] + ry - g.x0[1]) / g.h[1]).ceil().min((g.n - 1) as f64)).max(0.0) as usize;
    for i in i0..=i1 {
        let dx = g.x0[0] + i as f64 * g.h[0] - y[0];
        for j in j0..=j1 {
            let dy = g.x0[1] + j as f64 * g.h[1] - y[1];
            let q = inv[(0, 0)] * dx * dx + 2.0 * inv[(0, 1)] * dx * dy + inv[(1, 1)] * dy * dy;
            if q < CUTOFF * CUTOFF {
                out[i * g.n + j] += norm * (-0.5 * q).exp();
            }
        }
    }
}

pub fn write_scan_csv(table: &ScanTable, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "sigma,sup_error,hellinger_sq,mc_se,valid_flag")?;
    for r in &table.rows {
        writeln!(w, "{},{},{},{},{}", r.sigma, r.sup_error, r.hellinger_sq, r.mc_se, u8::from(r.valid))?;
    }
    w.flush()?;
    Ok(())
}

/// Density of `g` itself on the same terms as the scan, exposed for tests.
pub fn scan_truth(target: &ScanTarget, x: &DVector<f64>) -> Result<f64> {
    match target {
        ScanTarget::Manifold { spec, noise } => true_density(spec, noise, x),
        ScanTarget::FlatGaussian { .. } => Ok(target.sampler()?.density(x)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale(sigma: f64, delta: f64) -> AnisotropicScale {
        AnisotropicScale::new(sigma, delta, SmoothnessSpec::new(2.0, 6.0, 1, 2).unwrap()).unwrap()
    }

    #[test]
    fn circle_sigma_is_axis_aligned() {
        let spec = ManifoldSpec::TwoCircles {
            centers: [[0.0, 0.0], [10.0, 0.0]],
            radii: [2.0, 2.0],
        };
        let s = scale(0.3, 0.5);
        let m = sigma_at(&DVector::from_column_slice(&[2.1, 0.0]), &spec, &s).unwrap();
        assert!((m[(0, 0)] - 0.25 * 0.3f64.powf(1.0)).abs() < 1e-14);
        assert!((m[(1, 1)] - 0.3f64.powf(3.0)).abs() < 1e-14);
        assert!(m[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn determinant_is_constant() {
        let spec = ManifoldSpec::spiral_2d();
        let s = scale(0.2, 0.1);
        for i in 1..20 {
            let c = Coord::curve(i as f64 / 20.0);
            let (_, n) = spec.frame(&c).unwrap();
            let x = spec.embed(&c).unwrap() + n.column(0) * 0.01;
            let m = sigma_at(&x, &spec, &s).unwrap();
            let expected = 0.2f64.powi(4) * 0.1f64.powi(2);
            assert!((m.determinant() / expected - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn frame_choice_does_not_matter() {
        let s = scale(0.3, 0.5);
        let t = DMatrix::from_column_slice(2, 1, &[0.6, 0.8]);
        let n = DMatrix::from_column_slice(2, 1, &[-0.8, 0.6]);
        let a = sigma_from_frame(&t, &n, &s);
        let b = sigma_from_frame(&(-&t), &(-&n), &s);
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn point_mass_is_exact() {
        let y0 = DVector::from_column_slice(&[2.05, 0.1]);
        let spec = ManifoldSpec::two_circles();
        let s = scale(0.3, 0.5);
        let x = DVector::from_column_slice(&[2.0, 0.3]);
        let mut rng = RngStream::new(1, 0);
        let est = apply_kernel_operator(&crate::target::PointMass(y0.clone()), &x, &spec, &s, 7, &mut rng).unwrap();
        let exact = gaussian_pdf(&(&x - &y0), &sigma_at(&y0, &spec, &s).unwrap()).unwrap();
        assert!((est.value / exact - 1.0).abs() < 1e-14);
        assert!(est.se < 1e-12 * exact);
    }

    #[test]
    fn invalid_sigma_is_flagged() {
        assert!(!scale(0.4, 0.1).is_valid());
        assert!(scale(0.05, 0.1).is_valid());
    }
}
