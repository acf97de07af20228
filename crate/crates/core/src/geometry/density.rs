//! Exact densities of the generative law for both noise models.

use std::f64::consts::{PI, TAU};

use nalgebra::DVector;
use statrs::function::gamma::ln_gamma;

use super::manifold::{Coord, ManifoldSpec};
use super::{NoiseModel, NoiseSpec};
use crate::distributions::base_density;
use crate::error::{Error, Result};
use crate::stats::gauss_legendre_on;

const NODES: usize = 64;
const TORUS_NODES: usize = 48;
const BISECT: usize = 60;

/// `1 / ∫_{B_k} (1 − ‖u‖²)^β du`, the constant turning the compact kernel into
/// a probability density on the `k`-dimensional unit ball.
pub fn ball_kernel_normalizer(beta: f64, k: usize) -> f64 {
    let h = 0.5 * k as f64;
    (ln_gamma(beta + 1.0 + h) - ln_gamma(beta + 1.0) - h * PI.ln()).exp()
}

/// Density of the base measure with respect to the manifold's volume measure.
pub fn base_density_on_manifold(spec: &ManifoldSpec, beta0: f64, c: &Coord) -> f64 {
    match *spec {
        ManifoldSpec::Spiral2d { .. } | ManifoldSpec::Spiral3d { .. } => base_density(beta0, c.t[0]) / spec.speed(c),
        ManifoldSpec::TwoCircles { radii, .. } => 1.0 / (TAU * (radii[0] + radii[1])),
        ManifoldSpec::Torus { major, minor, .. } => 1.0 / (4.0 * PI * PI * major * minor),
        ManifoldSpec::FlatLine => 0.0,
    }
}

/// Lebesgue density at `x` of `X + δE` with `X` from the base measure and `E`
/// from the noise model.
pub fn true_density(spec: &ManifoldSpec, noise: &NoiseSpec, x: &DVector<f64>) -> Result<f64> {
    if matches!(spec, ManifoldSpec::FlatLine) {
        return Err(Error::Mode("the flat line has no base measure".into()));
    }
    if x.len() != spec.ambient_dim() {
        return Err(Error::Precondition(format!(
            "point has dimension {}, manifold lives in R^{}",
            x.len(),
            spec.ambient_dim()
        )));
    }
    Ok(match noise.model {
        NoiseModel::Orthonormal => (0..spec.pieces())
            .map(|p| orthonormal_piece(spec, noise.beta0, noise.beta_perp, noise.delta, x, p))
            .sum(),
        NoiseModel::Isotropic => (0..spec.pieces())
            .map(|p| isotropic_piece(spec, noise.beta0, noise.beta_perp, noise.delta, x, p))
            .sum(),
    })
}

/// Orthonormal model, one connected piece. Tube coordinates `x = y + δ N e`
/// have Jacobian `1 − δ⟨κ(y), N e⟩` for curves and the product of the two
/// principal stretch factors on the torus.
pub(crate) fn orthonormal_piece(
    spec: &ManifoldSpec,
    beta0: f64,
    beta_perp: f64,
    delta: f64,
    x: &DVector<f64>,
    piece: usize,
) -> f64 {
    let p = spec.project_piece(x, piece);
    if p.dist >= delta {
        return 0.0;
    }
    let Ok((tangent, normal)) = spec.frame(&p.coord) else {
        return 0.0;
    };
    let r = x - &p.foot;
    // a foot at a curve endpoint leaves a tangential residual: not reachable
    if (tangent.transpose() * &r).amax() > 1e-8 * (1.0 + r.norm()) {
        return 0.0;
    }
    let jac = match *spec {
        ManifoldSpec::Torus { major, minor, .. } => {
            let s = normal.column(0).dot(&r);
            let v = p.coord.t[1];
            (1.0 + s / minor) * (1.0 + s * v.cos() / (major + minor * v.cos()))
        }
        _ => 1.0 - spec.curvature_vector(&p.coord).dot(&r),
    };
    if !(jac > 0.0) {
        return 0.0;
    }
    let k = spec.ambient_dim() - spec.intrinsic_dim();
    let e2 = (p.dist / delta).powi(2);
    base_density_on_manifold(spec, beta0, &p.coord) * ball_kernel_normalizer(beta_perp, k) * (1.0 - e2).powf(beta_perp)
        / (delta.powi(k as i32) * jac)
}

/// Isotropic model, one connected piece: quadrature of the base measure
/// against the ambient kernel over the part of the piece inside `B(x, δ)`.
pub(crate) fn isotropic_piece(
    spec: &ManifoldSpec,
    beta0: f64,
    beta_perp: f64,
    delta: f64,
    x: &DVector<f64>,
    piece: usize,
) -> f64 {
    let dim = spec.ambient_dim();
    let scale = ball_kernel_normalizer(beta_perp, dim) / delta.powi(dim as i32);
    let kern = |d2: f64| {
        let u = 1.0 - d2 / (delta * delta);
        if u > 0.0 {
            u.powf(beta_perp)
        } else {
            0.0
        }
    };
    match *spec {
        ManifoldSpec::TwoCircles { centers, radii } => {
            let r = radii[piece];
            let (dx, dy) = (x[0] - centers[piece][0], x[1] - centers[piece][1]);
            let rho = dx.hypot(dy);
            let (lo, hi) = if rho == 0.0 {
                if r >= delta {
                    return 0.0;
                }
                (0.0, TAU)
            } else {
                let cos_half = (rho * rho + r * r - delta * delta) / (2.0 * r * rho);
                if cos_half >= 1.0 {
                    return 0.0;
                }
                let half = if cos_half <= -1.0 { PI } else { cos_half.acos() };
                let mid = dy.atan2(dx);
                (mid - half, mid + half)
            };
            let (nodes, w) = gauss_legendre_on(NODES, lo, hi);
            let f_star = 1.0 / (TAU * (radii[0] + radii[1]));
            let sum: f64 = nodes
                .iter()
                .zip(&w)
                .map(|(th, w)| {
                    let d2 = rho * rho + r * r - 2.0 * r * rho * (th - dy.atan2(dx)).cos();
                    w * kern(d2)
                })
                .sum();
            scale * f_star * r * sum
        }
        ManifoldSpec::Spiral2d { .. } | ManifoldSpec::Spiral3d { .. } => {
            let p = spec.project_piece(x, 0);
            if p.dist >= delta {
                return 0.0;
            }
            let d2 = |t: f64| (spec.embed_unchecked(&Coord::curve(t)) - x).norm_squared();
            let t0 = p.coord.t[0];
            let lo = crossing(&d2, spec, t0, 0.0, delta);
            let hi = crossing(&d2, spec, t0, 1.0, delta);
            let (nodes, w) = gauss_legendre_on(NODES, lo, hi);
            let sum: f64 = nodes
                .iter()
                .zip(&w)
                .map(|(t, w)| w * base_density(beta0, *t) * kern(d2(*t)))
                .sum();
            scale * sum
        }
        ManifoldSpec::Torus {
            center,
            major,
            minor,
        } => {
            let (dx, dy, dz) = (x[0] - center[0], x[1] - center[1], x[2] - center[2]);
            let rho = dx.hypot(dy);
            // squared distance is c(Δu) + 2 r a(Δu) cos(v − v*)
            let parts = |du: f64| {
                let c = rho * rho + dz * dz + major * major + minor * minor - 2.0 * rho * major * du.cos();
                let (p, q) = (major - rho * du.cos(), -dz);
                (c, p.hypot(q), q.atan2(p))
            };
            let gap = |du: f64| {
                let (c, a, _) = parts(du);
                c - 2.0 * minor * a - delta * delta
            };
            if gap(0.0) >= 0.0 {
                return 0.0;
            }
            let du_max = if gap(PI) < 0.0 {
                PI
            } else {
                let (mut a, mut b) = (0.0, PI);
                for _ in 0..BISECT {
                    let m = 0.5 * (a + b);
                    if gap(m) < 0.0 {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                b
            };
            let (us, wu) = gauss_legendre_on(TORUS_NODES, -du_max, du_max);
            let mut total = 0.0;
            for (du, wu) in us.iter().zip(&wu) {
                let (c, a, vstar) = parts(*du);
                let cos_half = if a > 0.0 {
                    (delta * delta - c) / (2.0 * minor * a)
                } else if c < delta * delta {
                    1.0
                } else {
                    -1.0
                };
                if cos_half <= -1.0 {
                    continue;
                }
                let half = if cos_half >= 1.0 { PI } else { PI - cos_half.acos() };
                let (vs, wv) = gauss_legendre_on(TORUS_NODES, vstar + PI - half, vstar + PI + half);
                let inner: f64 = vs
                    .iter()
                    .zip(&wv)
                    .map(|(v, w)| w * (major + minor * v.cos()) * kern(c + 2.0 * minor * a * (v - vstar).cos()))
                    .sum();
                total += wu * inner;
            }
            scale * total / (4.0 * PI * PI * major)
        }
        ManifoldSpec::FlatLine => 0.0,
    }
}

/// Walks from `t0` (inside the ball) towards `end` and returns the parameter
/// where the curve leaves `B(x, δ)`, or `end` if it never does.
fn crossing(d2: &impl Fn(f64) -> f64, spec: &ManifoldSpec, t0: f64, end: f64, delta: f64) -> f64 {
    let dir = if end > t0 { 1.0 } else { -1.0 };
    let r2 = delta * delta;
    let mut inside = t0;
    loop {
        let step = delta / (4.0 * spec.speed(&Coord::curve(inside)));
        let next = inside + dir * step;
        if (next - end) * dir >= 0.0 {
            if d2(end) < r2 {
                return end;
            }
            return bisect(d2, inside, end, r2);
        }
        if d2(next) >= r2 {
            return bisect(d2, inside, next, r2);
        }
        inside = next;
    }
}

fn bisect(d2: &impl Fn(f64) -> f64, mut inside: f64, mut outside: f64, r2: f64) -> f64 {
    for _ in 0..BISECT {
        let m = 0.5 * (inside + outside);
        if d2(m) < r2 {
            inside = m;
        } else {
            outside = m;
        }
    }
    0.5 * (inside + outside)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::simpson_weights;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn normalizer_matches_quadrature() {
        // k = 1: 1/∫(1−u²)^6 du
        let n = 20_000;
        let w = simpson_weights(n, 2.0 / n as f64);
        let z: f64 = (0..=n).map(|i| w[i] * (1.0 - (-1.0 + 2.0 * i as f64 / n as f64).powi(2)).powi(6)).sum();
        assert!((ball_kernel_normalizer(6.0, 1) * z - 1.0).abs() < 1e-10);
        // k = 2: π/(β+1)
        assert!((ball_kernel_normalizer(6.0, 2) - 7.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn zero_outside_tube() {
        for model in [NoiseModel::Isotropic, NoiseModel::Orthonormal] {
            let noise = NoiseSpec::new(model, 0.1);
            assert_eq!(true_density(&ManifoldSpec::two_circles(), &noise, &v(&[5.0, 5.0])).unwrap(), 0.0);
            assert_eq!(true_density(&ManifoldSpec::torus(), &noise, &v(&[0.0, 0.0, 0.0])).unwrap(), 0.0);
            assert_eq!(true_density(&ManifoldSpec::spiral_2d(), &noise, &v(&[3.0, 0.0])).unwrap(), 0.0);
        }
    }

    #[test]
    fn orthonormal_circle_closed_form() {
        let spec = ManifoldSpec::TwoCircles {
            centers: [[0.0, 0.0], [20.0, 0.0]],
            radii: [2.0, 2.0],
        };
        let noise = NoiseSpec::new(NoiseModel::Orthonormal, 0.1);
        let got = true_density(&spec, &noise, &v(&[2.05, 0.0])).unwrap();
        let n = 20_000;
        let w = simpson_weights(n, 2.0 / n as f64);
        let z: f64 = (0..=n).map(|i| w[i] * (1.0 - (-1.0 + 2.0 * i as f64 / n as f64).powi(2)).powi(6)).sum();
        // base density over both (equal) circles, then the outward area stretch r/(r+s)
        let expected = (1.0 / (TAU * 4.0)) / z / 0.1 * 0.75f64.powi(6) * (2.0 / 2.05);
        assert!((got / expected - 1.0).abs() < 1e-9, "{got} vs {expected}");
    }

    /// Brute-force quadrature over the whole parameter domain.
    fn isotropic_brute(spec: &ManifoldSpec, noise: &NoiseSpec, x: &DVector<f64>) -> f64 {
        let dim = spec.ambient_dim();
        let scale = ball_kernel_normalizer(noise.beta_perp, dim) / noise.delta.powi(dim as i32);
        let kern = |y: DVector<f64>| {
            let u = 1.0 - (y - x).norm_squared() / (noise.delta * noise.delta);
            if u > 0.0 {
                u.powf(noise.beta_perp)
            } else {
                0.0
            }
        };
        match spec {
            ManifoldSpec::Torus { .. } => {
                let n = 1200;
                let h = TAU / n as f64;
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let c = Coord::surface(i as f64 * h, j as f64 * h);
                        let (major, minor) = (3.0, 1.0);
                        s += h * h * minor * (major + minor * c.t[1].cos())
                            * base_density_on_manifold(spec, noise.beta0, &c)
                            * kern(spec.embed_unchecked(&c));
                    }
                }
                scale * s
            }
            _ => {
                let n = 400_000;
                let w = simpson_weights(n, 1.0 / n as f64);
                scale
                    * (0..=n)
                        .map(|i| {
                            let t = i as f64 / n as f64;
                            w[i] * base_density(noise.beta0, t) * kern(spec.embed_unchecked(&Coord::curve(t)))
                        })
                        .sum::<f64>()
            }
        }
    }

    #[test]
    fn isotropic_matches_brute_force() {
        let noise = NoiseSpec::new(NoiseModel::Isotropic, 0.1);
        let spiral = ManifoldSpec::spiral_2d();
        let c = Coord::curve(0.4);
        let (_, n) = spiral.frame(&c).unwrap();
        let x = spiral.embed(&c).unwrap() + n.column(0) * 0.03;
        let (a, b) = (true_density(&spiral, &noise, &x).unwrap(), isotropic_brute(&spiral, &noise, &x));
        assert!((a / b - 1.0).abs() < 1e-4, "{a} vs {b}");

        let torus = ManifoldSpec::torus();
        let noise = NoiseSpec::new(NoiseModel::Isotropic, 0.3);
        let x = v(&[2.1, 0.4, 0.9]);
        let p = torus.project(&x).unwrap();
        assert!(p.dist < 0.3);
        let (a, b) = (true_density(&torus, &noise, &x).unwrap(), isotropic_brute(&torus, &noise, &x));
        assert!((a / b - 1.0).abs() < 1e-3, "{a} vs {b}");
    }

    #[test]
    fn isotropic_flat_limit_on_circle() {
        // δ ≪ r: the normal profile is the 1-D marginal of the 2-D kernel,
        // ∝ (1 − s²)^{β+1/2}
        let spec = ManifoldSpec::TwoCircles {
            centers: [[0.0, 0.0], [20.0, 0.0]],
            radii: [2.0, 2.0],
        };
        let noise = NoiseSpec::new(NoiseModel::Isotropic, 1e-4);
        let s = 0.5;
        let got = true_density(&spec, &noise, &v(&[2.0 + s * 1e-4, 0.0])).unwrap();
        let beta: f64 = 6.0;
        let marginal = ball_kernel_normalizer(beta, 2) * (PI.sqrt() * (ln_gamma(beta + 1.0) - ln_gamma(beta + 1.5)).exp());
        let expected = (1.0 / (TAU * 4.0)) * marginal * (1.0 - s * s).powf(beta + 0.5) / 1e-4;
        assert!((got / expected - 1.0).abs() < 1e-3, "{got} vs {expected}");
    }
}
