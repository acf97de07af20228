//! Parametric manifolds: embeddings, frames and nearest-point projection.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid size used to seed spiral projections.
const SPIRAL_GRID: usize = 512;
const REFINE_STEPS: usize = 60;

/// A parametric manifold family with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldSpec {
    /// `t ∈ [0,1] ↦ R s (cos s, sin s)` with `s = ωt + θ0`.
    #[serde(rename = "spiral_2d")]
    Spiral2d { radius: f64, omega: f64, theta0: f64 },
    /// Union of two circles, each parameterized by an angle in `[0, 2π)`.
    TwoCircles { centers: [[f64; 2]; 2], radii: [f64; 2] },
    /// `t ∈ [0,1] ↦ (R s cos s, R s sin s, ν t)` with `s = ωt + θ0`.
    #[serde(rename = "spiral_3d")]
    Spiral3d { radius: f64, omega: f64, theta0: f64, nu: f64 },
    /// Torus of revolution around the z-axis through `center`.
    Torus { center: [f64; 3], major: f64, minor: f64 },
    /// The x-axis of the plane. Only used as a flat reference geometry by the
    /// kernel-operator oracles; not available to the data generator.
    FlatLine,
}

/// Intrinsic coordinates: the connected piece and up to two parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coord {
    pub piece: usize,
    pub t: [f64; 2],
}

impl Coord {
    pub fn curve(t: f64) -> Self {
        Self { piece: 0, t: [t, 0.0] }
    }

    pub fn on_piece(piece: usize, t: f64) -> Self {
        Self { piece, t: [t, 0.0] }
    }

    pub fn surface(u: f64, v: f64) -> Self {
        Self { piece: 0, t: [u, v] }
    }
}

/// Result of a nearest-point projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coord: Coord,
    pub foot: DVector<f64>,
    pub dist: f64,
    /// Set when several feet are (numerically) equally close.
    pub multi_valued: bool,
}

impl ManifoldSpec {
    pub fn spiral_2d() -> Self {
        ManifoldSpec::Spiral2d {
            radius: 1.0 / TAU,
            omega: 3.5 * PI,
            theta0: 0.5 * PI,
        }
    }

    pub fn two_circles() -> Self {
        ManifoldSpec::TwoCircles {
            centers: [[0.0, 0.0], [2.0, 0.0]],
            radii: [2.0, 2.0],
        }
    }

    pub fn spiral_3d() -> Self {
        ManifoldSpec::Spiral3d {
            radius: 1.0 / TAU,
            omega: 3.5 * PI,
            theta0: 0.5 * PI,
            nu: 2.0,
        }
    }

    pub fn torus() -> Self {
        ManifoldSpec::Torus {
            center: [0.0; 3],
            major: 3.0,
            minor: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ManifoldSpec::Spiral2d { .. } => "spiral_2d",
            ManifoldSpec::TwoCircles { .. } => "two_circles",
            ManifoldSpec::Spiral3d { .. } => "spiral_3d",
            ManifoldSpec::Torus { .. } => "torus",
            ManifoldSpec::FlatLine => "flat_line",
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self {
            ManifoldSpec::Torus { .. } => 2,
            _ => 1,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            ManifoldSpec::Spiral3d { .. } | ManifoldSpec::Torus { .. } => 3,
            _ => 2,
        }
    }

    pub fn pieces(&self) -> usize {
        match self {
            ManifoldSpec::TwoCircles { .. } => 2,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::domain(name, v))
            }
        };
        match *self {
            ManifoldSpec::Spiral2d { radius, omega, theta0 } => {
                pos("radius", radius)?;
                pos("omega", omega)?;
                if !(theta0 > 0.0) {
                    return Err(Error::domain("theta0", theta0));
                }
            }
            ManifoldSpec::Spiral3d { radius, omega, theta0, nu } => {
                pos("radius", radius)?;
                pos("omega", omega)?;
                pos("nu", nu)?;
                if !(theta0 > 0.0) {
                    return Err(Error::domain("theta0", theta0));
                }
            }
            ManifoldSpec::TwoCircles { radii, .. } => {
                pos("radius", radii[0])?;
                pos("radius", radii[1])?;
            }
            ManifoldSpec::Torus { major, minor, .. } => {
                pos("minor", minor)?;
                pos("major", major)?;
                if minor >= major {
                    return Err(Error::Precondition("torus needs minor < major".into()));
                }
            }
            ManifoldSpec::FlatLine => {}
        }
        Ok(())
    }

    fn check_domain(&self, c: &Coord) -> Result<()> {
        let unit = |t: f64| (0.0..=1.0).contains(&t);
        let angle = |t: f64| (0.0..TAU).contains(&t);
        let ok = match self {
            ManifoldSpec::Spiral2d { .. } | ManifoldSpec::Spiral3d { .. } => c.piece == 0 && unit(c.t[0]),
            ManifoldSpec::TwoCircles { .. } => c.piece < 2 && angle(c.t[0]),
            ManifoldSpec::Torus { .. } => c.piece == 0 && angle(c.t[0]) && angle(c.t[1]),
            ManifoldSpec::FlatLine => c.piece == 0 && c.t[0].is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::OutOfDomain(format!("{} at {:?}", self.name(), c)))
        }
    }

    /// Point on the manifold at intrinsic coordinate `c`.
    pub fn embed(&self, c: &Coord) -> Result<DVector<f64>> {
        self.check_domain(c)?;
        Ok(self.embed_unchecked(c))
    }

    pub(crate) fn embed_unchecked(&self, c: &Coord) -> DVector<f64> {
        match *self {
            ManifoldSpec::Spiral2d { radius, omega, theta0 } => {
                let s = omega * c.t[0] + theta0;
                DVector::from_column_slice(&[radius * s * s.cos(), radius * s * s.sin()])
            }
            ManifoldSpec::Spiral3d { radius, omega, theta0, nu } => {
                let s = omega * c.t[0] + theta0;
                DVector::from_column_slice(&[radius * s * s.cos(), radius * s * s.sin(), nu * c.t[0]])
            }
            ManifoldSpec::TwoCircles { centers, radii } => {
                let (k, th) = (c.piece, c.t[0]);
                DVector::from_column_slice(&[centers[k][0] + radii[k] * th.cos(), centers[k][1] + radii[k] * th.sin()])
            }
            ManifoldSpec::Torus { center, major, minor } => {
                let (u, v) = (c.t[0], c.t[1]);
                let rho = major + minor * v.cos();
                DVector::from_column_slice(&[
                    center[0] + rho * u.cos(),
                    center[1] + rho * u.sin(),
                    center[2] + minor * v.sin(),
                ])
            }
            ManifoldSpec::FlatLine => DVector::from_column_slice(&[c.t[0], 0.0]),
        }
    }

    /// First and second derivatives of a curve embedding in its parameter.
    pub(crate) fn curve_derivatives(&self, c: &Coord) -> (DVector<f64>, DVector<f64>) {
        match *self {
            ManifoldSpec::Spiral2d { radius, omega, theta0 } => {
                let s = omega * c.t[0] + theta0;
                let (sn, cs) = s.sin_cos();
                (
                    DVector::from_column_slice(&[radius * omega * (cs - s * sn), radius * omega * (sn + s * cs)]),
                    DVector::from_column_slice(&[
                        radius * omega * omega * (-2.0 * sn - s * cs),
                        radius * omega * omega * (2.0 * cs - s * sn),
                    ]),
                )
            }
            ManifoldSpec::Spiral3d { radius, omega, theta0, nu } => {
                let s = omega * c.t[0] + theta0;
                let (sn, cs) = s.sin_cos();
                (
                    DVector::from_column_slice(&[radius * omega * (cs - s * sn), radius * omega * (sn + s * cs), nu]),
                    DVector::from_column_slice(&[
                        radius * omega * omega * (-2.0 * sn - s * cs),
                        radius * omega * omega * (2.0 * cs - s * sn),
                        0.0,
                    ]),
                )
            }
            ManifoldSpec::TwoCircles { radii, .. } => {
                let (k, th) = (c.piece, c.t[0]);
                let (sn, cs) = th.sin_cos();
                let r = radii[k];
                (
                    DVector::from_column_slice(&[-r * sn, r * cs]),
                    DVector::from_column_slice(&[-r * cs, -r * sn]),
                )
            }
            ManifoldSpec::FlatLine => (DVector::from_column_slice(&[1.0, 0.0]), DVector::zeros(2)),
            ManifoldSpec::Torus { .. } => panic!("torus is not a curve"),
        }
    }

    /// Orthonormal tangent (`D × d`) and normal (`D × (D − d)`) bases at `c`.
    pub fn frame(&self, c: &Coord) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_domain(c)?;
        let frame = match *self {
            ManifoldSpec::Torus { .. } => {
                let (u, v) = (c.t[0], c.t[1]);
                let (su, cu) = u.sin_cos();
                let (sv, cv) = v.sin_cos();
                let tangent = DMatrix::from_column_slice(3, 2, &[-su, cu, 0.0, -sv * cu, -sv * su, cv]);
                let normal = DMatrix::from_column_slice(3, 1, &[cv * cu, cv * su, sv]);
                (tangent, normal)
            }
            _ => {
                let (d1, _) = self.curve_derivatives(c);
                let speed = d1.norm();
                if !(speed > 1e-14) {
                    return Err(Error::Precondition(format!("degenerate Jacobian at {c:?}")));
                }
                let t = d1 / speed;
                if t.len() == 2 {
                    let n = DVector::from_column_slice(&[-t[1], t[0]]);
                    (DMatrix::from_column_slice(2, 1, t.as_slice()), DMatrix::from_column_slice(2, 1, n.as_slice()))
                } else {
                    let ez = DVector::from_column_slice(&[0.0, 0.0, 1.0]);
                    let mut n1 = &ez - &t * t.dot(&ez);
                    n1 /= n1.norm();
                    let n2 = t.cross(&n1);
                    (
                        DMatrix::from_column_slice(3, 1, t.as_slice()),
                        DMatrix::from_columns(&[n1, n2]),
                    )
                }
            }
        };
        Ok(frame)
    }

    /// Curvature vector of a curve at `c` (zero for the flat line).
    pub(crate) fn curvature_vector(&self, c: &Coord) -> DVector<f64> {
        let (d1, d2) = self.curve_derivatives(c);
        let speed2 = d1.norm_squared();
        let t = &d1 / speed2.sqrt();
        (&d2 - &t * d2.dot(&t)) / speed2
    }

    /// Nearest point on the manifold.
    pub fn project(&self, x: &DVector<f64>) -> Result<Projection> {
        if x.len() != self.ambient_dim() {
            return Err(Error::Precondition(format!(
                "point has dimension {}, manifold lives in R^{}",
                x.len(),
                self.ambient_dim()
            )));
        }
        Ok(match *self {
            ManifoldSpec::TwoCircles { .. } => {
                let a = self.project_piece(x, 0);
                let b = self.project_piece(x, 1);
                if (a.dist - b.dist).abs() <= 1e-12 * (1.0 + a.dist) {
                    Projection { multi_valued: true, ..a }
                } else if a.dist < b.dist {
                    a
                } else {
                    b
                }
            }
            _ => self.project_piece(x, 0),
        })
    }

    /// Nearest point on one connected piece.
    pub fn project_piece(&self, x: &DVector<f64>, piece: usize) -> Projection {
        match *self {
            ManifoldSpec::TwoCircles { centers, radii } => {
                let (cx, cy) = (centers[piece][0], centers[piece][1]);
                let (dx, dy) = (x[0] - cx, x[1] - cy);
                let rho = dx.hypot(dy);
                let multi = rho < 1e-14;
                let th = if multi { 0.0 } else { dy.atan2(dx).rem_euclid(TAU) };
                let th = if th >= TAU { 0.0 } else { th };
                let coord = Coord::on_piece(piece, th);
                let foot = self.embed_unchecked(&coord);
                Projection {
                    coord,
                    dist: (x - &foot).norm().max((rho - radii[piece]).abs()),
                    foot,
                    multi_valued: multi,
                }
            }
            ManifoldSpec::Torus { center, major, .. } => {
                let (dx, dy, dz) = (x[0] - center[0], x[1] - center[1], x[2] - center[2]);
                let rho = dx.hypot(dy);
                let on_axis = rho < 1e-14;
                let u = if on_axis { 0.0 } else { dy.atan2(dx).rem_euclid(TAU) };
                let (pr, pz) = (rho - major, dz);
                let on_core = pr.hypot(pz) < 1e-14;
                let v = if on_core { 0.0 } else { pz.atan2(pr).rem_euclid(TAU) };
                let wrap = |a: f64| if a >= TAU { 0.0 } else { a };
                let coord = Coord::surface(wrap(u), wrap(v));
                let foot = self.embed_unchecked(&coord);
                Projection {
                    coord,
                    dist: (x - &foot).norm(),
                    foot,
                    multi_valued: on_axis || on_core,
                }
            }
            ManifoldSpec::FlatLine => {
                let coord = Coord::curve(x[0]);
                Projection {
                    coord,
                    foot: DVector::from_column_slice(&[x[0], 0.0]),
                    dist: x[1].abs(),
                    multi_valued: false,
                }
            }
            ManifoldSpec::Spiral2d { .. } | ManifoldSpec::Spiral3d { .. } => self.project_spiral(x),
        }
    }

    fn project_spiral(&self, x: &DVector<f64>) -> Projection {
        let h = 1.0 / (SPIRAL_GRID - 1) as f64;
        let d2: Vec<f64> = (0..SPIRAL_GRID)
            .map(|i| (self.embed_unchecked(&Coord::curve(i as f64 * h)) - x).norm_squared())
            .collect();
        // local minima of the grid, best first
        let mut seeds: Vec<usize> = (0..SPIRAL_GRID)
            .filter(|&i| (i == 0 || d2[i] <= d2[i - 1]) && (i + 1 == SPIRAL_GRID || d2[i] <= d2[i + 1]))
            .collect();
        seeds.sort_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(a.cmp(&b)));
        seeds.truncate(4);
        let mut best: Vec<(f64, f64)> = seeds
            .iter()
            .map(|&i| {
                let lo = if i == 0 { 0.0 } else { (i - 1) as f64 * h };
                let hi = if i + 1 == SPIRAL_GRID { 1.0 } else { (i + 1) as f64 * h };
                let t = self.refine_curve(x, lo, hi);
                (t, (self.embed_unchecked(&Coord::curve(t)) - x).norm())
            })
            .collect();
        best.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
        let (t, dist) = best[0];
        let multi = best
            .iter()
            .skip(1)
            .any(|&(t2, d2)| (t2 - t).abs() > 1e-6 && (d2 - dist).abs() <= 1e-9 * (1.0 + dist));
        let coord = Coord::curve(t);
        Projection {
            coord,
            foot: self.embed_unchecked(&coord),
            dist,
            multi_valued: multi,
        }
    }

    /// Minimizes `‖φ(t) − x‖²` over `[lo, hi]` with safeguarded Newton steps on
    /// the derivative.
    fn refine_curve(&self, x: &DVector<f64>, lo: f64, hi: f64) -> f64 {
        let grad = |t: f64| {
            let c = Coord::curve(t);
            let (d1, d2) = self.curve_derivatives(&c);
            let r = self.embed_unchecked(&c) - x;
            (r.dot(&d1), d1.norm_squared() + r.dot(&d2))
        };
        let (mut a, mut b) = (lo, hi);
        let (ga, _) = grad(a);
        let (gb, _) = grad(b);
        if ga >= 0.0 && gb >= 0.0 {
            return a.max(self.local_min_no_bracket(x, a, b));
        }
        if ga <= 0.0 && gb <= 0.0 {
            return self.local_min_no_bracket(x, a, b);
        }
        // ga < 0 < gb: a root of the derivative is bracketed
        let mut t = 0.5 * (a + b);
        for _ in 0..REFINE_STEPS {
            let (g, hss) = grad(t);
            if g == 0.0 || b - a < 1e-15 {
                break;
            }
            if g < 0.0 {
                a = t;
            } else {
                b = t;
            }
            let newton = t - g / hss;
            let next = if hss > 0.0 && newton >= a && newton <= b {
                newton
            } else {
                0.5 * (a + b)
            };
            if next == t {
                break;
            }
            t = next;
        }
        t
    }

    /// Golden-section fallback when the derivative does not change sign.
    fn local_min_no_bracket(&self, x: &DVector<f64>, lo: f64, hi: f64) -> f64 {
        let f = |t: f64| (self.embed_unchecked(&Coord::curve(t)) - x).norm_squared();
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        for _ in 0..REFINE_STEPS {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) <= f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let m = 0.5 * (a + b);
        [lo, m, hi]
            .into_iter()
            .min_by(|p, q| f(*p).total_cmp(&f(*q)).then(p.total_cmp(q)))
            .expect("three candidates")
    }

    /// Speed `‖∂φ/∂t‖` of a curve embedding.
    pub(crate) fn speed(&self, c: &Coord) -> f64 {
        self.curve_derivatives(c).0.norm()
    }

    /// Total Hausdorff measure of each piece.
    pub fn piece_measures(&self) -> Vec<f64> {
        match *self {
            ManifoldSpec::TwoCircles { radii, .. } => vec![TAU * radii[0], TAU * radii[1]],
            ManifoldSpec::Torus { major, minor, .. } => vec![4.0 * PI * PI * major * minor],
            ManifoldSpec::FlatLine => vec![f64::INFINITY],
            _ => {
                let (x, w) = crate::stats::gauss_legendre_on(200, 0.0, 1.0);
                vec![x.iter().zip(&w).map(|(t, w)| w * self.speed(&Coord::curve(*t))).sum()]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &DVector<f64>, b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn embed_reference_points() {
        let s = ManifoldSpec::spiral_2d();
        assert!(close(&s.embed(&Coord::curve(0.0)).unwrap(), &[0.0, 0.25], 1e-15));
        let t = ManifoldSpec::torus();
        assert!(close(&t.embed(&Coord::surface(0.0, 0.0)).unwrap(), &[4.0, 0.0, 0.0], 1e-15));
        let c = ManifoldSpec::two_circles();
        assert!(close(&c.embed(&Coord::on_piece(1, PI)).unwrap(), &[0.0, 0.0], 1e-15));
    }

    #[test]
    fn embed_rejects_out_of_domain() {
        assert!(ManifoldSpec::spiral_2d().embed(&Coord::curve(1.5)).is_err());
        assert!(ManifoldSpec::two_circles().embed(&Coord::on_piece(2, 0.0)).is_err());
        assert!(ManifoldSpec::torus().embed(&Coord::surface(0.0, 7.0)).is_err());
    }

    #[test]
    fn frames_reference() {
        let c = ManifoldSpec::TwoCircles {
            centers: [[0.0, 0.0], [5.0, 0.0]],
            radii: [2.0, 1.0],
        };
        let (t, n) = c.frame(&Coord::on_piece(0, 0.0)).unwrap();
        assert!((t[(0, 0)].abs() < 1e-15) && (t[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert!((n[(0, 0)].abs() - 1.0).abs() < 1e-15 && n[(1, 0)].abs() < 1e-15);
        let (_, n) = ManifoldSpec::torus().frame(&Coord::surface(0.0, 0.0)).unwrap();
        assert!((n[(0, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn frames_orthonormal_everywhere() {
        for spec in [ManifoldSpec::spiral_2d(), ManifoldSpec::spiral_3d(), ManifoldSpec::torus()] {
            for i in 0..50 {
                let a = i as f64 / 50.0;
                let c = if spec.intrinsic_dim() == 2 {
                    Coord::surface(a * TAU, (1.0 - a) * TAU * 0.999)
                } else {
                    Coord::curve(a)
                };
                let (t, n) = spec.frame(&c).unwrap();
                let full = DMatrix::from_columns(
                    &t.column_iter().chain(n.column_iter()).map(|c| c.clone_owned()).collect::<Vec<_>>(),
                );
                assert!(crate::linalg::orthogonality_error(&full) < 1e-12);
            }
        }
    }

    #[test]
    fn project_reference_points() {
        let t = ManifoldSpec::torus();
        let p = t.project(&DVector::from_column_slice(&[5.0, 0.0, 0.0])).unwrap();
        assert!(close(&p.foot, &[4.0, 0.0, 0.0], 1e-14));
        assert!((p.dist - 1.0).abs() < 1e-14);

        let c = ManifoldSpec::TwoCircles {
            centers: [[0.0, 0.0], [10.0, 0.0]],
            radii: [2.0, 2.0],
        };
        let p = c.project(&DVector::from_column_slice(&[1.0, 0.0])).unwrap();
        assert!(close(&p.foot, &[2.0, 0.0], 1e-14));
        assert!((p.dist - 1.0).abs() < 1e-14);
    }

    #[test]
    fn spiral_round_trip() {
        let s = ManifoldSpec::spiral_2d();
        let c = Coord::curve(0.3);
        let (_, n) = s.frame(&c).unwrap();
        let x = s.embed(&c).unwrap() + n.column(0) * 0.05;
        let p = s.project(&x).unwrap();
        assert!((p.dist - 0.05).abs() < 1e-6, "dist {}", p.dist);
        assert!((p.coord.t[0] - 0.3).abs() < 1e-4);
        assert!(!p.multi_valued);
    }

    #[test]
    fn medial_points_are_flagged() {
        let c = ManifoldSpec::two_circles();
        // both circles pass through (1, ±√3); the point (1, 0) is equidistant
        let p = c.project(&DVector::from_column_slice(&[1.0, 0.0])).unwrap();
        assert!(p.multi_valued);
        assert_eq!(p.coord.piece, 0);
        let t = ManifoldSpec::torus();
        assert!(t.project(&DVector::from_column_slice(&[0.0, 0.0, 0.5])).unwrap().multi_valued);
    }
}
