//! Synthetic manifold-supported data: manifolds, noise models, generation and
//! the exact density of the generative law.

mod density;
mod io;
mod manifold;

use std::f64::consts::TAU;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_base_density, sample_radial_kernel};
use crate::error::{Error, Result};
use crate::points::Points;
use crate::rng::RngStream;

pub use density::{ball_kernel_normalizer, base_density_on_manifold, true_density};
pub use io::{metadata_path, read_dataset, read_points, write_dataset, DatasetMetadata};
pub use manifold::{Coord, ManifoldSpec, Projection};


#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Noise drawn from the ambient ball, independent of the base point.
    Isotropic,
    /// Noise drawn from the normal fiber at the base point.
    Orthonormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    /// Tube half-width.
    pub delta: f64,
    #[serde(default = "default_beta_perp")]
    pub beta_perp: f64,
    #[serde(default = "default_beta0")]
    pub beta0: f64,
}

fn default_beta_perp() -> f64 {
    6.0
}

fn default_beta0() -> f64 {
    2.0
}

impl NoiseSpec {
    pub fn new(model: NoiseModel, delta: f64) -> Self {
        Self {
            model,
            delta,
            beta_perp: default_beta_perp(),
            beta0: default_beta0(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("delta", self.delta), ("beta_perp", self.beta_perp), ("beta0", self.beta0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(name, v));
            }
        }
        Ok(())
    }
}

/// Effective smoothness of an anisotropic Hölder density: `beta0` along the
/// manifold, `beta_perp` across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSpec {
    pub beta0: f64,
    pub beta_perp: f64,
    pub d: usize,
    #[serde(rename = "D")]
    pub ambient: usize,
    pub beta: f64,
    pub alpha0: f64,
    pub alpha_perp: f64,
}

impl SmoothnessSpec {
    pub fn new(beta0: f64, beta_perp: f64, d: usize, ambient: usize) -> Result<Self> {
        if !(beta0 > 0.0) {
            return Err(Error::domain("beta0", beta0));
        }
        if !(beta_perp > 0.0) {
            return Err(Error::domain("beta_perp", beta_perp));
        }
        if d == 0 || d >= ambient {
            return Err(Error::Precondition(format!("need 0 < d < D, got d={d}, D={ambient}")));
        }
        let (df, dd) = (d as f64, ambient as f64);
        let beta = dd / (df / beta0 + (dd - df) / beta_perp);
        Ok(Self {
            beta0,
            beta_perp,
            d,
            ambient,
            beta,
            alpha0: beta / beta0,
            alpha_perp: beta / beta_perp,
        })
    }

    pub fn for_manifold(spec: &ManifoldSpec, noise: &NoiseSpec) -> Result<Self> {
        Self::new(noise.beta0, noise.beta_perp, spec.intrinsic_dim(), spec.ambient_dim())
    }
}

/// Generated points plus everything needed to reproduce or score them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Points,
    /// Per point: `[piece?, t.., e..]`, see [`Dataset::latent_columns`].
    pub latent: Option<Points>,
    pub spec: ManifoldSpec,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl Dataset {
    /// Wraps externally supplied points without generation metadata.
    pub fn from_points(points: Points, spec: ManifoldSpec, noise: NoiseSpec, seed: u64) -> Self {
        Self {
            points,
            latent: None,
            spec,
            noise,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    /// Names of the latent columns for this dataset's manifold and noise model.
    pub fn latent_columns(spec: &ManifoldSpec, model: NoiseModel) -> Vec<String> {
        let mut cols = Vec::new();
        if spec.pieces() > 1 {
            cols.push("piece".to_string());
        }
        match spec.intrinsic_dim() {
            1 => cols.push("t".into()),
            _ => cols.extend(["t1".to_string(), "t2".to_string()]),
        }
        let k = match model {
            NoiseModel::Isotropic => spec.ambient_dim(),
            NoiseModel::Orthonormal => spec.ambient_dim() - spec.intrinsic_dim(),
        };
        cols.extend((1..=k).map(|j| format!("e{j}")));
        cols
    }

    /// Splits the rows into a training and a held-out part; the permutation is
    /// drawn from `rng` so disjointness is guaranteed for any seed.
    pub fn split(&self, heldout_fraction: f64, rng: &mut RngStream) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&heldout_fraction) {
            return Err(Error::domain("heldout_fraction", heldout_fraction));
        }
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let n_held = (heldout_fraction * n as f64).round() as usize;
        let (held, train) = idx.split_at(n_held);
        let mut train = train.to_vec();
        let mut held = held.to_vec();
        train.sort_unstable();
        held.sort_unstable();
        let part = |ix: &[usize]| Dataset {
            points: self.points.select(ix),
            latent: self.latent.as_ref().map(|l| l.select(ix)),
            spec: self.spec.clone(),
            noise: self.noise,
            seed: self.seed,
        };
        Ok((part(&train), part(&held)))
    }
}

/// Draws a base point from the manifold's base measure.
pub fn sample_base_point<R: Rng + ?Sized>(spec: &ManifoldSpec, beta0: f64, rng: &mut R) -> Result<Coord> {
    match *spec {
        ManifoldSpec::Spiral2d { .. } | ManifoldSpec::Spiral3d { .. } => Ok(Coord::curve(sample_base_density(beta0, rng)?)),
        ManifoldSpec::TwoCircles { radii, .. } => {
            let piece = usize::from(rng.random::<f64>() * (radii[0] + radii[1]) >= radii[0]);
            Ok(Coord::on_piece(piece, rng.random::<f64>() * TAU))
        }
        ManifoldSpec::Torus { major, minor, .. } => {
            let u = rng.random::<f64>() * TAU;
            loop {
                let v = rng.random::<f64>() * TAU;
                if rng.random::<f64>() * (major + minor) <= major + minor * v.cos() {
                    return Ok(Coord::surface(u, v));
                }
            }
        }
        ManifoldSpec::FlatLine => Err(Error::Mode("the flat line has no base measure".into())),
    }
}

/// One noisy observation with its latent description.
pub fn sample_observation<R: Rng + ?Sized>(
    spec: &ManifoldSpec,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<(DVector<f64>, Coord, DVector<f64>)> {
    let c = sample_base_point(spec, noise.beta0, rng)?;
    let y = spec.embed_unchecked(&c);
    let (x, e) = match noise.model {
        NoiseModel::Isotropic => {
            let e = sample_radial_kernel(noise.beta_perp, spec.ambient_dim(), rng)?;
            (&y + &e * noise.delta, e)
        }
        NoiseModel::Orthonormal => {
            let k = spec.ambient_dim() - spec.intrinsic_dim();
            let e = sample_radial_kernel(noise.beta_perp, k, rng)?;
            let (_, normal) = spec.frame(&c)?;
            (&y + &normal * &e * noise.delta, e)
        }
    };
    Ok((x, c, e))
}

/// Draws `n` points near the manifold under the given noise model.
pub fn generate_dataset(spec: &ManifoldSpec, noise: &NoiseSpec, n: usize, rng: &mut RngStream) -> Result<Dataset> {
    spec.validate()?;
    noise.validate()?;
    if n == 0 {
        return Err(Error::Precondition("n must be at least 1".into()));
    }
    let dim = spec.ambient_dim();
    let ncols = Dataset::latent_columns(spec, noise.model).len();
    let mut points = Points::new(dim);
    let mut latent = Points::new(ncols);
    let mut row = Vec::with_capacity(ncols);
    for _ in 0..n {
        let (x, c, e) = sample_observation(spec, noise, rng)?;
        points.push(x.as_slice())?;
        row.clear();
        if spec.pieces() > 1 {
            row.push(c.piece as f64);
        }
        row.extend_from_slice(&c.t[..spec.intrinsic_dim()]);
        row.extend(e.iter());
        latent.push(&row)?;
    }
    Ok(Dataset {
        points,
        latent: Some(latent),
        spec: spec.clone(),
        noise: *noise,
        seed: rng.seed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothness_worked_example() {
        let s = SmoothnessSpec::new(2.0, 6.0, 1, 2).unwrap();
        assert_eq!(s.beta, 3.0);
        assert_eq!(s.alpha0, 1.5);
        assert_eq!(s.alpha_perp, 0.5);
        assert_eq!(s.d as f64 * s.alpha0 + (s.ambient - s.d) as f64 * s.alpha_perp, 2.0);
    }

    #[test]
    fn orthonormal_points_stay_in_tube() {
        let mut rng = RngStream::new(3, 0);
        for spec in [
            ManifoldSpec::spiral_2d(),
            ManifoldSpec::two_circles(),
            ManifoldSpec::spiral_3d(),
            ManifoldSpec::torus(),
        ] {
            let noise = NoiseSpec::new(NoiseModel::Orthonormal, 0.1);
            let ds = generate_dataset(&spec, &noise, 2000, &mut rng).unwrap();
            let lat = ds.latent.as_ref().unwrap();
            let d = spec.intrinsic_dim();
            let off = usize::from(spec.pieces() > 1);
            for i in 0..ds.len() {
                let x = ds.points.vector(i);
                assert!(spec.project(&x).unwrap().dist <= 0.1 + 1e-9);
                // the offset from the base point lies in the normal span
                let row = lat.row(i);
                let c = Coord {
                    piece: if off == 1 { row[0] as usize } else { 0 },
                    t: [row[off], if d == 2 { row[off + 1] } else { 0.0 }],
                };
                let (tangent, _) = spec.frame(&c).unwrap();
                let r = x - spec.embed(&c).unwrap();
                assert!((tangent.transpose() * r).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn circles_choose_by_arc_length() {
        let spec = ManifoldSpec::TwoCircles {
            centers: [[0.0, 0.0], [10.0, 0.0]],
            radii: [1.0, 3.0],
        };
        let mut rng = RngStream::new(1, 0);
        let ds = generate_dataset(&spec, &NoiseSpec::new(NoiseModel::Isotropic, 0.1), 20_000, &mut rng).unwrap();
        let frac = ds.latent.unwrap().iter().filter(|r| r[0] == 1.0).count() as f64 / 20_000.0;
        assert!((frac - 0.75).abs() < 0.015, "{frac}");
    }

    #[test]
    fn flat_line_cannot_generate() {
        let mut rng = RngStream::new(1, 0);
        let noise = NoiseSpec::new(NoiseModel::Isotropic, 0.1);
        assert!(generate_dataset(&ManifoldSpec::FlatLine, &noise, 5, &mut rng).is_err());
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let mut rng = RngStream::new(9, 0);
        let noise = NoiseSpec::new(NoiseModel::Isotropic, 0.1);
        let ds = generate_dataset(&ManifoldSpec::two_circles(), &noise, 101, &mut rng).unwrap();
        let (a, b) = ds.split(0.2, &mut rng).unwrap();
        assert_eq!(a.len() + b.len(), 101);
        assert_eq!(b.len(), 20);
        for i in 0..b.len() {
            assert!(a.points.iter().all(|r| r != b.points.row(i)));
        }
    }
}
