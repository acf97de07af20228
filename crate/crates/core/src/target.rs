//! Densities that can also be sampled from, used as ground truth by the
//! evaluation and kernel-operator code.

use nalgebra::{DMatrix, DVector};

use crate::distributions::sample_standard_normal;
use crate::error::{Error, Result};
use crate::geometry::{sample_observation, true_density, ManifoldSpec, NoiseSpec};
use crate::rng::RngStream;

pub trait Target {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut RngStream) -> Result<DVector<f64>>;
    fn density(&self, x: &DVector<f64>) -> f64;
}

/// The synthetic data law of a manifold and noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorTarget {
    pub spec: ManifoldSpec,
    pub noise: NoiseSpec,
}

impl GeneratorTarget {
    pub fn new(spec: ManifoldSpec, noise: NoiseSpec) -> Result<Self> {
        spec.validate()?;
        noise.validate()?;
        if matches!(spec, ManifoldSpec::FlatLine) {
            return Err(Error::Mode("the flat line has no base measure".into()));
        }
        Ok(Self { spec, noise })
    }
}

impl Target for GeneratorTarget {
    fn dim(&self) -> usize {
        self.spec.ambient_dim()
    }

    fn sample(&self, rng: &mut RngStream) -> Result<DVector<f64>> {
        Ok(sample_observation(&self.spec, &self.noise, rng)?.0)
    }

    fn density(&self, x: &DVector<f64>) -> f64 {
        true_density(&self.spec, &self.noise, x).expect("validated on construction")
    }
}

/// A multivariate Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianTarget {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::Precondition("covariance shape mismatch".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Precondition("covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            mean,
            cov,
            log_norm: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
            chol_l: l,
        })
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.mean;
        let z = self.chol_l.solve_lower_triangular(&r).expect("positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

impl Target for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, rng: &mut RngStream) -> Result<DVector<f64>> {
        let z = DVector::from_fn(self.mean.len(), |_, _| sample_standard_normal(rng));
        Ok(&self.mean + &self.chol_l * z)
    }

    fn density(&self, x: &DVector<f64>) -> f64 {
        self.log_density(x).exp()
    }
}

/// A Dirac mass; `density` is zero everywhere except at the atom.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass(pub DVector<f64>);

impl Target for PointMass {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn sample(&self, _rng: &mut RngStream) -> Result<DVector<f64>> {
        Ok(self.0.clone())
    }

    fn density(&self, x: &DVector<f64>) -> f64 {
        if *x == self.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}
