//! Prior configuration, Gibbs state, mixture densities, log-posterior and the
//! contraction-rate formulas.

mod posterior;
mod rate;
mod snapshot;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::orthogonality_error;

pub use posterior::{log_posterior, log_weight_prior, marginal_log_scale_prior, PosteriorTerms};
pub(crate) use snapshot::gaussian_log_density;
pub use rate::{contraction_rate, RateRegime, RateReport};
pub use snapshot::{mixture_density, Component, DensitySnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mixture {
    /// Dirichlet process with concentration α.
    Dp { concentration: f64 },
    /// Mixture of finite mixtures; `r = 0` geometric, `r = 1` Poisson-type
    /// prior on the number of components.
    Mfm { r: u8, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// One scale vector shared by every component.
    Partial,
    /// One scale vector per component.
    Hybrid,
}

/// Base measure on per-component scales in hybrid mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HybridScalePrior {
    /// `λ_j ~ InvGamma(a_j, b_j)`, conjugate.
    #[default]
    InverseGamma,
    /// `√λ_j ~ InvGamma(a_j, b_j)`, updated by Metropolis-within-Gibbs.
    SqrtInverseGamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BPrior {
    Fixed { values: Vec<f64> },
    /// `b_j ~ Exp(κ_j)`.
    Hyper { kappa: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub mixture: Mixture,
    pub scale_mode: ScaleMode,
    pub hybrid_prior: HybridScalePrior,
    pub mu0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    pub m0: DMatrix<f64>,
    pub a: DVector<f64>,
    pub b: BPrior,
    /// Auxiliary components per allocation step.
    pub m: usize,
    /// Maximum component count of a finite snapshot (MAP, stick-breaking).
    pub truncation: usize,
}

impl PriorConfig {
    /// `α = 1`, `a_j = κ_j = 1`, `μ0 = 0`, `Σ0 = I`, `M0 = 0`, `m = 2`.
    pub fn default_for(dim: usize) -> Self {
        Self {
            mixture: Mixture::Dp { concentration: 1.0 },
            scale_mode: ScaleMode::Partial,
            hybrid_prior: HybridScalePrior::InverseGamma,
            mu0: DVector::zeros(dim),
            sigma0: DMatrix::identity(dim, dim),
            m0: DMatrix::zeros(dim, dim),
            a: DVector::from_element(dim, 1.0),
            b: BPrior::Hyper {
                kappa: vec![1.0; dim],
            },
            m: 2,
            truncation: 30,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    /// Concentration used by the allocation step and predictive weights.
    pub fn concentration(&self) -> f64 {
        match self.mixture {
            Mixture::Dp { concentration } => concentration,
            Mixture::Mfm { .. } => 1.0,
        }
    }

    pub fn is_hyper_b(&self) -> bool {
        matches!(self.b, BPrior::Hyper { .. })
    }

    /// Initial or fixed `b`: the fixed values, or the prior means `1/κ_j`.
    pub fn initial_b(&self) -> DVector<f64> {
        match &self.b {
            BPrior::Fixed { values } => DVector::from_column_slice(values),
            BPrior::Hyper { kappa } => DVector::from_iterator(kappa.len(), kappa.iter().map(|k| 1.0 / k)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        match self.mixture {
            Mixture::Dp { concentration } if !(concentration > 0.0 && concentration.is_finite()) => {
                return Err(Error::domain("concentration", concentration));
            }
            Mixture::Mfm { r, .. } if r > 1 => return Err(Error::domain("r", r as f64)),
            Mixture::Mfm { scale, .. } if !(scale > 0.0) => return Err(Error::domain("scale", scale)),
            _ => {}
        }
        if self.sigma0.shape() != (d, d) || self.m0.shape() != (d, d) || self.a.len() != d {
            return Err(Error::Config("prior dimensions are inconsistent".into()));
        }
        if (&self.sigma0 - self.sigma0.transpose()).amax() > 1e-12 || self.sigma0.clone().cholesky().is_none() {
            return Err(Error::Config("sigma0 must be symmetric positive definite".into()));
        }
        if let Some(a) = self.a.iter().find(|a| !(**a > 0.0)) {
            return Err(Error::domain("a", *a));
        }
        let (name, vals) = match &self.b {
            BPrior::Fixed { values } => ("b", values),
            BPrior::Hyper { kappa } => ("kappa", kappa),
        };
        if vals.len() != d {
            return Err(Error::Config(format!("`{name}` needs {d} entries")));
        }
        if let Some(v) = vals.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::domain(name, *v));
        }
        if self.m == 0 {
            return Err(Error::Config("auxiliary count m must be at least 1".into()));
        }
        if self.truncation == 0 {
            return Err(Error::Config("truncation must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub mu: DVector<f64>,
    pub o: DMatrix<f64>,
    /// Per-cluster scales, hybrid mode only.
    pub lambda: Option<DVector<f64>>,
}

/// One state of the Gibbs sampler. Cluster ids index `clusters`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    pub alloc: Vec<usize>,
    pub clusters: Vec<Cluster>,
    /// Shared scales (partial mode); unused in hybrid mode.
    pub lambda: DVector<f64>,
    pub b: DVector<f64>,
}

impl MixtureState {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.clusters.len()];
        for &c in &self.alloc {
            s[c] += 1;
        }
        s
    }

    pub fn cluster_lambda(&self, c: usize) -> &DVector<f64> {
        self.clusters[c].lambda.as_ref().unwrap_or(&self.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = self.sizes();
        if self.alloc.iter().any(|&c| c >= self.clusters.len()) {
            return Err(Error::Precondition("allocation refers to a missing cluster".into()));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Precondition("empty cluster".into()));
        }
        for c in &self.clusters {
            if orthogonality_error(&c.o) > 1e-9 {
                return Err(Error::Precondition("non-orthogonal orientation".into()));
            }
            if let Some(l) = &c.lambda {
                if l.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Precondition("non-positive cluster scale".into()));
                }
            }
        }
        if self.lambda.iter().chain(self.b.iter()).any(|v| !(*v > 0.0)) {
            return Err(Error::Precondition("non-positive scale or hyperparameter".into()));
        }
        Ok(())
    }

    /// Finite mixture with weights `n_c / n`.
    pub fn to_snapshot(&self) -> DensitySnapshot {
        let n = self.alloc.len() as f64;
        let components = self
            .sizes()
            .into_iter()
            .enumerate()
            .map(|(c, s)| Component {
                weight: s as f64 / n,
                mu: self.clusters[c].mu.clone(),
                o: self.clusters[c].o.clone(),
                lambda: self.cluster_lambda(c).clone(),
            })
            .collect();
        DensitySnapshot { components }
    }
}
