use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::orthogonality_error;
use crate::stats::log_sum_exp;

/// One Gaussian component with covariance `O diag(λ) Oᵀ`, `O`'s columns being
/// the principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mu: DVector<f64>,
    pub o: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

impl Component {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Log of the Gaussian density (weight not included).
    pub fn log_density(&self, x: &[f64]) -> f64 {
        gaussian_log_density(x, &self.mu, &self.o, &self.lambda)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.o * DMatrix::from_diagonal(&self.lambda) * self.o.transpose()
    }
}

/// `log N(x | μ, O diag(λ) Oᵀ)`.
pub(crate) fn gaussian_log_density(x: &[f64], mu: &DVector<f64>, o: &DMatrix<f64>, lambda: &DVector<f64>) -> f64 {
    let d = mu.len();
    let mut quad = 0.0;
    let mut log_det = 0.0;
    for j in 0..d {
        let mut proj = 0.0;
        for i in 0..d {
            proj += o[(i, j)] * (x[i] - mu[i]);
        }
        quad += proj * proj / lambda[j];
        log_det += lambda[j].ln();
    }
    -0.5 * (d as f64 * (2.0 * PI).ln() + log_det + quad)
}

/// A finite location-scale Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySnapshot {
    pub components: Vec<Component>,
}

impl DensitySnapshot {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let s = Self { components };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, Component::dim)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Precondition("snapshot has no components".into()));
        }
        let d = self.dim();
        let mut total = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            if c.mu.len() != d || c.lambda.len() != d || c.o.shape() != (d, d) {
                return Err(Error::Precondition(format!("component {k} has inconsistent dimensions")));
            }
            if !(c.weight >= 0.0) {
                return Err(Error::domain("weight", c.weight));
            }
            if let Some(l) = c.lambda.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
                return Err(Error::domain("lambda", *l));
            }
            if orthogonality_error(&c.o) > 1e-9 {
                return Err(Error::Precondition(format!("component {k} orientation is not orthogonal")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition(format!("weights sum to {total}")));
        }
        Ok(())
    }

    /// Log mixture density, evaluated with log-sum-exp.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut buf = [0.0; 64];
        if self.components.len() <= buf.len() {
            let terms = &mut buf[..self.components.len()];
            for (t, c) in terms.iter_mut().zip(&self.components) {
                *t = c.weight.ln() + c.log_density(x);
            }
            log_sum_exp(terms)
        } else {
            let terms: Vec<f64> = self.components.iter().map(|c| c.weight.ln() + c.log_density(x)).collect();
            log_sum_exp(&terms)
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    /// Posterior component probabilities for `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let terms: Vec<f64> = self.components.iter().map(|c| c.weight.ln() + c.log_density(x)).collect();
        let z = log_sum_exp(&terms);
        terms.iter().map(|t| (t - z).exp()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SnapshotJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: SnapshotJson = serde_json::from_str(s)?;
        j.try_into()
    }
}

/// Mixture density at `x`.
pub fn mixture_density(snapshot: &DensitySnapshot, x: &[f64]) -> f64 {
    snapshot.density(x)
}

#[derive(Serialize, Deserialize)]
pub(crate) struct SnapshotJson {
    pub weights: Vec<f64>,
    pub components: Vec<ComponentJson>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct ComponentJson {
    pub mu: Vec<f64>,
    #[serde(rename = "O")]
    pub o: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl From<&DensitySnapshot> for SnapshotJson {
    fn from(s: &DensitySnapshot) -> Self {
        SnapshotJson {
            weights: s.weights(),
            components: s
                .components
                .iter()
                .map(|c| ComponentJson {
                    mu: c.mu.as_slice().to_vec(),
                    o: c.o.transpose().as_slice().to_vec(),
                    lambda: c.lambda.as_slice().to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<SnapshotJson> for DensitySnapshot {
    type Error = Error;

    fn try_from(j: SnapshotJson) -> Result<Self> {
        if j.weights.len() != j.components.len() {
            return Err(Error::Format("weights and components differ in length".into()));
        }
        let components = j
            .weights
            .iter()
            .zip(j.components)
            .map(|(w, c)| {
                let d = c.mu.len();
                if c.o.len() != d * d || c.lambda.len() != d {
                    return Err(Error::Format("component shape mismatch".into()));
                }
                Ok(Component {
                    weight: *w,
                    mu: DVector::from_vec(c.mu),
                    o: DMatrix::from_row_slice(d, d, &c.o),
                    lambda: DVector::from_vec(c.lambda),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        // JSON round-trips can leave the weight sum a few ulps off
        let mut s = DensitySnapshot { components };
        let total: f64 = s.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() < 1e-9 {
            s.components.iter_mut().for_each(|c| c.weight /= total);
        }
        s.validate()?;
        Ok(s)
    }
}
