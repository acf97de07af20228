use std::f64::consts::PI;

use nalgebra::DVector;
use statrs::function::gamma::ln_gamma;

use super::{BPrior, DensitySnapshot, HybridScalePrior, Mixture, PriorConfig, ScaleMode};
use crate::distributions::mfm_size_log_pmf;
use crate::error::{Error, Result};
use crate::points::Points;

/// The additive pieces of the log-posterior. Parameter-free constants are
/// dropped from the orientation term only (matrix-BMF normalizer).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorTerms {
    pub loglik: f64,
    pub location: f64,
    pub orientation: f64,
    pub scale: f64,
    pub weights: f64,
}

impl PosteriorTerms {
    pub fn total(&self) -> f64 {
        self.loglik + self.location + self.orientation + self.scale + self.weights
    }

    pub fn compute(snapshot: &DensitySnapshot, data: &Points, prior: &PriorConfig) -> Result<Self> {
        let k = snapshot.len();
        if k == 0 || k > prior.truncation {
            return Err(Error::Precondition(format!(
                "snapshot has {k} components, truncation is {}",
                prior.truncation
            )));
        }
        if data.dim() != prior.dim() || snapshot.dim() != prior.dim() {
            return Err(Error::Precondition("dimension mismatch between data, snapshot and prior".into()));
        }
        let loglik: f64 = data.iter().map(|x| snapshot.log_density(x)).sum();

        let chol = prior
            .sigma0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("sigma0 is not positive definite".into()))?;
        let d = prior.dim() as f64;
        let log_det0: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let location = snapshot
            .components
            .iter()
            .map(|c| {
                let r = &c.mu - &prior.mu0;
                let q = r.dot(&chol.solve(&r));
                -0.5 * (d * (2.0 * PI).ln() + log_det0 + q)
            })
            .sum();

        let orientation = snapshot.components.iter().map(|c| prior.m0.dot(&c.o)).sum();

        let lambdas: Vec<&DVector<f64>> = match prior.scale_mode {
            ScaleMode::Partial => {
                let first = &snapshot.components[0].lambda;
                if snapshot.components.iter().any(|c| c.lambda != *first) {
                    return Err(Error::Precondition("partial mode needs one shared scale vector".into()));
                }
                vec![first]
            }
            ScaleMode::Hybrid => snapshot.components.iter().map(|c| &c.lambda).collect(),
        };
        let scale = marginal_log_scale_prior(&lambdas, prior);
        let weights = log_weight_prior(&snapshot.weights(), prior)?;

        let terms = PosteriorTerms {
            loglik,
            location,
            orientation,
            scale,
            weights,
        };
        for (name, v) in [
            ("loglik", loglik),
            ("location", location),
            ("orientation", orientation),
            ("scale", scale),
            ("weights", weights),
        ] {
            if !v.is_finite() {
                return Err(Error::non_finite(name));
            }
        }
        Ok(terms)
    }
}

/// Log-posterior of a finite mixture. In hyper-`b` mode the hyperparameters
/// are integrated out in closed form, since a snapshot carries no `b`.
pub fn log_posterior(snapshot: &DensitySnapshot, data: &Points, prior: &PriorConfig) -> Result<f64> {
    Ok(PosteriorTerms::compute(snapshot, data, prior)?.total())
}

/// Log prior of the scale vectors (one per component in hybrid mode, a single
/// shared vector in partial mode).
///
/// With `u = λ` (or `u = √λ`), `u_k ~ InvGamma(a, b)` and fixed `b`, each term is
/// the InvGamma log density plus the change-of-variables term. With
/// `b ~ Exp(κ)` shared by the `K` vectors the marginal per coordinate is
/// `κ Γ(Ka+1) / Γ(a)^K · ∏ u_k^{-(a+1)} / (κ + Σ 1/u_k)^{Ka+1}`.
pub fn marginal_log_scale_prior(lambdas: &[&DVector<f64>], prior: &PriorConfig) -> f64 {
    let sqrt = prior.scale_mode == ScaleMode::Hybrid && prior.hybrid_prior == HybridScalePrior::SqrtInverseGamma;
    let kk = lambdas.len() as f64;
    let mut total = 0.0;
    for j in 0..prior.dim() {
        let a = prior.a[j];
        let mut sum_log_u = 0.0;
        let mut sum_inv_u = 0.0;
        let mut jac = 0.0;
        for l in lambdas {
            let u = if sqrt { l[j].sqrt() } else { l[j] };
            sum_log_u += u.ln();
            sum_inv_u += 1.0 / u;
            if sqrt {
                jac -= (2.0 * u).ln();
            }
        }
        total += jac - (a + 1.0) * sum_log_u;
        total += match &prior.b {
            BPrior::Fixed { values } => kk * (a * values[j].ln() - ln_gamma(a)) - values[j] * sum_inv_u,
            BPrior::Hyper { kappa } => {
                let k = kappa[j];
                k.ln() + ln_gamma(kk * a + 1.0) - kk * ln_gamma(a) - (kk * a + 1.0) * (k + sum_inv_u).ln()
            }
        };
    }
    total
}

/// Log prior of mixture weights: truncated stick-breaking for the DP (weights
/// taken in decreasing order, so the value is label-free), symmetric
/// Dirichlet(1) plus the component-count prior for MFM.
pub fn log_weight_prior(weights: &[f64], prior: &PriorConfig) -> Result<f64> {
    let k = weights.len();
    match prior.mixture {
        Mixture::Dp { concentration: alpha } => {
            let mut w = weights.to_vec();
            w.sort_by(|a, b| b.total_cmp(a));
            // suffix sums S_i = Σ_{l ≥ i} w_l
            let mut suffix = vec![0.0; k + 1];
            for i in (0..k).rev() {
                suffix[i] = suffix[i + 1] + w[i];
            }
            let mut lp = 0.0;
            for i in 0..k.saturating_sub(1) {
                lp += alpha.ln() + (alpha - 1.0) * (suffix[i + 1].ln() - suffix[i].ln()) - suffix[i].ln();
            }
            Ok(lp)
        }
        Mixture::Mfm { r, scale } => Ok(ln_gamma(k as f64) + mfm_size_log_pmf(r, scale, k)?),
    }
}
