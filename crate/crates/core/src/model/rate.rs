use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::SmoothnessSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateRegime {
    /// `δ^{D/(α0−α⊥)} > n^{−D/(2β+D)}`: the anisotropic polynomial rate binds.
    Polynomial,
    /// The noise width is small enough that `1/√(n δ^{D/(α0−α⊥)})` binds.
    NoiseLimited,
    /// Both branches coincide.
    Boundary,
}

/// Polynomial part of the posterior contraction rate; log factors omitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateReport {
    pub noise_branch: f64,
    pub polynomial_branch: f64,
    pub epsilon: f64,
    pub exponent: f64,
    pub regime: RateRegime,
}

pub fn contraction_rate(spec: &SmoothnessSpec, n: usize, delta: f64) -> Result<RateReport> {
    if n < 2 {
        return Err(Error::Precondition("rate needs n ≥ 2".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::domain("delta", delta));
    }
    let dd = spec.ambient as f64;
    let exponent = spec.beta / (2.0 * spec.beta + dd);
    let nf = n as f64;
    let polynomial = nf.powf(-exponent);
    if spec.beta0 == spec.beta_perp {
        return Err(Error::DegenerateRate { polynomial });
    }
    if spec.alpha0 < spec.alpha_perp {
        return Err(Error::Precondition("rate needs beta0 < beta_perp".into()));
    }
    let gap = spec.alpha0 - spec.alpha_perp;
    let lhs = dd / gap * delta.ln();
    let rhs = -dd / (2.0 * spec.beta + dd) * nf.ln();
    let noise = (-0.5 * (nf.ln() + lhs)).exp();
    let regime = if (lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()) {
        RateRegime::Boundary
    } else if lhs > rhs {
        RateRegime::Polynomial
    } else {
        RateRegime::NoiseLimited
    };
    Ok(RateReport {
        noise_branch: noise,
        polynomial_branch: polynomial,
        epsilon: noise.max(polynomial),
        exponent,
        regime,
    })
}
