//! Random variates for the model, the samplers and the data generators.

mod bmf;

pub use bmf::{
    gibbs_scan_orthogonal, sample_orientation_prior, sample_vector_bmf, sample_vector_bmf_from, VectorBmfParams,
};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Geometric, Poisson, StandardNormal};

use crate::error::{Error, Result};

const FLOOR: f64 = 1e-300;
const CEIL: f64 = 1e300;

fn positive(name: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::domain(name, v))
    }
}

/// Draw from InverseGamma(shape, rate), density ∝ x^{-(shape+1)} e^{-rate/x}.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let shape = positive("shape", shape)?.max(FLOOR);
    let rate = positive("rate", rate)?.max(FLOOR);
    let g = Gamma::new(shape, 1.0 / rate).map_err(|_| Error::domain("rate", rate))?;
    let x = 1.0 / g.sample(rng);
    Ok(x.clamp(FLOOR, CEIL))
}

/// Draw from Gamma(shape, rate).
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let shape = positive("shape", shape)?.max(FLOOR);
    let rate = positive("rate", rate)?.max(FLOOR);
    let g = Gamma::new(shape, 1.0 / rate).map_err(|_| Error::domain("rate", rate))?;
    Ok(g.sample(rng).clamp(FLOOR, CEIL))
}

pub fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// A point of the closed unit ball in `R^dim` with density ∝ (1 − ‖x‖²)^β⊥.
///
/// The direction is uniform and the squared radius is Beta(dim/2, β⊥ + 1).
pub fn sample_radial_kernel<R: Rng + ?Sized>(beta_perp: f64, dim: usize, rng: &mut R) -> Result<DVector<f64>> {
    let beta_perp = positive("beta_perp", beta_perp)?;
    if dim == 0 {
        return Err(Error::Precondition("kernel dimension must be at least 1".into()));
    }
    let radial = Beta::new(dim as f64 / 2.0, beta_perp + 1.0).map_err(|_| Error::domain("beta_perp", beta_perp))?;
    let dir = loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-300 {
            break v / n;
        }
    };
    let r2: f64 = radial.sample(rng);
    Ok(dir * r2.sqrt())
}

/// Unnormalized base density on `[0, 1]`; bounded by 1 and vanishing at 0.
pub fn base_density_kernel(beta0: f64, t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        0.0
    } else if t <= 0.5 {
        1.0 - (1.0 - 2.0 * t).powf(beta0)
    } else {
        1.0 - (2.0 * t - 1.0).powf(beta0 + 1.0)
    }
}

/// Normalizing constant of [`base_density_kernel`].
pub fn base_density_normalizer(beta0: f64) -> f64 {
    (0.5 - 0.5 / (beta0 + 1.0)) + (0.5 - 0.5 / (beta0 + 2.0))
}

pub fn base_density(beta0: f64, t: f64) -> f64 {
    base_density_kernel(beta0, t) / base_density_normalizer(beta0)
}

pub fn base_density_cdf(beta0: f64, t: f64) -> f64 {
    let z = base_density_normalizer(beta0);
    let t = t.clamp(0.0, 1.0);
    let raw = if t <= 0.5 {
        t - (1.0 - (1.0 - 2.0 * t).powf(beta0 + 1.0)) / (2.0 * (beta0 + 1.0))
    } else {
        let first = 0.5 - 0.5 / (beta0 + 1.0);
        first + (t - 0.5) - (2.0 * t - 1.0).powf(beta0 + 2.0) / (2.0 * (beta0 + 2.0))
    };
    raw / z
}

/// Draw from the base density by rejection under the unit envelope; also
/// returns the number of proposals used.
pub fn sample_base_density_counted<R: Rng + ?Sized>(beta0: f64, rng: &mut R) -> Result<(f64, u64)> {
    let beta0 = positive("beta0", beta0)?;
    let mut proposals = 0;
    loop {
        proposals += 1;
        let t: f64 = rng.random();
        let u: f64 = rng.random();
        if u < base_density_kernel(beta0, t) {
            return Ok((t, proposals));
        }
    }
}

pub fn sample_base_density<R: Rng + ?Sized>(beta0: f64, rng: &mut R) -> Result<f64> {
    sample_base_density_counted(beta0, rng).map(|(t, _)| t)
}

/// Truncated stick-breaking weights with Beta(1, concentration) sticks; the
/// last entry takes the residual so the vector sums to one.
pub fn stick_breaking_weights<R: Rng + ?Sized>(
    concentration: f64,
    truncation: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let concentration = positive("concentration", concentration)?;
    if truncation == 0 {
        return Err(Error::Precondition("truncation must be at least 1".into()));
    }
    let beta = Beta::new(1.0, concentration).map_err(|_| Error::domain("concentration", concentration))?;
    let mut weights = Vec::with_capacity(truncation);
    let mut remaining = 1.0;
    for _ in 0..truncation - 1 {
        let v: f64 = beta.sample(rng);
        let w = remaining * v;
        weights.push(w);
        remaining -= w;
    }
    let head: f64 = weights.iter().sum();
    weights.push((1.0 - head).max(0.0));
    Ok(weights)
}

/// Prior on the number of components of a mixture of finite mixtures.
///
/// `r = 0`: Geometric with success probability `scale` on {1, 2, …};
/// `r = 1`: zero-truncated Poisson with mean parameter `scale`.
pub fn sample_mfm_size<R: Rng + ?Sized>(r: u8, scale: f64, rng: &mut R) -> Result<usize> {
    match r {
        0 => {
            if !(scale > 0.0 && scale <= 1.0) {
                return Err(Error::domain("scale", scale));
            }
            let g = Geometric::new(scale).map_err(|_| Error::domain("scale", scale))?;
            Ok(1 + g.sample(rng) as usize)
        }
        1 => {
            let scale = positive("scale", scale)?;
            let p = Poisson::new(scale).map_err(|_| Error::domain("scale", scale))?;
            loop {
                let k: f64 = p.sample(rng);
                if k >= 1.0 {
                    return Ok(k as usize);
                }
            }
        }
        other => Err(Error::Precondition(format!("MFM tail order must be 0 or 1, got {other}"))),
    }
}

/// `log P(K = k)` under [`sample_mfm_size`]'s prior.
pub fn mfm_size_log_pmf(r: u8, scale: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let kf = k as f64;
    match r {
        0 => {
            if !(scale > 0.0 && scale <= 1.0) {
                return Err(Error::domain("scale", scale));
            }
            Ok(scale.ln() + (kf - 1.0) * (1.0 - scale).ln())
        }
        1 => {
            let scale = positive("scale", scale)?;
            let log_fact = statrs::function::gamma::ln_gamma(kf + 1.0);
            Ok(kf * scale.ln() - scale - log_fact - (-(-scale).exp_m1()).ln())
        }
        other => Err(Error::Precondition(format!("MFM tail order must be 0 or 1, got {other}"))),
    }
}
