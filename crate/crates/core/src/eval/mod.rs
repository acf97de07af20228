//! Comparison of fitted densities with a known truth.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::sample_standard_normal;
use crate::error::{Error, Result};
use crate::geometry::{generate_dataset, ManifoldSpec, NoiseSpec, SmoothnessSpec};
use crate::gibbs::{run_chain, sample_base_cluster, ChainTrace, GibbsConfig, TraceRecord};
use crate::map::{fit_map, MapSettings};
use crate::model::{contraction_rate, Component, DensitySnapshot, PriorConfig};
use crate::rng::RngStream;
use crate::stats::{linear_fit, log_sum_exp, mean, median, variance};
use crate::target::{GeneratorTarget, Target};
use crate::Points;

mod rate;

pub use rate::{rate_study, write_rate_csv, RateBackend, RateRow, RateStudy, RateStudyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    /// The raw estimate fell outside the metric's range and was clipped.
    pub clipped: bool,
}

/// Importance ratios `f̂(X)/f0(X)` at draws `X ~ f0`.
fn ratios(truth: &dyn Target, fitted: &dyn Fn(&DVector<f64>) -> f64, n_mc: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if n_mc < 2 {
        return Err(Error::Precondition("n_mc must be at least 2".into()));
    }
    let mut w = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let x = truth.sample(rng)?;
        let f0 = truth.density(&x);
        if !(f0 > 0.0) {
            return Err(Error::Precondition("truth has zero density at its own draw".into()));
        }
        let f = fitted(&x);
        if !f.is_finite() || f < 0.0 {
            return Err(Error::non_finite("fitted density"));
        }
        w.push(f / f0);
    }
    Ok(w)
}

fn two_minus_two_mean(xs: &[f64], lo: f64, hi: f64) -> Estimate {
    let raw = 2.0 - 2.0 * mean(xs);
    Estimate {
        value: raw.clamp(lo, hi),
        se: 2.0 * (variance(xs) / xs.len() as f64).sqrt(),
        clipped: !(lo..=hi).contains(&raw),
    }
}

/// `∫(√f0 − √f̂)² = 2 − 2 E_{f0} √(f̂/f0)`.
pub fn hellinger_sq_estimate(
    truth: &dyn Target,
    fitted: &dyn Fn(&DVector<f64>) -> f64,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<Estimate> {
    let w = ratios(truth, fitted, n_mc, rng)?;
    let r: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    Ok(two_minus_two_mean(&r, 0.0, 2.0))
}

/// `∫|f0 − f̂| = 2 E_{f0} (1 − f̂/f0)₊` for normalized densities.
pub fn l1_estimate(
    truth: &dyn Target,
    fitted: &dyn Fn(&DVector<f64>) -> f64,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<Estimate> {
    let w = ratios(truth, fitted, n_mc, rng)?;
    let pos: Vec<f64> = w.iter().map(|v| (1.0 - v).max(0.0)).collect();
    let m = 2.0 * mean(&pos);
    Ok(Estimate {
        value: m.min(2.0),
        se: 2.0 * (variance(&pos) / pos.len() as f64).sqrt(),
        clipped: m > 2.0,
    })
}

/// Both metrics from one set of draws.
fn both_metrics(
    truth: &dyn Target,
    fitted: &dyn Fn(&DVector<f64>) -> f64,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<(Estimate, Estimate)> {
    let w = ratios(truth, fitted, n_mc, rng)?;
    let r: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let pos: Vec<f64> = w.iter().map(|v| (1.0 - v).max(0.0)).collect();
    let l1 = 2.0 * mean(&pos);
    Ok((
        two_minus_two_mean(&r, 0.0, 2.0),
        Estimate {
            value: l1.min(2.0),
            se: 2.0 * (variance(&pos) / pos.len() as f64).sqrt(),
            clipped: l1 > 2.0,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutScore {
    pub mean: f64,
    pub n_used: usize,
    /// Points with zero predictive density, left out of the mean.
    pub n_excluded: usize,
}

/// Mean over `heldout` of `log( (1/S) Σ_s f_s(x) )`.
pub fn heldout_log_predictive(snapshots: &[DensitySnapshot], heldout: &Points) -> Result<HeldoutScore> {
    if snapshots.is_empty() {
        return Err(Error::Precondition("no snapshots".into()));
    }
    if heldout.is_empty() {
        return Err(Error::Precondition("held-out set is empty".into()));
    }
    let log_s = (snapshots.len() as f64).ln();
    let mut logs = Vec::with_capacity(snapshots.len());
    let mut total = 0.0;
    let mut used = 0;
    for x in heldout.iter() {
        logs.clear();
        logs.extend(snapshots.iter().map(|s| s.log_density(x)));
        let lp = log_sum_exp(&logs) - log_s;
        if lp == f64::NEG_INFINITY {
            continue;
        }
        if !lp.is_finite() {
            return Err(Error::non_finite("held-out log predictive"));
        }
        total += lp;
        used += 1;
    }
    Ok(HeldoutScore {
        mean: if used > 0 { total / used as f64 } else { f64::NEG_INFINITY },
        n_used: used,
        n_excluded: heldout.len() - used,
    })
}

/// Trace-averaged density.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedDensity {
    pub snapshots: Vec<DensitySnapshot>,
}

impl AveragedDensity {
    pub fn new(snapshots: Vec<DensitySnapshot>) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::Precondition("no snapshots".into()));
        }
        Ok(Self { snapshots })
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.snapshots.iter().map(|s| s.density(x)).sum::<f64>() / self.snapshots.len() as f64
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = self.snapshots.iter().map(|s| s.log_density(x)).collect();
        log_sum_exp(&logs) - (self.snapshots.len() as f64).ln()
    }

    /// The average as one finite mixture.
    pub fn to_snapshot(&self) -> Result<DensitySnapshot> {
        let s = self.snapshots.len() as f64;
        let comps = self
            .snapshots
            .iter()
            .flat_map(|snap| snap.components.iter())
            .map(|c| Component {
                weight: c.weight / s,
                ..c.clone()
            })
            .collect();
        DensitySnapshot::new(comps)
    }
}

/// Predictive mixture of one record: occupied clusters with weight
/// `n_c/(n+α)` and `fresh_draws` base-measure components sharing `α/(n+α)`.
/// Each fresh component integrates the location out, giving
/// `N(μ0, Σ0 + OΛOᵀ)`.
pub fn predictive_snapshot(
    record: &TraceRecord,
    prior: &PriorConfig,
    fresh_draws: usize,
    rng: &mut RngStream,
) -> Result<DensitySnapshot> {
    let n = record.n_points() as f64;
    let alpha = prior.concentration();
    let denom = n + alpha;
    let mut comps: Vec<Component> = record
        .clusters
        .iter()
        .map(|c| record.component(c, c.size as f64 / denom))
        .collect();
    if fresh_draws > 0 {
        let b = DVector::from_column_slice(&record.b);
        let lambda = DVector::from_column_slice(&record.lambda);
        for _ in 0..fresh_draws {
            let c = sample_base_cluster(prior, &b, rng)?;
            let l = c.lambda.as_ref().unwrap_or(&lambda);
            let cov = &prior.sigma0 + &c.o * DMatrix::from_diagonal(l) * c.o.transpose();
            comps.push(gaussian_component(&prior.mu0, &cov, alpha / denom / fresh_draws as f64)?);
        }
    } else {
        for c in &mut comps {
            c.weight *= denom / n;
        }
    }
    DensitySnapshot::new(comps)
}

/// A Gaussian `N(mean, cov)` in eigen form.
pub fn gaussian_component(mean: &DVector<f64>, cov: &DMatrix<f64>, weight: f64) -> Result<Component> {
    let eig = crate::linalg::symmetrize(cov).symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Precondition("covariance is not positive definite".into()));
    }
    Ok(Component {
        weight,
        mu: mean.clone(),
        o: eig.eigenvectors,
        lambda: eig.eigenvalues,
    })
}

/// Draws from the posterior predictive: a kept record uniformly, then an
/// occupied cluster with probability `n_c/(n+α)` or a fresh base-measure
/// component with probability `α/(n+α)`, then a Gaussian variate. Returns
/// the points and the number of fresh-component draws.
pub fn posterior_predictive_sample(
    trace: &ChainTrace,
    n_samples: usize,
    prior: &PriorConfig,
    rng: &mut RngStream,
) -> Result<(Points, usize)> {
    if trace.is_empty() {
        return Err(Error::Precondition("trace has no records".into()));
    }
    let dim = prior.dim();
    let alpha = prior.concentration();
    let mut out = Points::new(dim);
    let mut fresh = 0;
    for _ in 0..n_samples {
        let rec = &trace.records[rng.random_range(0..trace.records.len())];
        let n = rec.n_points() as f64;
        let u = rng.random::<f64>() * (n + alpha);
        let mut acc = 0.0;
        let mut chosen = None;
        for c in &rec.clusters {
            acc += c.size as f64;
            if u < acc {
                chosen = Some(c);
                break;
            }
        }
        let comp = match chosen {
            Some(c) => rec.component(c, 1.0),
            None => {
                fresh += 1;
                let b = DVector::from_column_slice(&rec.b);
                let c = sample_base_cluster(prior, &b, rng)?;
                let lambda = c.lambda.unwrap_or_else(|| DVector::from_column_slice(&rec.lambda));
                Component {
                    weight: 1.0,
                    mu: c.mu,
                    o: c.o,
                    lambda,
                }
            }
        };
        out.push(sample_component(&comp, rng).as_slice())?;
    }
    Ok((out, fresh))
}

pub fn sample_component<R: Rng + ?Sized>(c: &Component, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(c.dim(), |j, _| c.lambda[j].sqrt() * sample_standard_normal(rng));
    &c.mu + &c.o * z
}

/// Moment-matched single Gaussian (maximum likelihood covariance).
pub fn gaussian_baseline(data: &Points) -> Result<DensitySnapshot> {
    if data.len() < data.dim() + 1 {
        return Err(Error::Precondition("too few points for a Gaussian fit".into()));
    }
    let m = data.mean();
    let mut cov = DMatrix::zeros(data.dim(), data.dim());
    for x in data.iter() {
        let r = DVector::from_column_slice(x) - &m;
        cov += &r * r.transpose();
    }
    cov /= data.len() as f64;
    DensitySnapshot::new(vec![gaussian_component(&m, &cov, 1.0)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hellinger_sq: Option<Estimate>,
    pub l1: Option<Estimate>,
    pub heldout: Option<HeldoutScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_eval: usize,
    pub model: Metrics,
    pub baselines: BTreeMap<String, Metrics>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Metrics of `fitted` and of the Gaussian baseline on `train`. Both use
/// the same truth draws, so their difference has a paired standard error.
pub fn evaluate(
    truth: &dyn Target,
    fitted: &AveragedDensity,
    train: &Points,
    heldout: Option<&Points>,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<MetricsReport> {
    let base = gaussian_baseline(train)?;
    let mut r1 = rng.child(0);
    let mut r2 = rng.child(0);
    let (h, l) = both_metrics(truth, &|x| fitted.density(x.as_slice()), n_mc, &mut r1)?;
    let (bh, bl) = both_metrics(truth, &|x| base.density(x.as_slice()), n_mc, &mut r2)?;
    let held = heldout.map(|p| heldout_log_predictive(&fitted.snapshots, p)).transpose()?;
    let bheld = heldout
        .map(|p| heldout_log_predictive(std::slice::from_ref(&base), p))
        .transpose()?;
    let mut baselines = BTreeMap::new();
    baselines.insert(
        "gaussian".to_string(),
        Metrics {
            hellinger_sq: Some(bh),
            l1: Some(bl),
            heldout: bheld,
        },
    );
    Ok(MetricsReport {
        n_eval: n_mc,
        model: Metrics {
            hellinger_sq: Some(h),
            l1: Some(l),
            heldout: held,
        },
        baselines,
    })
}

/// Paired comparison of two fitted densities against the same truth draws:
/// mean and standard error of `H²(a) − H²(b)` per draw.
pub fn paired_hellinger_difference(
    truth: &dyn Target,
    a: &dyn Fn(&DVector<f64>) -> f64,
    b: &dyn Fn(&DVector<f64>) -> f64,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if n_mc < 2 {
        return Err(Error::Precondition("n_mc must be at least 2".into()));
    }
    let mut d = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let x = truth.sample(rng)?;
        let f0 = truth.density(&x);
        d.push(2.0 * ((b(&x) / f0).sqrt() - (a(&x) / f0).sqrt()));
    }
    Ok((mean(&d), (variance(&d) / n_mc as f64).sqrt()))
}

pub fn write_points_csv(points: &Points, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (1..=points.dim()).map(|j| format!("x{j}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for x in points.iter() {
        let row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
