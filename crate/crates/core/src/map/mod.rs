//! Gradient-based MAP estimation of a truncated mixture. Weights are
//! softmax-parameterized, scales log-parameterized and orientations given by
//! the Cayley transform of a skew-symmetric matrix.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{log_posterior, Component, DensitySnapshot, HybridScalePrior, Mixture, PriorConfig, ScaleMode, BPrior};
use crate::points::Points;
use crate::rng::RngStream;
use crate::stats::log_sum_exp;

/// `(I − S)(I + S)⁻¹` for the skew-symmetric `S` whose strict upper triangle,
/// read row by row, is `params`.
pub fn orthogonal_from_skew(params: &[f64], dim: usize) -> Result<DMatrix<f64>> {
    Ok(cayley(&skew(params, dim)?).0)
}

fn skew(params: &[f64], dim: usize) -> Result<DMatrix<f64>> {
    if params.len() != dim * (dim - 1) / 2 {
        return Err(Error::Precondition(format!(
            "{} skew parameters for dimension {dim}",
            params.len()
        )));
    }
    let mut s = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for a in 0..dim {
        for b in a + 1..dim {
            s[(a, b)] = params[k];
            s[(b, a)] = -params[k];
            k += 1;
        }
    }
    Ok(s)
}

/// Returns `(O, (I + S)⁻¹)`. `I + S` is always invertible for skew `S`.
fn cayley(s: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = s.nrows();
    let id = DMatrix::<f64>::identity(d, d);
    let m = (&id + s).try_inverse().expect("I + S is invertible for skew-symmetric S");
    ((&id - s) * &m, m)
}

/// Gradient with respect to the skew parameters given `G = ∂f/∂O`:
/// `∂f/∂S = −(I + O)ᵀ G Mᵀ`, then `∂f/∂s_ab = H_ab − H_ba`.
fn skew_gradient(g: &DMatrix<f64>, o: &DMatrix<f64>, m: &DMatrix<f64>) -> Vec<f64> {
    let d = o.nrows();
    let id = DMatrix::<f64>::identity(d, d);
    let h = -(&id + o).transpose() * g * m.transpose();
    let mut out = Vec::with_capacity(d * (d - 1) / 2);
    for a in 0..d {
        for b in a + 1..d {
            out.push(h[(a, b)] - h[(b, a)]);
        }
    }
    out
}

/// Unconstrained parameters of a `K`-component mixture, flattened as
/// `[raw weights | locations | log-scales | skew parameters]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapParams {
    pub k: usize,
    pub dim: usize,
    /// Scale vectors: 1 (partial) or `k` (hybrid).
    pub n_scales: usize,
    pub theta: Vec<f64>,
}

/// Parameter blocks of [`MapParams::theta`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Weights,
    Locations,
    LogScales,
    Skew,
}

impl MapParams {
    pub fn zeros(k: usize, dim: usize, mode: ScaleMode) -> Self {
        let n_scales = if mode == ScaleMode::Partial { 1 } else { k };
        let len = k + k * dim + n_scales * dim + k * dim * (dim - 1) / 2;
        Self {
            k,
            dim,
            n_scales,
            theta: vec![0.0; len],
        }
    }

    fn nskew(&self) -> usize {
        self.dim * (self.dim - 1) / 2
    }

    pub fn range(&self, block: Block) -> std::ops::Range<usize> {
        let (k, d) = (self.k, self.dim);
        let w = 0..k;
        let mu = w.end..w.end + k * d;
        let ls = mu.end..mu.end + self.n_scales * d;
        let sk = ls.end..ls.end + k * self.nskew();
        match block {
            Block::Weights => w,
            Block::Locations => mu,
            Block::LogScales => ls,
            Block::Skew => sk,
        }
    }

    fn weights(&self) -> Vec<f64> {
        let raw = &self.theta[self.range(Block::Weights)];
        let z = log_sum_exp(raw);
        let mut w: Vec<f64> = raw.iter().map(|a| (a - z).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }

    fn mu(&self, k: usize) -> DVector<f64> {
        let r = self.range(Block::Locations);
        DVector::from_column_slice(&self.theta[r.start + k * self.dim..r.start + (k + 1) * self.dim])
    }

    fn log_lambda(&self, k: usize) -> &[f64] {
        let r = self.range(Block::LogScales);
        let s = if self.n_scales == 1 { 0 } else { k };
        &self.theta[r.start + s * self.dim..r.start + (s + 1) * self.dim]
    }

    fn skew_params(&self, k: usize) -> &[f64] {
        let r = self.range(Block::Skew);
        let q = self.nskew();
        &self.theta[r.start + k * q..r.start + (k + 1) * q]
    }

    pub fn decode(&self) -> Result<DensitySnapshot> {
        let w = self.weights();
        let mut components = Vec::with_capacity(self.k);
        for (k, wk) in w.into_iter().enumerate() {
            components.push(Component {
                weight: wk,
                mu: self.mu(k),
                o: orthogonal_from_skew(self.skew_params(k), self.dim)?,
                lambda: DVector::from_iterator(self.dim, self.log_lambda(k).iter().map(|l| l.exp())),
            });
        }
        Ok(DensitySnapshot { components })
    }
}

/// Objective (log-posterior with the likelihood over `batch`, rescaled to
/// the full data size) and its gradient.
pub fn objective_and_gradient(
    params: &MapParams,
    data: &Points,
    batch: Option<&[usize]>,
    prior: &PriorConfig,
) -> Result<(f64, Vec<f64>)> {
    let (kk, d) = (params.k, params.dim);
    let snap = params.decode()?;
    let mut grad = vec![0.0; params.theta.len()];
    let w = snap.weights();

    // per-component caches
    let cay: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..kk)
        .map(|k| skew(params.skew_params(k), d).map(|s| cayley(&s)))
        .collect::<Result<_>>()?;
    let inv_l: Vec<DVector<f64>> = snap.components.iter().map(|c| c.lambda.map(|l| 1.0 / l)).collect();
    let mut g_mu = vec![DVector::<f64>::zeros(d); kk];
    let mut g_ll = vec![DVector::<f64>::zeros(d); kk];
    let mut g_o = vec![DMatrix::<f64>::zeros(d, d); kk];
    let mut g_logw = vec![0.0; kk];

    let idx: Vec<usize> = match batch {
        Some(b) => b.to_vec(),
        None => (0..data.len()).collect(),
    };
    let scale = data.len() as f64 / idx.len().max(1) as f64;
    let mut loglik = 0.0;
    let mut terms = vec![0.0; kk];
    let mut projs = vec![DVector::<f64>::zeros(d); kk];
    for &i in &idx {
        let x = DVector::from_column_slice(data.row(i));
        for (k, c) in snap.components.iter().enumerate() {
            let r = &x - &c.mu;
            projs[k] = c.o.transpose() * &r;
            terms[k] = w[k].ln() + c.log_density(x.as_slice());
        }
        let z = log_sum_exp(&terms);
        loglik += z;
        for (k, c) in snap.components.iter().enumerate() {
            let g = (terms[k] - z).exp() * scale;
            if g == 0.0 {
                continue;
            }
            let lp = projs[k].component_mul(&inv_l[k]);
            g_mu[k] += &c.o * &lp * g;
            for j in 0..d {
                g_ll[k][j] += g * (-0.5 + 0.5 * projs[k][j] * lp[j]);
            }
            let r = &x - &c.mu;
            g_o[k].ger(-g, &r, &lp, 1.0);
            g_logw[k] += g;
        }
    }
    loglik *= scale;

    // location prior
    let s0_inv = prior
        .sigma0
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Config("sigma0 is singular".into()))?;
    for (k, c) in snap.components.iter().enumerate() {
        g_mu[k] -= &s0_inv * (&c.mu - &prior.mu0);
        g_o[k] += &prior.m0;
    }

    // scale prior on log λ
    let sqrt = prior.scale_mode == ScaleMode::Hybrid && prior.hybrid_prior == HybridScalePrior::SqrtInverseGamma;
    let n_sc = params.n_scales;
    let mut g_scale = vec![DVector::<f64>::zeros(d); n_sc];
    for j in 0..d {
        let a = prior.a[j];
        let us: Vec<f64> = (0..n_sc)
            .map(|s| {
                let l = params.log_lambda(s)[j].exp();
                if sqrt {
                    l.sqrt()
                } else {
                    l
                }
            })
            .collect();
        // d log u / d log λ
        let du = if sqrt { 0.5 } else { 1.0 };
        let sum_inv: f64 = us.iter().map(|u| 1.0 / u).sum();
        for (s, u) in us.iter().enumerate() {
            let mut g = -(a + 1.0) * du - if sqrt { 0.5 } else { 0.0 };
            g += match &prior.b {
                BPrior::Fixed { values } => values[j] * du / u,
                BPrior::Hyper { kappa } => (n_sc as f64 * a + 1.0) * du / u / (kappa[j] + sum_inv),
            };
            g_scale[s][j] += g;
        }
    }
    for k in 0..kk {
        let s = if n_sc == 1 { 0 } else { k };
        g_scale[s] += &g_ll[k];
    }

    // weight prior, as a function of the weights, then through the softmax
    let g_wprior = weight_prior_gradient(&w, prior);
    let r = params.range(Block::Weights);
    let gw: Vec<f64> = (0..kk).map(|k| g_logw[k] / w[k].max(f64::MIN_POSITIVE) + g_wprior[k]).collect();
    let mean: f64 = (0..kk).map(|k| w[k] * gw[k]).sum();
    for k in 0..kk {
        grad[r.start + k] = w[k] * (gw[k] - mean);
    }
    let r = params.range(Block::Locations);
    for k in 0..kk {
        grad[r.start + k * d..r.start + (k + 1) * d].copy_from_slice(g_mu[k].as_slice());
    }
    let r = params.range(Block::LogScales);
    for s in 0..n_sc {
        grad[r.start + s * d..r.start + (s + 1) * d].copy_from_slice(g_scale[s].as_slice());
    }
    let r = params.range(Block::Skew);
    let q = d * (d - 1) / 2;
    for k in 0..kk {
        let gs = skew_gradient(&g_o[k], &cay[k].0, &cay[k].1);
        grad[r.start + k * q..r.start + (k + 1) * q].copy_from_slice(&gs);
    }

    // priors share the same value as the model's log-posterior
    let priors = log_posterior(&snap, &Points::new(d), prior)?;
    let value = loglik + priors;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            term: format!("MAP objective at theta = {:?}", params.theta),
        });
    }
    Ok((value, grad))
}

/// Gradient of the weight log-prior with respect to the weights themselves.
fn weight_prior_gradient(w: &[f64], prior: &PriorConfig) -> Vec<f64> {
    let k = w.len();
    let mut g = vec![0.0; k];
    if let Mixture::Dp { concentration: alpha } = prior.mixture {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| w[b].total_cmp(&w[a]));
        let sorted: Vec<f64> = order.iter().map(|&i| w[i]).collect();
        let mut suffix = vec![0.0; k + 1];
        for i in (0..k).rev() {
            suffix[i] = suffix[i + 1] + sorted[i];
        }
        // lp = Σ_{i<K−1} (α−1)(ln S_{i+1} − ln S_i) − ln S_i, ∂S_i/∂w_l = [l ≥ i]
        let mut gs = vec![0.0; k];
        for i in 0..k.saturating_sub(1) {
            let (a, b) = ((alpha - 1.0) / suffix[i + 1], -(alpha - 1.0) / suffix[i] - 1.0 / suffix[i]);
            for (l, gl) in gs.iter_mut().enumerate() {
                if l > i {
                    *gl += a;
                }
                if l >= i {
                    *gl += b;
                }
            }
        }
        for (pos, &i) in order.iter().enumerate() {
            g[i] = gs[pos];
        }
    }
    g
}

/// Maximum relative error per block between the analytic gradient and
/// central differences of the model log-posterior.
pub fn gradient_check(params: &MapParams, data: &Points, prior: &PriorConfig) -> Result<Vec<(Block, f64)>> {
    let (_, grad) = objective_and_gradient(params, data, None, prior)?;
    let f = |theta: &[f64]| -> Result<f64> {
        let p = MapParams {
            theta: theta.to_vec(),
            ..params.clone()
        };
        log_posterior(&p.decode()?, data, prior)
    };
    let mut out = Vec::new();
    for block in [Block::Weights, Block::Locations, Block::LogScales, Block::Skew] {
        let r = params.range(block);
        if r.is_empty() {
            continue;
        }
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut f2 = 0.0;
        for i in r {
            let h = 1e-5 * params.theta[i].abs().max(1.0);
            let mut t = params.theta.clone();
            t[i] += h;
            let up = f(&t)?;
            t[i] -= 2.0 * h;
            let down = f(&t)?;
            let fd = (up - down) / (2.0 * h);
            diff2 += (grad[i] - fd).powi(2);
            a2 += grad[i] * grad[i];
            f2 += fd * fd;
        }
        let denom = a2.max(f2).sqrt().max(1e-12);
        out.push((block, diff2.sqrt() / denom));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapSettings {
    pub k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub restarts: usize,
    /// Full-batch gradients below this many points, minibatches above.
    pub full_batch_below: usize,
    pub batch_size: usize,
    /// For MFM priors: largest `K` in the sweep `1..=k_max`.
    pub k_max: usize,
}

impl Default for MapSettings {
    fn default() -> Self {
        Self {
            k: 10,
            learning_rate: 1e-2,
            epochs: 2000,
            restarts: 5,
            full_batch_below: 2000,
            batch_size: 256,
            k_max: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapFit {
    pub snapshot: DensitySnapshot,
    pub objective: f64,
    /// `(epoch, full objective)` of the winning restart.
    pub trace: Vec<(usize, f64)>,
    pub k: usize,
}

/// Maximizes the log-posterior; for MFM priors sweeps `K = 1..=k_max` and
/// keeps the best, otherwise fits `settings.k` components.
pub fn fit_map(data: &Points, prior: &PriorConfig, settings: &MapSettings, rng: &mut RngStream) -> Result<MapFit> {
    prior.validate()?;
    if data.is_empty() {
        return Err(Error::Precondition("data must be non-empty".into()));
    }
    if settings.k == 0 || settings.epochs == 0 || settings.restarts == 0 {
        return Err(Error::Config("k, epochs and restarts must be positive".into()));
    }
    let ks: Vec<usize> = match prior.mixture {
        Mixture::Mfm { .. } => (1..=settings.k_max.max(1)).collect(),
        Mixture::Dp { .. } => vec![settings.k],
    };
    let mut best: Option<MapFit> = None;
    for k in ks {
        if k > prior.truncation {
            return Err(Error::Config(format!("K = {k} exceeds the truncation {}", prior.truncation)));
        }
        for restart in 0..settings.restarts {
            let mut r = rng.child((k as u64) << 32 | restart as u64);
            let fit = fit_once(data, prior, settings, k, &mut r)?;
            if best.as_ref().is_none_or(|b| fit.objective > b.objective) {
                best = Some(fit);
            }
        }
    }
    Ok(best.expect("at least one restart"))
}

fn initial_params<R: Rng + ?Sized>(data: &Points, prior: &PriorConfig, k: usize, rng: &mut R) -> MapParams {
    let d = data.dim();
    let mut p = MapParams::zeros(k, d, prior.scale_mode);
    let mean = data.mean();
    let var: f64 = data
        .iter()
        .map(|x| x.iter().zip(mean.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / (data.len() * d) as f64;
    let r = p.range(Block::Locations);
    for c in 0..k {
        let row = data.row(rng.random_range(0..data.len()));
        p.theta[r.start + c * d..r.start + (c + 1) * d].copy_from_slice(row);
    }
    let init_l = (var.max(1e-6) / (k as f64).powi(2).max(1.0)).ln();
    for i in p.range(Block::LogScales) {
        p.theta[i] = init_l;
    }
    for i in p.range(Block::Skew) {
        p.theta[i] = 0.3 * crate::distributions::sample_standard_normal(rng);
    }
    p
}

fn fit_once(data: &Points, prior: &PriorConfig, settings: &MapSettings, k: usize, rng: &mut RngStream) -> Result<MapFit> {
    let mut params = initial_params(data, prior, k, rng);
    let n = data.len();
    let full = n < settings.full_batch_below;
    let len = params.theta.len();
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; len];
    let mut v = vec![0.0; len];
    let mut best_theta = params.theta.clone();
    let mut best = f64::NEG_INFINITY;
    let mut trace = Vec::new();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut step = 0i32;
    for epoch in 1..=settings.epochs {
        let batches: Vec<Vec<usize>> = if full {
            vec![]
        } else {
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            perm.chunks(settings.batch_size).map(<[usize]>::to_vec).collect()
        };
        let mut epoch_value = None;
        let iter: Box<dyn Iterator<Item = Option<&[usize]>>> = if full {
            Box::new(std::iter::once(None))
        } else {
            Box::new(batches.iter().map(|b| Some(b.as_slice())))
        };
        for batch in iter {
            let (value, grad) = objective_and_gradient(&params, data, batch, prior)?;
            if full {
                epoch_value = Some((value, params.theta.clone()));
            }
            step += 1;
            let (c1, c2) = (1.0 - b1.powi(step), 1.0 - b2.powi(step));
            for i in 0..len {
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                params.theta[i] += settings.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        if !full && (epoch % 10 == 0 || epoch == settings.epochs) {
            let value = log_posterior(&params.decode()?, data, prior)?;
            epoch_value = Some((value, params.theta.clone()));
        }
        if let Some((value, theta)) = epoch_value {
            trace.push((epoch, value));
            if value > best {
                best = value;
                best_theta = theta;
            }
        }
    }
    // the final parameters have not been scored in full-batch mode
    let last = log_posterior(&params.decode()?, data, prior)?;
    if last > best {
        best = last;
        best_theta = params.theta.clone();
    }
    params.theta = best_theta;
    Ok(MapFit {
        snapshot: params.decode()?,
        objective: best,
        trace,
        k,
    })
}

pub fn write_objective_trace(trace: &[(usize, f64)], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,objective")?;
    for (e, v) in trace {
        writeln!(w, "{e},{v}")?;
    }
    w.flush()?;
    Ok(())
}
