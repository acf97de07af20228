//! Gibbs sampler for partial and hybrid location-scale mixtures: Neal's
//! auxiliary-component allocation step, conjugate location, scale and
//! hyperparameter draws, and matrix-BMF orientation scans.

mod stats;
mod trace;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::distributions::{gibbs_scan_orthogonal, sample_gamma, sample_inverse_gamma, sample_orientation_prior, sample_standard_normal};
use crate::error::{Error, Result};
use crate::model::{gaussian_log_density, BPrior, Cluster, HybridScalePrior, MixtureState, PriorConfig, ScaleMode};
use crate::points::Points;
use crate::rng::RngStream;

pub use stats::ClusterStats;
pub use trace::{read_trace, write_allocations, write_trace, ChainTrace, ClusterRecord, Counters, Timings, TraceRecord};

/// Random-walk step on `log λ` for the square-root InvGamma option.
const MH_STEP: f64 = 0.2;
/// Sweeps between checks of the incrementally maintained statistics.
const STATS_CHECK_EVERY: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub bmf_scans: usize,
    pub prior: PriorConfig,
    pub seed: u64,
    pub stream: u64,
    /// Clusters in the k-means initialization.
    pub init_clusters: usize,
    pub record_allocations: bool,
}

impl GibbsConfig {
    pub fn new(prior: PriorConfig, iterations: usize, seed: u64) -> Self {
        Self {
            iterations,
            burn_in: iterations / 2,
            thin: 1,
            bmf_scans: 1,
            prior,
            seed,
            stream: 0,
            init_clusters: 8,
            record_allocations: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if self.iterations == 0 || self.thin == 0 || self.bmf_scans == 0 {
            return Err(Error::Config("iterations, thin and bmf_scans must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config("burn_in must be smaller than iterations".into()));
        }
        if self.init_clusters == 0 {
            return Err(Error::Config("init_clusters must be positive".into()));
        }
        Ok(())
    }

    pub fn kept_records(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Conjugate draw of a cluster location given its orientation, scales and
/// member sum: `μ ~ N(A⁻¹ r, A⁻¹)` with `A = Σ0⁻¹ + n O Λ⁻¹ Oᵀ`.
pub fn sample_cluster_location<R: Rng + ?Sized>(
    o: &DMatrix<f64>,
    lambda: &DVector<f64>,
    n: usize,
    sum: &DVector<f64>,
    prior: &PriorConfig,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let s0_inv = prior
        .sigma0
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Config("sigma0 is singular".into()))?;
    let prec = o * DMatrix::from_diagonal(&lambda.map(|l| 1.0 / l)) * o.transpose();
    let a = &s0_inv + &prec * n as f64;
    let rhs = &s0_inv * &prior.mu0 + &prec * sum;
    gaussian_from_precision(a, rhs, rng)
}

fn gaussian_from_precision<R: Rng + ?Sized>(a: DMatrix<f64>, rhs: DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let a = crate::linalg::symmetrize(&a);
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Precondition("location precision is not positive definite".into()))?;
    let mean = chol.solve(&rhs);
    let z = DVector::from_fn(rhs.len(), |_, _| sample_standard_normal(rng));
    // Lᵀ v = z gives v ~ N(0, A⁻¹)
    let v = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Precondition("singular Cholesky factor".into()))?;
    Ok(mean + v)
}

/// `scans` matrix-BMF column scans of `O` for scatter `S` and scales `λ`.
pub fn sample_cluster_orientation<R: Rng + ?Sized>(
    o: &DMatrix<f64>,
    scatter: &DMatrix<f64>,
    lambda: &DVector<f64>,
    m0: &DMatrix<f64>,
    scans: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let bdiag = lambda.map(|l| -0.5 / l);
    let s = crate::linalg::symmetrize(scatter);
    let mut o = o.clone();
    for _ in 0..scans {
        o = gibbs_scan_orthogonal(&o, &s, bdiag.as_slice(), m0, rng)?;
    }
    Ok(o)
}

/// Draw from the base measure `G0`: Gaussian location, matrix-BMF
/// orientation and, in hybrid mode, scales given `b`.
pub fn sample_base_cluster<R: Rng + ?Sized>(prior: &PriorConfig, b: &DVector<f64>, rng: &mut R) -> Result<Cluster> {
    let d = prior.dim();
    let chol = prior
        .sigma0
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("sigma0 is not positive definite".into()))?;
    let z = DVector::from_fn(d, |_, _| sample_standard_normal(rng));
    let mu = &prior.mu0 + chol.l() * z;
    let o = sample_orientation_prior(&prior.m0, rng);
    let lambda = match prior.scale_mode {
        ScaleMode::Partial => None,
        ScaleMode::Hybrid => Some(sample_hybrid_scales(prior, b, rng)?),
    };
    Ok(Cluster { mu, o, lambda })
}

fn sample_hybrid_scales<R: Rng + ?Sized>(prior: &PriorConfig, b: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let mut l = DVector::zeros(prior.dim());
    for j in 0..prior.dim() {
        let u = sample_inverse_gamma(prior.a[j], b[j], rng)?;
        l[j] = match prior.hybrid_prior {
            HybridScalePrior::InverseGamma => u,
            HybridScalePrior::SqrtInverseGamma => (u * u).clamp(1e-300, 1e300),
        };
    }
    Ok(l)
}

/// Sampler state plus the caches the updates share. Generic over the data so
/// successive-conditional tests can swap the data between sweeps.
pub struct GibbsSampler<'a> {
    prior: &'a PriorConfig,
    pub state: MixtureState,
    stats: Vec<ClusterStats>,
    /// Likelihood replaced by a constant (prior simulation).
    pub prior_only: bool,
    pub bmf_scans: usize,
    pub counters: Counters,
    pub timings: Timings,
    aux: Vec<Cluster>,
    logw: Vec<f64>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(prior: &'a PriorConfig, state: MixtureState, data: &Points) -> Result<Self> {
        prior.validate()?;
        if data.dim() != prior.dim() && !data.is_empty() {
            return Err(Error::Precondition("data and prior dimensions differ".into()));
        }
        if state.alloc.len() != data.len() {
            return Err(Error::Precondition("state allocations do not match data".into()));
        }
        state.validate()?;
        let mut s = Self {
            prior,
            state,
            stats: Vec::new(),
            prior_only: false,
            bmf_scans: 1,
            counters: Counters::default(),
            timings: Timings::default(),
            aux: Vec::new(),
            logw: Vec::new(),
        };
        s.rebuild_stats(data);
        Ok(s)
    }

    /// A state drawn from the prior with all `n` points in one cluster.
    pub fn prior_state<R: Rng + ?Sized>(prior: &PriorConfig, n: usize, rng: &mut R) -> Result<MixtureState> {
        let d = prior.dim();
        let b = match &prior.b {
            BPrior::Fixed { values } => DVector::from_column_slice(values),
            BPrior::Hyper { kappa } => {
                let mut b = DVector::zeros(d);
                for j in 0..d {
                    b[j] = sample_gamma(1.0, kappa[j], rng)?;
                }
                b
            }
        };
        let mut lambda = DVector::zeros(d);
        for j in 0..d {
            lambda[j] = sample_inverse_gamma(prior.a[j], b[j], rng)?;
        }
        let clusters = if n > 0 { vec![sample_base_cluster(prior, &b, rng)?] } else { Vec::new() };
        Ok(MixtureState {
            alloc: vec![0; n],
            clusters,
            lambda,
            b,
        })
    }

    /// Data-driven starting point: k-means++ seeding and a few Lloyd steps.
    pub fn initial_state<R: Rng + ?Sized>(data: &Points, prior: &PriorConfig, k0: usize, rng: &mut R) -> Result<MixtureState> {
        let n = data.len();
        let d = data.dim();
        if n == 0 {
            return Err(Error::Precondition("data must be non-empty".into()));
        }
        let k = k0.min(n).max(1);
        let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let mut centers: Vec<Vec<f64>> = vec![data.row(rng.random_range(0..n)).to_vec()];
        let mut best = vec![f64::INFINITY; n];
        while centers.len() < k {
            let last = centers.last().expect("non-empty");
            for (i, b) in best.iter_mut().enumerate() {
                *b = b.min(dist2(data.row(i), last));
            }
            let total: f64 = best.iter().sum();
            if !(total > 0.0) {
                break;
            }
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, b) in best.iter().enumerate() {
                if u < *b {
                    pick = i;
                    break;
                }
                u -= b;
            }
            centers.push(data.row(pick).to_vec());
        }
        let mut alloc = vec![0usize; n];
        for _ in 0..10 {
            for (i, a) in alloc.iter_mut().enumerate() {
                *a = (0..centers.len())
                    .min_by(|&p, &q| dist2(data.row(i), &centers[p]).total_cmp(&dist2(data.row(i), &centers[q])))
                    .expect("at least one center");
            }
            let mut sums = vec![vec![0.0; d]; centers.len()];
            let mut counts = vec![0usize; centers.len()];
            for (i, &a) in alloc.iter().enumerate() {
                counts[a] += 1;
                sums[a].iter_mut().zip(data.row(i)).for_each(|(s, v)| *s += v);
            }
            for (c, (s, cnt)) in centers.iter_mut().zip(sums.iter().zip(&counts)) {
                if *cnt > 0 {
                    c.iter_mut().zip(s).for_each(|(c, s)| *c = s / *cnt as f64);
                }
            }
        }
        let mut state = MixtureState {
            alloc,
            clusters: centers
                .iter()
                .map(|c| Cluster {
                    mu: DVector::from_column_slice(c),
                    o: DMatrix::identity(d, d),
                    lambda: None,
                })
                .collect(),
            lambda: DVector::zeros(d),
            b: prior.initial_b(),
        };
        compact(&mut state, None);
        // pooled within-cluster variance per coordinate
        let mut lambda = DVector::from_element(d, 0.0);
        for (i, &c) in state.alloc.iter().enumerate() {
            for j in 0..d {
                lambda[j] += (data.row(i)[j] - state.clusters[c].mu[j]).powi(2) / n as f64;
            }
        }
        lambda.apply(|l| *l = l.max(1e-4));
        if prior.scale_mode == ScaleMode::Hybrid {
            for c in &mut state.clusters {
                c.lambda = Some(lambda.clone());
            }
        }
        state.lambda = lambda;
        Ok(state)
    }

    pub fn stats(&self) -> &[ClusterStats] {
        &self.stats
    }

    pub fn rebuild_stats(&mut self, data: &Points) {
        let d = self.prior.dim();
        self.stats = vec![ClusterStats::empty(d); self.state.clusters.len()];
        for (i, &c) in self.state.alloc.iter().enumerate() {
            self.stats[c].add(data.row(i));
        }
    }

    fn cluster_loglik(&self, y: &[f64], cl: &Cluster) -> f64 {
        if self.prior_only {
            return 0.0;
        }
        gaussian_log_density(y, &cl.mu, &cl.o, cl.lambda.as_ref().unwrap_or(&self.state.lambda))
    }

    /// Normalized allocation probabilities for point `y` with the point
    /// already removed: existing clusters first (in slot order, empty slots
    /// skipped), then the auxiliaries.
    pub fn allocation_probabilities(&self, y: &[f64], aux: &[Cluster]) -> Vec<f64> {
        let alpha = self.prior.concentration();
        let m = self.prior.m as f64;
        let mut logw: Vec<f64> = self
            .stats
            .iter()
            .zip(&self.state.clusters)
            .filter(|(s, _)| s.n > 0)
            .map(|(s, cl)| (s.n as f64).ln() + self.cluster_loglik(y, cl))
            .collect();
        logw.extend(aux.iter().map(|cl| (alpha / m).ln() + self.cluster_loglik(y, cl)));
        normalize_log_weights(&mut logw);
        logw
    }

    /// One pass of the auxiliary-component allocation step over all points,
    /// followed by compaction of cluster labels.
    pub fn update_allocations(&mut self, data: &Points, rng: &mut RngStream) -> Result<()> {
        let alpha = self.prior.concentration();
        let m = self.prior.m;
        let log_aux = (alpha / m as f64).ln();
        let mut slots: Vec<usize> = Vec::new();
        for i in 0..data.len() {
            let y = data.row(i);
            let c = self.state.alloc[i];
            self.stats[c].remove(y);
            let singleton = self.stats[c].n == 0;
            self.aux.clear();
            if singleton {
                self.aux.push(self.state.clusters[c].clone());
            }
            while self.aux.len() < m {
                let cl = sample_base_cluster(self.prior, &self.state.b, rng)?;
                self.aux.push(cl);
            }
            self.logw.clear();
            slots.clear();
            for (l, (s, cl)) in self.stats.iter().zip(&self.state.clusters).enumerate() {
                if s.n > 0 {
                    self.logw.push((s.n as f64).ln() + self.cluster_loglik(y, cl));
                    slots.push(l);
                }
            }
            for cl in &self.aux {
                self.logw.push(log_aux + self.cluster_loglik(y, cl));
            }
            let mut w = std::mem::take(&mut self.logw);
            normalize_log_weights(&mut w);
            let pick = sample_index(&w, rng);
            self.logw = w;

            let target = if pick < slots.len() {
                slots[pick]
            } else {
                let h = pick - slots.len();
                let cl = self.aux.swap_remove(h);
                if singleton {
                    self.state.clusters[c] = cl;
                    c
                } else {
                    self.counters.new_clusters += 1;
                    self.state.clusters.push(cl);
                    self.stats.push(ClusterStats::empty(self.prior.dim()));
                    self.state.clusters.len() - 1
                }
            };
            if singleton && target != c {
                self.counters.removed_clusters += 1;
            }
            self.state.alloc[i] = target;
            self.stats[target].add(y);
        }
        compact(&mut self.state, Some(&mut self.stats));
        Ok(())
    }

    pub fn update_cluster_location(&mut self, c: usize, rng: &mut RngStream) -> Result<()> {
        let st = &self.stats[c];
        let (n, sum) = if self.prior_only {
            (0, DVector::zeros(self.prior.dim()))
        } else {
            (st.n, st.sum.clone())
        };
        let lambda = self.state.cluster_lambda(c).clone();
        let mu = sample_cluster_location(&self.state.clusters[c].o, &lambda, n, &sum, self.prior, rng)?;
        self.state.clusters[c].mu = mu;
        Ok(())
    }

    pub fn update_cluster_orientation(&mut self, c: usize, rng: &mut RngStream) -> Result<()> {
        let d = self.prior.dim();
        let scatter = if self.prior_only {
            DMatrix::zeros(d, d)
        } else {
            self.stats[c].centered_scatter(&self.state.clusters[c].mu)
        };
        let lambda = self.state.cluster_lambda(c).clone();
        let o = sample_cluster_orientation(&self.state.clusters[c].o, &scatter, &lambda, &self.prior.m0, self.bmf_scans, rng)?;
        self.state.clusters[c].o = o;
        Ok(())
    }

    /// Per-coordinate residual sums `Σ ⟨O^j, y − μ⟩²` of one cluster.
    pub fn cluster_residuals(&self, c: usize) -> DVector<f64> {
        let cl = &self.state.clusters[c];
        let s = self.stats[c].centered_scatter(&cl.mu);
        DVector::from_fn(self.prior.dim(), |j, _| {
            let col = cl.o.column(j);
            col.dot(&(&s * col)).max(0.0)
        })
    }

    /// Shared residual sums computed from the cached statistics.
    pub fn residual_sums(&self) -> DVector<f64> {
        let mut ss = DVector::zeros(self.prior.dim());
        for c in 0..self.state.clusters.len() {
            ss += self.cluster_residuals(c);
        }
        ss
    }

    pub fn update_scales(&mut self, rng: &mut RngStream) -> Result<()> {
        let d = self.prior.dim();
        let b = self.state.b.clone();
        match self.prior.scale_mode {
            ScaleMode::Partial => {
                let (n, ss) = if self.prior_only {
                    (0.0, DVector::zeros(d))
                } else {
                    (self.state.alloc.len() as f64, self.residual_sums())
                };
                for j in 0..d {
                    self.state.lambda[j] = sample_inverse_gamma(self.prior.a[j] + 0.5 * n, b[j] + 0.5 * ss[j], rng)?;
                }
            }
            ScaleMode::Hybrid => {
                for c in 0..self.state.clusters.len() {
                    let (n, ss) = if self.prior_only {
                        (0.0, DVector::zeros(d))
                    } else {
                        (self.stats[c].n as f64, self.cluster_residuals(c))
                    };
                    let mut l = self.state.clusters[c].lambda.clone().expect("hybrid cluster scales");
                    for j in 0..d {
                        l[j] = match self.prior.hybrid_prior {
                            HybridScalePrior::InverseGamma => {
                                sample_inverse_gamma(self.prior.a[j] + 0.5 * n, b[j] + 0.5 * ss[j], rng)?
                            }
                            HybridScalePrior::SqrtInverseGamma => {
                                self.mh_sqrt_scale(l[j], n, ss[j], self.prior.a[j], b[j], rng)
                            }
                        };
                    }
                    self.state.clusters[c].lambda = Some(l);
                }
            }
        }
        Ok(())
    }

    /// Random-walk Metropolis on `log λ` targeting
    /// `λ^{-n/2} e^{-ss/(2λ)} · p(λ)` with `√λ ~ InvGamma(a, b)`.
    fn mh_sqrt_scale(&mut self, lambda: f64, n: f64, ss: f64, a: f64, b: f64, rng: &mut RngStream) -> f64 {
        // density of η = log λ: λ p(λ) with p(λ) = IG(√λ)/(2√λ)
        let log_target = |eta: f64| {
            let l = eta.exp();
            let u = l.sqrt();
            -0.5 * n * eta - 0.5 * ss / l - (a + 1.0) * u.ln() - b / u - u.ln() + eta
        };
        let eta = lambda.ln();
        let prop = eta + MH_STEP * sample_standard_normal(rng);
        self.counters.mh_proposed += 1;
        if rng.random::<f64>().ln() < log_target(prop) - log_target(eta) {
            self.counters.mh_accepted += 1;
            prop.exp().clamp(1e-300, 1e300)
        } else {
            lambda
        }
    }

    /// `b_j | λ ~ Gamma(shape, κ_j + Σ 1/u)` with `u = λ` (or `√λ`); the shape
    /// is `1 + a_j` per scale vector the `b_j` governs.
    pub fn update_hyper_b(&mut self, rng: &mut RngStream) -> Result<()> {
        let BPrior::Hyper { kappa } = &self.prior.b else {
            return Err(Error::Mode("b is fixed in this configuration".into()));
        };
        for j in 0..self.prior.dim() {
            let a = self.prior.a[j];
            let (count, inv) = match self.prior.scale_mode {
                ScaleMode::Partial => (1.0, 1.0 / self.state.lambda[j]),
                ScaleMode::Hybrid => {
                    let sqrt = self.prior.hybrid_prior == HybridScalePrior::SqrtInverseGamma;
                    let inv: f64 = self
                        .state
                        .clusters
                        .iter()
                        .map(|c| {
                            let l = c.lambda.as_ref().expect("hybrid cluster scales")[j];
                            1.0 / if sqrt { l.sqrt() } else { l }
                        })
                        .sum();
                    (self.state.clusters.len() as f64, inv)
                }
            };
            self.state.b[j] = sample_gamma(1.0 + count * a, kappa[j] + inv, rng)?.clamp(1e-300, 1e300);
        }
        Ok(())
    }

    /// One full sweep: allocations, per-cluster (μ, O), scales, then `b`.
    pub fn sweep(&mut self, data: &Points, iteration: usize, rng: &mut RngStream) -> Result<()> {
        let numeric = |update: &'static str| move |e: Error| Error::Numeric {
            iteration,
            update,
            message: e.to_string(),
        };
        let t = Instant::now();
        self.update_allocations(data, rng).map_err(numeric("allocations"))?;
        self.timings.allocations += t.elapsed().as_secs_f64();

        for c in 0..self.state.clusters.len() {
            let t = Instant::now();
            self.update_cluster_location(c, rng).map_err(numeric("location"))?;
            self.timings.locations += t.elapsed().as_secs_f64();
            if !self.state.clusters[c].mu.iter().all(|v| v.is_finite()) {
                return Err(numeric("location")(Error::non_finite("mu")));
            }
            let t = Instant::now();
            self.update_cluster_orientation(c, rng).map_err(numeric("orientation"))?;
            self.timings.orientations += t.elapsed().as_secs_f64();
        }

        let t = Instant::now();
        self.update_scales(rng).map_err(numeric("scales"))?;
        self.timings.scales += t.elapsed().as_secs_f64();
        let bad_scale = self.state.lambda.iter().any(|l| !l.is_finite())
            || self.state.clusters.iter().filter_map(|c| c.lambda.as_ref()).flatten().any(|l| !(l.is_finite() && *l > 0.0));
        if bad_scale {
            return Err(numeric("scales")(Error::non_finite("lambda")));
        }

        if self.prior.is_hyper_b() {
            let t = Instant::now();
            self.update_hyper_b(rng).map_err(numeric("hyper_b"))?;
            self.timings.hyper_b += t.elapsed().as_secs_f64();
        }
        self.counters.sweeps += 1;
        Ok(())
    }

    /// Compares the cached residual sums with a from-scratch computation and
    /// returns both.
    pub fn residual_check(&self, data: &Points) -> (DVector<f64>, DVector<f64>) {
        let d = self.prior.dim();
        let mut scratch = DVector::zeros(d);
        for (i, &c) in self.state.alloc.iter().enumerate() {
            let cl = &self.state.clusters[c];
            let r = DVector::from_column_slice(data.row(i)) - &cl.mu;
            for j in 0..d {
                scratch[j] += cl.o.column(j).dot(&r).powi(2);
            }
        }
        (self.residual_sums(), scratch)
    }

    /// Mixture log-likelihood under weights `n_c / n`.
    pub fn log_likelihood(&self, data: &Points) -> f64 {
        let snap = self.state.to_snapshot();
        data.iter().map(|x| snap.log_density(x)).sum()
    }
}

fn normalize_log_weights(w: &mut [f64]) {
    let z = crate::stats::log_sum_exp(w);
    w.iter_mut().for_each(|v| *v = (*v - z).exp());
}

fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut u = rng.random::<f64>() * p.iter().sum::<f64>();
    for (k, pk) in p.iter().enumerate() {
        if u < *pk {
            return k;
        }
        u -= pk;
    }
    p.iter().rposition(|pk| *pk > 0.0).unwrap_or(p.len() - 1)
}

/// Drops empty clusters and relabels the rest by first member index.
fn compact(state: &mut MixtureState, stats: Option<&mut Vec<ClusterStats>>) {
    let mut map = vec![usize::MAX; state.clusters.len()];
    let mut order = Vec::new();
    for c in state.alloc.iter_mut() {
        if map[*c] == usize::MAX {
            map[*c] = order.len();
            order.push(*c);
        }
        *c = map[*c];
    }
    let mut old: Vec<Option<Cluster>> = std::mem::take(&mut state.clusters).into_iter().map(Some).collect();
    state.clusters = order.iter().map(|&c| old[c].take().expect("each cluster used once")).collect();
    if let Some(stats) = stats {
        let mut old: Vec<Option<ClusterStats>> = std::mem::take(stats).into_iter().map(Some).collect();
        *stats = order.iter().map(|&c| old[c].take().expect("each cluster used once")).collect();
    }
}

/// Runs one chain on `data` from a k-means start.
pub fn run_chain(data: &Points, config: &GibbsConfig) -> Result<ChainTrace> {
    run_chain_with(data, config, |_, _| {})
}

/// As [`run_chain`], calling `progress(iteration, clusters)` every 100 sweeps.
pub fn run_chain_with(data: &Points, config: &GibbsConfig, mut progress: impl FnMut(usize, usize)) -> Result<ChainTrace> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Precondition("data must be non-empty".into()));
    }
    let prior = &config.prior;
    let mut rng = RngStream::new(config.seed, config.stream);
    let state = GibbsSampler::initial_state(data, prior, config.init_clusters, &mut rng)?;
    let mut sampler = GibbsSampler::new(prior, state, data)?;
    sampler.bmf_scans = config.bmf_scans;
    let mut records = Vec::with_capacity(config.kept_records());
    for iter in 1..=config.iterations {
        sampler.sweep(data, iter, &mut rng)?;
        if iter % STATS_CHECK_EVERY == 0 {
            let (cached, scratch) = sampler.residual_check(data);
            let err = (&cached - &scratch).amax() / (1.0 + scratch.amax());
            if err > 1e-8 {
                return Err(Error::Numeric {
                    iteration: iter,
                    update: "residual statistics",
                    message: format!("cached statistics drifted by {err:e}"),
                });
            }
            sampler.rebuild_stats(data);
            progress(iter, sampler.state.n_clusters());
        }
        if iter > config.burn_in && (iter - config.burn_in) % config.thin == 0 {
            records.push(TraceRecord::from_state(
                iter,
                &sampler.state,
                sampler.log_likelihood(data),
                prior.scale_mode,
                config.record_allocations,
            ));
        }
    }
    Ok(ChainTrace {
        records,
        n: data.len(),
        counters: sampler.counters,
        timings: sampler.timings,
    })
}

/// Runs `chains` independent chains on disjoint streams, one thread each.
pub fn run_chains(data: &Points, config: &GibbsConfig, chains: usize) -> Result<Vec<ChainTrace>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..chains)
            .map(|k| {
                let mut cfg = config.clone();
                cfg.stream = config.stream + k as u64;
                s.spawn(move || run_chain(data, &cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Precondition("chain thread panicked".into()))))
            .collect()
    })
}
