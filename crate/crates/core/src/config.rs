//! Experiment configuration: a TOML file with one table per concern.
//!
//! Every section is optional except `[manifold]`; omitted keys take the
//! defaults below, and unknown keys are rejected. [`ExperimentConfig`]
//! serializes to the fully resolved form that is echoed next to outputs.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ManifoldSpec, NoiseModel, NoiseSpec};
use crate::gibbs::GibbsConfig;
use crate::map::MapSettings;
use crate::model::{BPrior, HybridScalePrior, Mixture, PriorConfig, ScaleMode};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    output: Option<PathBuf>,
    manifold: toml::Table,
    noise: Option<NoiseSection>,
    data: Option<DataSection>,
    prior: Option<PriorSection>,
    inference: Option<InferenceSection>,
    eval: Option<EvalSection>,
    approx: Option<ApproxSection>,
    rate: Option<RateSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default = "default_noise_model")]
    pub model: NoiseModel,
    pub delta: f64,
    #[serde(default = "default_beta0")]
    pub beta0: f64,
    #[serde(default = "default_beta_perp")]
    pub beta_perp: f64,
}

fn default_noise_model() -> NoiseModel {
    NoiseModel::Orthonormal
}
fn default_beta0() -> f64 {
    2.0
}
fn default_beta_perp() -> f64 {
    6.0
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            model: default_noise_model(),
            delta: 0.1,
            beta0: default_beta0(),
            beta_perp: default_beta_perp(),
        }
    }
}

impl NoiseSection {
    pub fn spec(&self) -> NoiseSpec {
        NoiseSpec {
            model: self.model,
            delta: self.delta,
            beta0: self.beta0,
            beta_perp: self.beta_perp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n: usize,
    pub seed: u64,
    /// Fraction of the generated points held out from fitting.
    pub heldout_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n: 300,
            seed: 0,
            heldout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub mixture: Mixture,
    pub scale_mode: ScaleMode,
    pub hybrid_prior: HybridScalePrior,
    pub mu0: Option<Vec<f64>>,
    /// Row-major rows.
    pub sigma0: Option<Vec<Vec<f64>>>,
    pub m0: Option<Vec<Vec<f64>>>,
    pub a: Option<Vec<f64>>,
    pub b: Option<BPrior>,
    pub m: usize,
    pub truncation: usize,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            mixture: Mixture::Dp { concentration: 1.0 },
            scale_mode: ScaleMode::Partial,
            hybrid_prior: HybridScalePrior::InverseGamma,
            mu0: None,
            sigma0: None,
            m0: None,
            a: None,
            b: None,
            m: 2,
            truncation: 30,
        }
    }
}

fn matrix(rows: &[Vec<f64>], dim: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Config(format!("prior.{name} must be {dim}x{dim}")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl PriorSection {
    /// Fills dimension-dependent defaults.
    fn resolve(&mut self, dim: usize) {
        let d = PriorConfig::default_for(dim);
        self.mu0.get_or_insert_with(|| d.mu0.as_slice().to_vec());
        self.sigma0.get_or_insert_with(|| rows_of(&d.sigma0));
        self.m0.get_or_insert_with(|| rows_of(&d.m0));
        self.a.get_or_insert_with(|| d.a.as_slice().to_vec());
        self.b.get_or_insert(d.b);
    }

    pub fn to_prior(&self, dim: usize) -> Result<PriorConfig> {
        let mut s = self.clone();
        s.resolve(dim);
        let mu0 = s.mu0.expect("resolved");
        let a = s.a.expect("resolved");
        if mu0.len() != dim || a.len() != dim {
            return Err(Error::Config(format!("prior.mu0 and prior.a must have length {dim}")));
        }
        let p = PriorConfig {
            mixture: s.mixture,
            scale_mode: s.scale_mode,
            hybrid_prior: s.hybrid_prior,
            mu0: DVector::from_vec(mu0),
            sigma0: matrix(s.sigma0.as_deref().expect("resolved"), dim, "sigma0")?,
            m0: matrix(s.m0.as_deref().expect("resolved"), dim, "m0")?,
            a: DVector::from_vec(a),
            b: s.b.expect("resolved"),
            m: s.m,
            truncation: s.truncation,
        };
        p.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Gibbs,
    Map,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsSection {
    pub iterations: usize,
    /// Defaults to half the iterations.
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub bmf_scans: usize,
    pub init_clusters: usize,
    pub record_allocations: bool,
}

impl Default for GibbsSection {
    fn default() -> Self {
        Self {
            iterations: 5000,
            burn_in: None,
            thin: 1,
            bmf_scans: 1,
            init_clusters: 8,
            record_allocations: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    pub k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub restarts: usize,
    pub full_batch_below: usize,
    pub batch_size: usize,
    pub k_max: usize,
}

impl Default for MapSection {
    fn default() -> Self {
        let d = MapSettings::default();
        Self {
            k: d.k,
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            restarts: d.restarts,
            full_batch_below: d.full_batch_below,
            batch_size: d.batch_size,
            k_max: d.k_max,
        }
    }
}

impl MapSection {
    pub fn settings(&self) -> MapSettings {
        MapSettings {
            k: self.k,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            restarts: self.restarts,
            full_batch_below: self.full_batch_below,
            batch_size: self.batch_size,
            k_max: self.k_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub backend: Backend,
    pub gibbs: GibbsSection,
    pub map: MapSection,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self {
            backend: Backend::Gibbs,
            gibbs: GibbsSection::default(),
            map: MapSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_mc: usize,
    /// Posterior-predictive points to emit; defaults to the training size.
    pub predictive_samples: Option<usize>,
    /// Base-measure draws standing in for the fresh-component term of the
    /// predictive density.
    pub fresh_draws: usize,
    pub hellinger: bool,
    pub l1: bool,
    pub heldout: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_mc: 20_000,
            predictive_samples: None,
            fresh_draws: 16,
            hellinger: true,
            l1: true,
            heldout: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxTargetKind {
    Manifold,
    FlatGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxSection {
    pub target: ApproxTargetKind,
    pub sigmas: Vec<f64>,
    pub grid: usize,
    pub n_mc: usize,
    /// Standard deviations of the flat Gaussian target.
    pub sd: [f64; 2],
}

impl Default for ApproxSection {
    fn default() -> Self {
        Self {
            target: ApproxTargetKind::Manifold,
            sigmas: vec![0.4, 0.2, 0.1, 0.05],
            grid: 200,
            n_mc: 2000,
            sd: [1.0, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSection {
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub heldout_n: usize,
    pub n_mc: usize,
    pub threads: usize,
}

impl Default for RateSection {
    fn default() -> Self {
        Self {
            n_grid: vec![100, 300, 1000],
            seeds: vec![1, 2, 3],
            heldout_n: 500,
            n_mc: 20_000,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output: Option<PathBuf>,
    pub manifold: ManifoldSpec,
    pub noise: NoiseSection,
    pub data: DataSection,
    pub prior: PriorSection,
    pub inference: InferenceSection,
    pub eval: EvalSection,
    pub approx: ApproxSection,
    pub rate: RateSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        let manifold = resolve_manifold(&raw.manifold)?;
        let dim = manifold.ambient_dim();
        let mut prior = raw.prior.unwrap_or_default();
        prior.resolve(dim);
        let mut inference = raw.inference.unwrap_or_default();
        inference.gibbs.burn_in.get_or_insert(inference.gibbs.iterations / 2);
        let cfg = Self {
            output: raw.output,
            manifold,
            noise: raw.noise.unwrap_or_default(),
            data: raw.data.unwrap_or_default(),
            prior,
            inference,
            eval: raw.eval.unwrap_or_default(),
            approx: raw.approx.unwrap_or_default(),
            rate: raw.rate.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn dim(&self) -> usize {
        self.manifold.ambient_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.manifold.validate().map_err(cfg_err)?;
        self.noise.spec().validate().map_err(cfg_err)?;
        if self.data.n == 0 {
            return Err(Error::Config("data.n must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.data.heldout_fraction) {
            return Err(Error::Config("data.heldout_fraction must lie in [0, 1)".into()));
        }
        self.prior.to_prior(self.dim())?;
        self.gibbs_config(self.data.seed)?.validate().map_err(cfg_err)?;
        let m = &self.inference.map;
        if m.k == 0 || m.epochs == 0 || m.restarts == 0 || m.batch_size == 0 || m.k_max == 0 || !(m.learning_rate > 0.0) {
            return Err(Error::Config("inference.map fields must be positive".into()));
        }
        if self.eval.n_mc < 2 {
            return Err(Error::Config("eval.n_mc must be at least 2".into()));
        }
        let a = &self.approx;
        if a.sigmas.is_empty() || a.sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("approx.sigmas must be non-empty and strictly decreasing".into()));
        }
        if a.grid < 2 || a.grid % 2 == 1 {
            return Err(Error::Config("approx.grid must be an even number of intervals".into()));
        }
        if a.n_mc == 0 {
            return Err(Error::Config("approx.n_mc must be positive".into()));
        }
        let r = &self.rate;
        if r.n_grid.is_empty() || r.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("rate.n_grid must be non-empty and increasing".into()));
        }
        if r.seeds.len() < 3 {
            return Err(Error::Config("rate.seeds needs at least 3 seeds".into()));
        }
        Ok(())
    }

    pub fn prior_config(&self) -> Result<PriorConfig> {
        self.prior.to_prior(self.dim())
    }

    pub fn gibbs_config(&self, seed: u64) -> Result<GibbsConfig> {
        let g = &self.inference.gibbs;
        let mut c = GibbsConfig::new(self.prior_config()?, g.iterations, seed);
        c.burn_in = g.burn_in.unwrap_or(g.iterations / 2);
        c.thin = g.thin;
        c.bmf_scans = g.bmf_scans;
        c.init_clusters = g.init_clusters;
        c.record_allocations = g.record_allocations;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Overlays the given keys on the family's default parameters.
fn resolve_manifold(table: &toml::Table) -> Result<ManifoldSpec> {
    let family = table
        .get("family")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Config("manifold.family is required".into()))?;
    let base = match family {
        "spiral_2d" => ManifoldSpec::spiral_2d(),
        "two_circles" => ManifoldSpec::two_circles(),
        "spiral_3d" => ManifoldSpec::spiral_3d(),
        "torus" => ManifoldSpec::torus(),
        other => return Err(Error::Config(format!("unknown manifold family `{other}`"))),
    };
    let mut value = serde_json::to_value(&base)?;
    let obj = value.as_object_mut().expect("tagged enum serializes to an object");
    for (k, v) in table {
        obj.insert(k.clone(), serde_json::to_value(v)?);
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("manifold: {e}")))
}
