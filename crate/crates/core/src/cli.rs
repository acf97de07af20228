//! Command-line driver: each subcommand is a pure function of the config,
//! its input files and the seed.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{ApproxTargetKind, Backend, ExperimentConfig};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, posterior_predictive_sample, predictive_snapshot, rate_study, sample_component, write_points_csv,
    write_rate_csv, AveragedDensity, RateBackend, RateStudyConfig,
};
use crate::geometry::{generate_dataset, read_dataset, write_dataset, Dataset};
use crate::gibbs::{read_trace, run_chain_with, write_allocations, write_trace, Counters};
use crate::kernel_approx::{approximation_error_scan, write_scan_csv, ScanTarget};
use crate::map::{fit_map, write_objective_trace};
use crate::model::DensitySnapshot;
use crate::rng::RngStream;
use crate::target::GeneratorTarget;
use crate::Points;

/// Stream ids derived from the one experiment seed.
mod streams {
    pub const GENERATE: u64 = 0;
    pub const SPLIT: u64 = 1;
    pub const FIT: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const FRESH: u64 = 4;
    pub const PREDICTIVE: u64 = 5;
    pub const APPROX: u64 = 6;
}

#[derive(Debug, Parser)]
#[command(name = "manifold-mix", version, about = "Mixture density estimation near manifolds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `data.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `inference.backend`.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<Backend>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset.
    Generate,
    /// Fit the model to a dataset (default: `<out>/data.csv`).
    Fit {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a fit against the generating density.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Approximation error of the kernel operator over a grid of scales.
    ApproxScan,
    /// Hellinger decay over a grid of sample sizes.
    RateStudy,
}

/// Process exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric { .. } | Error::NonFinite { .. } => 3,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.data.seed = seed;
    }
    if let Some(b) = cli.backend {
        cfg.inference.backend = b;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `output`".into()))?;
    cfg.output = Some(out.clone());
    std::fs::create_dir_all(&out)?;
    write_json(&out.join("config.json"), &cfg)?;
    match cli.command {
        Command::Generate => cmd_generate(&cfg, &out),
        Command::Fit { data } => cmd_fit(&cfg, &out, &data.unwrap_or_else(|| out.join("data.csv"))),
        Command::Eval { data } => cmd_eval(&cfg, &out, &data.unwrap_or_else(|| out.join("data.csv"))),
        Command::ApproxScan => cmd_approx_scan(&cfg, &out),
        Command::RateStudy => cmd_rate_study(&cfg, &out),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut rng = RngStream::new(cfg.data.seed, streams::GENERATE);
    let ds = generate_dataset(&cfg.manifold, &cfg.noise.spec(), cfg.data.n, &mut rng)?;
    write_dataset(&ds, &out.join("data.csv"))?;
    eprintln!("wrote {} points to {}", ds.len(), out.join("data.csv").display());
    Ok(())
}

fn load_split(cfg: &ExperimentConfig, data: &Path) -> Result<(Dataset, Dataset)> {
    if !data.exists() {
        return Err(Error::Precondition(format!("{} not found; run `generate` first", data.display())));
    }
    let ds = read_dataset(data)?;
    if ds.dim() != cfg.dim() {
        return Err(Error::Config(format!("dataset has dimension {}, config expects {}", ds.dim(), cfg.dim())));
    }
    ds.split(cfg.data.heldout_fraction, &mut RngStream::new(cfg.data.seed, streams::SPLIT))
}

#[derive(Serialize)]
struct GibbsSummary {
    backend: Backend,
    n_train: usize,
    records: usize,
    mean_clusters: f64,
    counters: Counters,
}

#[derive(Serialize)]
struct MapSummary {
    backend: Backend,
    n_train: usize,
    k: usize,
    objective: f64,
}

pub fn cmd_fit(cfg: &ExperimentConfig, out: &Path, data: &Path) -> Result<()> {
    let (train, _) = load_split(cfg, data)?;
    match cfg.inference.backend {
        Backend::Gibbs => {
            let mut g = cfg.gibbs_config(cfg.data.seed)?;
            g.stream = streams::FIT;
            let total = g.iterations;
            let trace = run_chain_with(&train.points, &g, |iter, k| {
                eprintln!("iteration {iter}/{total}: {k} clusters");
            })?;
            write_trace(&trace, &out.join("trace.ndjson"))?;
            if g.record_allocations {
                write_allocations(&trace, &out.join("allocations.csv"))?;
            }
            let t = &trace.timings;
            eprintln!(
                "seconds: allocations {:.2}, locations {:.2}, orientations {:.2}, scales {:.2}, b {:.2}",
                t.allocations, t.locations, t.orientations, t.scales, t.hyper_b
            );
            let mean_clusters = if trace.is_empty() {
                0.0
            } else {
                trace.records.iter().map(|r| r.n_clusters as f64).sum::<f64>() / trace.len() as f64
            };
            write_json(
                &out.join("fit_summary.json"),
                &GibbsSummary {
                    backend: Backend::Gibbs,
                    n_train: train.len(),
                    records: trace.len(),
                    mean_clusters,
                    counters: trace.counters,
                },
            )
        }
        Backend::Map => {
            let prior = cfg.prior_config()?;
            let settings = cfg.inference.map.settings();
            let fit = fit_map(&train.points, &prior, &settings, &mut RngStream::new(cfg.data.seed, streams::FIT))?;
            std::fs::write(out.join("snapshot.json"), fit.snapshot.to_json()?)?;
            write_objective_trace(&fit.trace, &out.join("objective.csv"))?;
            eprintln!("MAP objective {:.6} with {} components", fit.objective, fit.k);
            write_json(
                &out.join("fit_summary.json"),
                &MapSummary {
                    backend: Backend::Map,
                    n_train: train.len(),
                    k: fit.k,
                    objective: fit.objective,
                },
            )
        }
    }
}

pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path, data: &Path) -> Result<()> {
    let (train, held) = load_split(cfg, data)?;
    let prior = cfg.prior_config()?;
    let n_samples = cfg.eval.predictive_samples.unwrap_or(train.len());
    let mut pred_rng = RngStream::new(cfg.data.seed, streams::PREDICTIVE);
    let (fitted, predictive) = match cfg.inference.backend {
        Backend::Gibbs => {
            let path = out.join("trace.ndjson");
            if !path.exists() {
                return Err(Error::Precondition(format!("{} not found; run `fit` first", path.display())));
            }
            let trace = read_trace(&path)?;
            let mut fresh = RngStream::new(cfg.data.seed, streams::FRESH);
            let snaps = trace
                .records
                .iter()
                .map(|r| predictive_snapshot(r, &prior, cfg.eval.fresh_draws, &mut fresh))
                .collect::<Result<Vec<_>>>()?;
            let (pts, _) = posterior_predictive_sample(&trace, n_samples, &prior, &mut pred_rng)?;
            (AveragedDensity::new(snaps)?, pts)
        }
        Backend::Map => {
            let path = out.join("snapshot.json");
            let s = std::fs::read_to_string(&path)
                .map_err(|_| Error::Precondition(format!("{} not found; run `fit` first", path.display())))?;
            let snap = DensitySnapshot::from_json(&s)?;
            let pts = sample_snapshot(&snap, n_samples, &mut pred_rng)?;
            (AveragedDensity::new(vec![snap])?, pts)
        }
    };
    let truth = GeneratorTarget::new(train.spec.clone(), train.noise)?;
    let heldout = (cfg.eval.heldout && !held.is_empty()).then_some(&held.points);
    let mut report = evaluate(
        &truth,
        &fitted,
        &train.points,
        heldout,
        cfg.eval.n_mc,
        &mut RngStream::new(cfg.data.seed, streams::EVAL),
    )?;
    for m in std::iter::once(&mut report.model).chain(report.baselines.values_mut()) {
        if !cfg.eval.hellinger {
            m.hellinger_sq = None;
        }
        if !cfg.eval.l1 {
            m.l1 = None;
        }
    }
    write_json(&out.join("metrics.json"), &report)?;
    write_points_csv(&predictive, &out.join("predictive.csv"))?;
    if let Some(h) = report.model.hellinger_sq {
        eprintln!("hellinger^2 = {:.5} +- {:.5}", h.value, h.se);
    }
    Ok(())
}

fn sample_snapshot(s: &DensitySnapshot, n: usize, rng: &mut RngStream) -> Result<Points> {
    use rand::Rng;
    let mut out = Points::new(s.dim());
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = s.components.len() - 1;
        for (k, c) in s.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = k;
                break;
            }
        }
        out.push(sample_component(&s.components[pick], rng).as_slice())?;
    }
    Ok(out)
}

#[derive(Serialize)]
struct ScanSummary<'a> {
    slope: f64,
    rows: &'a [crate::kernel_approx::ScanRow],
}

pub fn cmd_approx_scan(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let a = &cfg.approx;
    let target = match a.target {
        ApproxTargetKind::Manifold => ScanTarget::Manifold {
            spec: cfg.manifold.clone(),
            noise: cfg.noise.spec(),
        },
        ApproxTargetKind::FlatGaussian => ScanTarget::FlatGaussian {
            sd: a.sd,
            delta: cfg.noise.delta,
            beta0: cfg.noise.beta0,
            beta_perp: cfg.noise.beta_perp,
        },
    };
    let table = approximation_error_scan(
        &target,
        &a.sigmas,
        a.grid,
        a.n_mc,
        &mut RngStream::new(cfg.data.seed, streams::APPROX),
    )?;
    write_scan_csv(&table, &out.join("approx_scan.csv"))?;
    write_json(
        &out.join("approx_scan.json"),
        &ScanSummary {
            slope: table.slope,
            rows: &table.rows,
        },
    )?;
    let flagged = table.rows.iter().filter(|r| !r.valid).count();
    eprintln!("slope {:.4}; {flagged} row(s) outside the valid scale range", table.slope);
    Ok(())
}

pub fn cmd_rate_study(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let prior = cfg.prior_config()?;
    let backend = match cfg.inference.backend {
        Backend::Gibbs => {
            let g = cfg.gibbs_config(cfg.data.seed)?;
            RateBackend::Gibbs {
                prior,
                iterations: g.iterations,
                burn_in: g.burn_in,
                thin: g.thin,
            }
        }
        Backend::Map => RateBackend::Map {
            prior,
            settings: cfg.inference.map.settings(),
        },
    };
    let r = &cfg.rate;
    let study = rate_study(&RateStudyConfig {
        spec: cfg.manifold.clone(),
        noise: cfg.noise.spec(),
        n_grid: r.n_grid.clone(),
        seeds: r.seeds.clone(),
        backend,
        n_mc: r.n_mc,
        heldout_n: r.heldout_n,
        threads: r.threads,
    })?;
    write_rate_csv(&study, &out.join("rate_study.csv"))?;
    write_json(&out.join("rate_study.json"), &study)?;
    for (n, h) in &study.medians {
        eprintln!("n = {n}: median hellinger {h:.5}");
    }
    eprintln!("log-log slope {:.4}", study.slope);
    Ok(())
}
