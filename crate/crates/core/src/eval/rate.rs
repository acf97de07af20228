//! Empirical Hellinger decay over a grid of sample sizes.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::*;

#[derive(Debug, Clone, PartialEq)]
pub enum RateBackend {
    Gibbs { prior: PriorConfig, iterations: usize, burn_in: usize, thin: usize },
    Map { prior: PriorConfig, settings: MapSettings },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateStudyConfig {
    pub spec: ManifoldSpec,
    pub noise: NoiseSpec,
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub backend: RateBackend,
    pub n_mc: usize,
    pub heldout_n: usize,
    /// Worker threads; 0 means one per available core.
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub seed: u64,
    pub hellinger_sq: f64,
    pub hellinger_se: f64,
    pub heldout: f64,
    pub epsilon_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub rows: Vec<RateRow>,
    /// `(n, median Hellinger)` with Hellinger the square root of `hellinger_sq`.
    pub medians: Vec<(usize, f64)>,
    /// Least-squares slope of log median Hellinger against log n.
    pub slope: f64,
}

fn run_cell(cfg: &RateStudyConfig, smooth: &SmoothnessSpec, n: usize, seed: u64) -> Result<RateRow> {
    let train = generate_dataset(&cfg.spec, &cfg.noise, n, &mut RngStream::new(seed, 0))?;
    let held = generate_dataset(&cfg.spec, &cfg.noise, cfg.heldout_n.max(1), &mut RngStream::new(seed, 1))?;
    let snapshots = match &cfg.backend {
        RateBackend::Gibbs {
            prior,
            iterations,
            burn_in,
            thin,
        } => {
            let mut g = GibbsConfig::new(prior.clone(), *iterations, seed);
            g.burn_in = *burn_in;
            g.thin = *thin;
            g.stream = 2;
            run_chain(&train.points, &g)?.snapshots()
        }
        RateBackend::Map { prior, settings } => {
            vec![fit_map(&train.points, prior, settings, &mut RngStream::new(seed, 2))?.snapshot]
        }
    };
    let fitted = AveragedDensity::new(snapshots)?;
    let truth = GeneratorTarget::new(cfg.spec.clone(), cfg.noise)?;
    let h = hellinger_sq_estimate(&truth, &|x| fitted.density(x.as_slice()), cfg.n_mc, &mut RngStream::new(seed, 3))?;
    let heldout = heldout_log_predictive(&fitted.snapshots, &held.points)?;
    Ok(RateRow {
        n,
        seed,
        hellinger_sq: h.value,
        hellinger_se: h.se,
        heldout: heldout.mean,
        epsilon_n: contraction_rate(smooth, n, cfg.noise.delta)?.epsilon,
    })
}

/// Fits every `(n, seed)` cell, in parallel, and summarizes the decay.
pub fn rate_study(cfg: &RateStudyConfig) -> Result<RateStudy> {
    if cfg.n_grid.is_empty() || cfg.n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("n grid must be non-empty and increasing".into()));
    }
    if cfg.seeds.len() < 3 {
        return Err(Error::Precondition("a rate study needs at least 3 seeds per n".into()));
    }
    let smooth = SmoothnessSpec::for_manifold(&cfg.spec, &cfg.noise)?;
    let cells: Vec<(usize, u64)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let threads = if cfg.threads == 0 {
        std::thread::available_parallelism().map_or(1, |p| p.get())
    } else {
        cfg.threads
    }
    .min(cells.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RateRow>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let (n, seed) = cells[i];
                let r = run_cell(cfg, &smooth, n, seed);
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    let rows = results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<Vec<_>>>()?;
    let medians: Vec<(usize, f64)> = cfg
        .n_grid
        .iter()
        .map(|&n| {
            let h: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.hellinger_sq.max(0.0).sqrt()).collect();
            (n, median(&h))
        })
        .collect();
    let slope = if medians.len() >= 2 && medians.iter().all(|m| m.1 > 0.0) {
        let x: Vec<f64> = medians.iter().map(|m| (m.0 as f64).ln()).collect();
        let y: Vec<f64> = medians.iter().map(|m| m.1.ln()).collect();
        linear_fit(&x, &y).0
    } else {
        f64::NAN
    };
    Ok(RateStudy { rows, medians, slope })
}

pub fn write_rate_csv(study: &RateStudy, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "n,seed,hellinger_sq,heldout,epsilon_n")?;
    for r in &study.rows {
        writeln!(w, "{},{},{},{},{}", r.n, r.seed, r.hellinger_sq, r.heldout, r.epsilon_n)?;
    }
    w.flush()?;
    Ok(())
}
