use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Component, DensitySnapshot, MixtureState, ScaleMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub size: usize,
    pub mu: Vec<f64>,
    /// Row-major orientation matrix.
    #[serde(rename = "O")]
    pub o: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
}

/// One kept iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    #[serde(rename = "N")]
    pub n_clusters: usize,
    pub loglik: f64,
    pub lambda: Vec<f64>,
    pub b: Vec<f64>,
    pub clusters: Vec<ClusterRecord>,
    #[serde(skip)]
    pub alloc: Option<Vec<usize>>,
}

impl TraceRecord {
    pub(crate) fn from_state(iter: usize, state: &MixtureState, loglik: f64, mode: ScaleMode, keep_alloc: bool) -> Self {
        let sizes = state.sizes();
        TraceRecord {
            iter,
            n_clusters: state.n_clusters(),
            loglik,
            lambda: state.lambda.as_slice().to_vec(),
            b: state.b.as_slice().to_vec(),
            clusters: state
                .clusters
                .iter()
                .zip(sizes)
                .map(|(c, size)| ClusterRecord {
                    size,
                    mu: c.mu.as_slice().to_vec(),
                    o: c.o.transpose().as_slice().to_vec(),
                    lambda: match mode {
                        ScaleMode::Partial => None,
                        ScaleMode::Hybrid => c.lambda.as_ref().map(|l| l.as_slice().to_vec()),
                    },
                })
                .collect(),
            alloc: keep_alloc.then(|| state.alloc.clone()),
        }
    }

    pub fn n_points(&self) -> usize {
        self.clusters.iter().map(|c| c.size).sum()
    }

    /// Mixture with weights `n_c / n`.
    pub fn snapshot(&self) -> DensitySnapshot {
        let n = self.n_points() as f64;
        let components = self.clusters.iter().map(|c| self.component(c, c.size as f64 / n)).collect();
        DensitySnapshot { components }
    }

    pub(crate) fn component(&self, c: &ClusterRecord, weight: f64) -> Component {
        let d = c.mu.len();
        Component {
            weight,
            mu: DVector::from_column_slice(&c.mu),
            o: DMatrix::from_row_slice(d, d, &c.o),
            lambda: DVector::from_column_slice(c.lambda.as_deref().unwrap_or(&self.lambda)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub sweeps: u64,
    pub new_clusters: u64,
    pub removed_clusters: u64,
    pub mh_proposed: u64,
    pub mh_accepted: u64,
}

/// Wall-clock seconds spent in each update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub allocations: f64,
    pub locations: f64,
    pub orientations: f64,
    pub scales: f64,
    pub hyper_b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub records: Vec<TraceRecord>,
    /// Number of data points the chain was run on.
    pub n: usize,
    pub counters: Counters,
    pub timings: Timings,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn snapshots(&self) -> Vec<DensitySnapshot> {
        self.records.iter().map(TraceRecord::snapshot).collect()
    }
}

/// Newline-delimited JSON, one record per line.
pub fn write_trace(trace: &ChainTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in &trace.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Allocation sidecar with rows `iter,i,c_i` (records kept with allocations only).
pub fn write_allocations(trace: &ChainTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iter,i,c_i")?;
    for r in &trace.records {
        if let Some(alloc) = &r.alloc {
            for (i, c) in alloc.iter().enumerate() {
                writeln!(w, "{},{},{}", r.iter, i, c)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<ChainTrace> {
    let mut records = Vec::new();
    for (k, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TraceRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("trace line {}: {e}", k + 1)))?;
        records.push(r);
    }
    let n = records.first().map_or(0, TraceRecord::n_points);
    Ok(ChainTrace {
        records,
        n,
        counters: Counters::default(),
        timings: Timings::default(),
    })
}
