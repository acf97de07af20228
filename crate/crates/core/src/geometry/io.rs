//! Dataset CSV files with a JSON metadata sidecar.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, ManifoldSpec, NoiseSpec};
use crate::error::{Error, Result};
use crate::points::Points;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub manifold: ManifoldSpec,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub n: usize,
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    pub columns: Vec<String>,
}

/// Sidecar path for a dataset CSV: same stem, `.json` extension.
pub fn metadata_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_dataset(ds: &Dataset, csv_path: &Path) -> Result<()> {
    let dim = ds.dim();
    let mut columns: Vec<String> = (1..=dim).map(|j| format!("x{j}")).collect();
    if ds.latent.is_some() {
        columns.extend(Dataset::latent_columns(&ds.spec, ds.noise.model));
    }
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(csv_path)?));
    w.write_record(&columns).map_err(csv_err)?;
    let mut record: Vec<String> = Vec::with_capacity(columns.len());
    for i in 0..ds.len() {
        record.clear();
        record.extend(ds.points.row(i).iter().map(|v| v.to_string()));
        if let Some(lat) = &ds.latent {
            record.extend(lat.row(i).iter().map(|v| v.to_string()));
        }
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush()?;

    let meta = DatasetMetadata {
        manifold: ds.spec.clone(),
        noise: ds.noise,
        seed: ds.seed,
        n: ds.len(),
        ambient_dim: dim,
        intrinsic_dim: ds.spec.intrinsic_dim(),
        columns,
    };
    let f = BufWriter::new(File::create(metadata_path(csv_path))?);
    serde_json::to_writer_pretty(f, &meta)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`]; the sidecar must exist.
pub fn read_dataset(csv_path: &Path) -> Result<Dataset> {
    let meta: DatasetMetadata = serde_json::from_reader(File::open(metadata_path(csv_path))?)?;
    let mut r = csv::Reader::from_path(csv_path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != meta.columns {
        return Err(Error::Format(format!("CSV header {header:?} does not match metadata {:?}", meta.columns)));
    }
    let dim = meta.ambient_dim;
    let nlat = header.len() - dim;
    let mut points = Points::new(dim);
    let mut latent = Points::new(nlat);
    let mut row = Vec::with_capacity(header.len());
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        row.clear();
        for field in rec.iter() {
            row.push(field.trim().parse::<f64>().map_err(|e| Error::Format(format!("{field:?}: {e}")))?);
        }
        if row.len() != header.len() {
            return Err(Error::Format(format!("row has {} fields, expected {}", row.len(), header.len())));
        }
        points.push(&row[..dim])?;
        if nlat > 0 {
            latent.push(&row[dim..])?;
        }
    }
    if points.len() != meta.n {
        return Err(Error::Format(format!("expected {} rows, found {}", meta.n, points.len())));
    }
    Ok(Dataset {
        points,
        latent: (nlat > 0).then_some(latent),
        spec: meta.manifold,
        noise: meta.noise,
        seed: meta.seed,
    })
}

/// Reads a plain point CSV (header `x1..xD`, extra columns ignored).
pub fn read_points(csv_path: &Path) -> Result<Points> {
    let mut r = csv::Reader::from_path(csv_path).map_err(csv_err)?;
    let dim = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .take_while(|h| h.starts_with('x'))
        .count();
    if dim == 0 {
        return Err(Error::Format("no x1.. columns".into()));
    }
    let mut points = Points::new(dim);
    let mut row = vec![0.0; dim];
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        for (j, slot) in row.iter_mut().enumerate() {
            let field = rec.get(j).ok_or_else(|| Error::Format("short row".into()))?;
            *slot = field.trim().parse().map_err(|e| Error::Format(format!("{field:?}: {e}")))?;
        }
        points.push(&row)?;
    }
    Ok(points)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
