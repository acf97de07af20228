use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A row-major `n × dim` point cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Precondition(format!(
                "{} values cannot be split into rows of {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<I, V>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = V>,
        V: AsRef<[f64]>,
    {
        let mut p = Self::new(dim);
        for r in rows {
            p.push(r.as_ref())?;
        }
        Ok(p)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Precondition(format!(
                "row of length {} pushed into {}-dimensional points",
                row.len(),
                self.dim
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.row(i))
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn select(&self, indices: &[usize]) -> Points {
        let mut out = Points::new(self.dim);
        for &i in indices {
            out.data.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim);
        for r in self.iter() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m / self.len() as f64
    }
}
