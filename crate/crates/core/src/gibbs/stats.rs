use nalgebra::{DMatrix, DVector, DVectorView};

/// Sufficient statistics of one cluster: count, `Σ y` and `Σ y yᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub n: usize,
    pub sum: DVector<f64>,
    pub scatter: DMatrix<f64>,
}

impl ClusterStats {
    pub fn empty(dim: usize) -> Self {
        Self {
            n: 0,
            sum: DVector::zeros(dim),
            scatter: DMatrix::zeros(dim, dim),
        }
    }

    pub fn add(&mut self, y: &[f64]) {
        let v = DVectorView::from_slice(y, y.len());
        self.n += 1;
        self.sum += v;
        self.scatter.ger(1.0, &v, &v, 1.0);
    }

    pub fn remove(&mut self, y: &[f64]) {
        let v = DVectorView::from_slice(y, y.len());
        self.n -= 1;
        if self.n == 0 {
            self.sum.fill(0.0);
            self.scatter.fill(0.0);
        } else {
            self.sum -= v;
            self.scatter.ger(-1.0, &v, &v, 1.0);
        }
    }

    /// `Σ (y − μ)(y − μ)ᵀ` over the members.
    pub fn centered_scatter(&self, mu: &DVector<f64>) -> DMatrix<f64> {
        let mut s = self.scatter.clone();
        s.ger(-1.0, mu, &self.sum, 1.0);
        s.ger(-1.0, &self.sum, mu, 1.0);
        s.ger(self.n as f64, mu, mu, 1.0);
        s
    }
}
