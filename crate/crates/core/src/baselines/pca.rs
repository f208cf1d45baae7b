//! Principal components of a target matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: DVector<f64>,
    /// `q x d_y`, orthonormal rows.
    pub components: DMatrix<f64>,
    pub explained_ratio: Vec<f64>,
}

impl PcaBasis {
    pub fn q(&self) -> usize {
        self.components.nrows()
    }

    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.mean.len() {
            return Err(Error::Shape(format!("{} values for a {}-dim basis", y.len(), self.mean.len())));
        }
        let c = DVector::from_column_slice(y) - &self.mean;
        Ok((&self.components * c).iter().copied().collect())
    }

    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.q() {
            return Err(Error::Shape(format!("{} scores for {} components", z.len(), self.q())));
        }
        let y = self.components.tr_mul(&DVector::from_column_slice(z)) + &self.mean;
        Ok(y.iter().copied().collect())
    }

    /// Row-wise projection of `y` (`n x d_y`) to `n x q`.
    pub fn project_matrix(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = y.clone();
        for mut row in c.row_iter_mut() {
            row -= self.mean.transpose();
        }
        c * self.components.transpose()
    }
}

pub fn fit_pca(y: &DMatrix<f64>, variance_threshold: f64) -> Result<PcaBasis> {
    let n = y.nrows();
    if n < 2 {
        return Err(Error::Shape(format!("pca needs n >= 2 rows, got {n}")));
    }
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(Error::Config(format!("variance threshold {variance_threshold} outside (0, 1]")));
    }
    let mean = DVector::from_iterator(y.ncols(), y.column_iter().map(|c| c.mean()));
    let mut yc = y.clone();
    for mut row in yc.row_iter_mut() {
        row -= mean.transpose();
    }
    let svd = yc.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Numeric("svd produced no right vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    let tol = smax * n.max(y.ncols()) as f64 * f64::EPSILON;
    let rank = s.iter().filter(|&&v| v > tol).count();
    let total: f64 = s[..rank].iter().map(|v| v * v).sum();
    let mut q = 0;
    let mut acc = 0.0;
    while q < rank && acc < variance_threshold * total * (1.0 - 1e-12) {
        acc += s[q] * s[q];
        q += 1;
    }
    let q = q.min(n - 1);
    let mut components = DMatrix::zeros(q, y.ncols());
    for (r, &k) in order.iter().take(q).enumerate() {
        let mut row = vt.row(k).into_owned();
        // Sign convention: largest-magnitude entry positive.
        let imax = row.transpose().iamax();
        if row[imax] < 0.0 {
            row.neg_mut();
        }
        components.set_row(r, &row);
    }
    let explained_ratio = s[..q].iter().map(|v| if total > 0.0 { v * v / total } else { 0.0 }).collect();
    Ok(PcaBasis {
        mean,
        components,
        explained_ratio,
    })
}
