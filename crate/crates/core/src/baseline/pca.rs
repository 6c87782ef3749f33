use log::info;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standardization followed by projection on the leading principal axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjector {
    /// Input columns kept (non-constant on the training data).
    pub kept_columns: Vec<usize>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Row-major `[components, kept_columns.len()]`, orthonormal rows.
    pub axes: Vec<f64>,
    pub components: usize,
    /// Eigenvalues of the standardized covariance, descending, all of them.
    pub eigenvalues: Vec<f64>,
}

/// Fits standardization and PCA on training rows.
pub fn fit_pca(rows: &[Vec<f64>], components: usize) -> Result<PcaProjector> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("PCA needs at least 2 rows, got {n}")));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("feature rows differ in length".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite feature value".into()));
    }
    let mut kept = Vec::new();
    let mut mean = Vec::new();
    let mut scale = Vec::new();
    for j in 0..d {
        let m = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        if sd > 1e-12 * m.abs().max(1.0) {
            kept.push(j);
            mean.push(m);
            scale.push(sd);
        }
    }
    if kept.len() < d {
        info!("PCA: dropped {} zero-variance feature columns", d - kept.len());
    }
    let k = kept.len();
    if components == 0 || components > k {
        return Err(Error::InsufficientData(format!(
            "{components} components requested from {k} non-constant features"
        )));
    }
    let z = DMatrix::from_fn(n, k, |i, j| (rows[i][kept[j]] - mean[j]) / scale[j]);
    let cov = (z.transpose() * &z) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = Vec::with_capacity(components * k);
    for &c in order.iter().take(components) {
        let v = eig.eigenvectors.column(c);
        // Sign convention: largest-magnitude entry positive.
        let pivot = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        let s = if pivot < 0.0 { -1.0 } else { 1.0 };
        axes.extend(v.iter().map(|x| s * x));
    }
    Ok(PcaProjector {
        kept_columns: kept,
        mean,
        scale,
        axes,
        components,
        eigenvalues: order.iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect(),
    })
}

impl PcaProjector {
    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        self.kept_columns
            .iter()
            .enumerate()
            .map(|(j, &c)| (row[c] - self.mean[j]) / self.scale[j])
            .collect()
    }

    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        let z = self.standardize(row);
        let k = z.len();
        (0..self.components)
            .map(|c| self.axes[c * k..(c + 1) * k].iter().zip(&z).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Standardized reconstruction error using only the first `m` axes.
    pub fn reconstruction_error(&self, row: &[f64], m: usize) -> f64 {
        let z = self.standardize(row);
        let k = z.len();
        let mut back = vec![0.0; k];
        for c in 0..m.min(self.components) {
            let axis = &self.axes[c * k..(c + 1) * k];
            let coef: f64 = axis.iter().zip(&z).map(|(a, b)| a * b).sum();
            back.iter_mut().zip(axis).for_each(|(b, a)| *b += coef * a);
        }
        z.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    /// Fraction of standardized variance beyond the first `m` components.
    pub fn residual_variance_fraction(&self, m: usize) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues.iter().skip(m).sum::<f64>() / total
    }
}
