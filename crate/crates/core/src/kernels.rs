//! Kernel functions and dense Gram matrices.
//!
//! Rows of the data matrices are points; a subspace model with `k` variables
//! sees `n×k` matrices.

use nalgebra::{DMatrix, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Linear,
    Polynomial,
    Rbf,
}

/// Kernel family plus its parameters.
///
/// * linear: `⟨u, v⟩`
/// * polynomial: `(gamma·⟨u, v⟩ + offset)^degree`
/// * rbf: `exp(-‖u − v‖² / (2·bandwidth²))`
///
/// Parameters that a family does not use are carried but ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub gamma: f64,
    pub offset: f64,
    pub degree: u32,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec {
            family: KernelFamily::Linear,
            gamma: 1.0,
            offset: 0.0,
            degree: 1,
            bandwidth: 1.0,
        }
    }

    pub fn polynomial(gamma: f64, offset: f64, degree: u32) -> Self {
        KernelSpec {
            family: KernelFamily::Polynomial,
            gamma,
            offset,
            degree,
            bandwidth: 1.0,
        }
    }

    pub fn rbf(bandwidth: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Rbf,
            gamma: 1.0,
            offset: 0.0,
            degree: 1,
            bandwidth,
        }
    }

    /// First-degree polynomial kernel with `gamma = 1/k`, `offset = 0`.
    pub fn default_for_dim(k: usize) -> Self {
        Self::polynomial(1.0 / k.max(1) as f64, 0.0, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::input(format!("kernel gamma must be > 0, got {}", self.gamma)));
        }
        if !self.offset.is_finite() {
            return Err(Error::input("kernel offset must be finite"));
        }
        match self.family {
            KernelFamily::Polynomial if self.degree < 1 => {
                Err(Error::input("polynomial kernel degree must be >= 1"))
            }
            KernelFamily::Rbf if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) => Err(
                Error::input(format!("rbf bandwidth must be > 0, got {}", self.bandwidth)),
            ),
            _ => Ok(()),
        }
    }

    #[inline]
    fn eval_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Linear => dot(u, v),
            KernelFamily::Polynomial => {
                let base = self.gamma * dot(u, v) + self.offset;
                if self.degree == 1 {
                    base
                } else {
                    base.powi(self.degree as i32)
                }
            }
            KernelFamily::Rbf => {
                let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
            }
        }
    }
}

#[inline]
fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `K(u, v)` for two points of equal length.
pub fn kernel_eval(spec: &KernelSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::input(format!(
            "kernel arguments differ in length ({} vs {})",
            u.len(),
            v.len()
        )));
    }
    Ok(spec.eval_unchecked(u, v))
}

/// Row-major copy of a matrix, one `Vec` per row.
pub(crate) fn rows_of(z: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..z.nrows())
        .map(|i| z.row(i).iter().copied().collect())
        .collect()
}

/// Symmetric `n×n` Gram matrix of the rows of `z`.
pub fn kernel_matrix(spec: &KernelSpec, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = z.nrows();
    if n == 0 {
        return Err(Error::input("kernel matrix needs at least one row"));
    }
    let rows = rows_of(z);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = spec.eval_unchecked(&rows[i], &rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// `m×n` cross-kernel between the rows of `a` (m points) and `b` (n points).
pub fn cross_kernel(spec: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::input(format!(
            "cross kernel dimension mismatch ({} vs {} columns)",
            a.ncols(),
            b.ncols()
        )));
    }
    let ra = rows_of(a);
    let rb = rows_of(b);
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        spec.eval_unchecked(&ra[i], &rb[j])
    }))
}

/// Kernel between one point and a row-major point list.
pub(crate) fn kernel_row(spec: &KernelSpec, x: DVectorView<'_, f64>, points: &[Vec<f64>]) -> Vec<f64> {
    let x: Vec<f64> = x.iter().copied().collect();
    points.iter().map(|p| spec.eval_unchecked(&x, p)).collect()
}
