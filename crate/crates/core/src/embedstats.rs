//! Streaming Gaussian moments of embedding sets and the Fréchet distance
//! between two fitted Gaussians.
//!
//! A [`GaussianSummary`] holds `(n, mean, M2)` where `M2` is the sum of
//! centered outer products. Summaries are built with a Welford update or
//! from a batch, and combined with the pairwise (Chan) merge, so any
//! partition of a data set produces the same summary up to rounding.
//!
//! The distance is
//!
//! ```text
//! ‖μa − μb‖² + Tr(Σa + Σb − 2·(Σa^½ Σb Σa^½)^½)
//! ```
//!
//! The symmetrized product keeps the inner square root's argument symmetric
//! PSD, so both roots go through a symmetric eigendecomposition.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default covariance regularization, relative to the mean diagonal.
pub const DEFAULT_EPS: f64 = 1e-6;

const SYMMETRY_TOL: f64 = 1e-8;
const NEGATIVE_NOISE: f64 = -1e-6;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = d;
        }
        m
    }

    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("matrix has non-finite entries".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn matmul(&self, other: &SquareMatrix) -> Result<SquareMatrix> {
        if self.dim != other.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        Ok(Self::from_nalgebra(&(self.to_nalgebra() * other.to_nalgebra())))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        worst
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(m[(i, j)]);
            }
        }
        Self { dim, data }
    }

    fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += v;
        }
    }
}

/// Streaming first and second moments of a vector set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    dim: usize,
    n: u64,
    mean: Vec<f64>,
    /// Row-major `dim × dim` sum of centered outer products.
    comoment: Vec<f64>,
}

impl GaussianSummary {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            n: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn comoment(&self) -> &[f64] {
        &self.comoment
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    /// Welford update with one observation.
    pub fn update<T: Copy + Into<f64>>(&mut self, x: &[T]) -> Result<()> {
        self.check_dim(x.len())?;
        self.n += 1;
        let n = self.n as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(&v, m)| v.into() - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / n;
        }
        // delta ⊗ (x − new mean) = delta ⊗ delta · (n−1)/n; computed from
        // one triangle so the matrix stays exactly symmetric.
        let scale = (n - 1.0) / n;
        let d = self.dim;
        for i in 0..d {
            let di = delta[i] * scale;
            for (j, &dj) in delta.iter().enumerate().skip(i) {
                let v = di * dj;
                self.comoment[i * d + j] += v;
                if i != j {
                    self.comoment[j * d + i] += v;
                }
            }
        }
        Ok(())
    }

    /// Two-pass summary of a batch; cheaper than repeated updates for large
    /// dimensions.
    pub fn from_batch<T: Copy + Into<f64>>(dim: usize, rows: &[Vec<T>]) -> Result<Self> {
        let mut s = Self::new(dim);
        if rows.is_empty() {
            return Ok(s);
        }
        for r in rows {
            s.check_dim(r.len())?;
            for (m, &v) in s.mean.iter_mut().zip(r) {
                *m += v.into();
            }
        }
        let n = rows.len() as f64;
        for m in &mut s.mean {
            *m /= n;
        }
        let mut centered = vec![0.0; dim];
        for r in rows {
            for ((c, &v), m) in centered.iter_mut().zip(r).zip(&s.mean) {
                *c = v.into() - m;
            }
            for i in 0..dim {
                let ci = centered[i];
                let row = &mut s.comoment[i * dim..(i + 1) * dim];
                for j in i..dim {
                    row[j] += ci * centered[j];
                }
            }
        }
        s.mirror_upper();
        s.n = rows.len() as u64;
        Ok(s)
    }

    fn mirror_upper(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..i {
                self.comoment[i * d + j] = self.comoment[j * d + i];
            }
        }
    }

    /// Pairwise merge of two summaries over disjoint data.
    pub fn merge(&self, other: &GaussianSummary) -> Result<GaussianSummary> {
        self.check_dim(other.dim)?;
        if other.n == 0 {
            return Ok(self.clone());
        }
        if self.n == 0 {
            return Ok(other.clone());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let d = self.dim;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let mean = self
            .mean
            .iter()
            .zip(&delta)
            .map(|(a, dl)| a + dl * nb / n)
            .collect();
        let w = na * nb / n;
        let mut comoment = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let v = self.comoment[i * d + j] + other.comoment[i * d + j] + delta[i] * delta[j] * w;
                comoment[i * d + j] = v;
                comoment[j * d + i] = v;
            }
        }
        Ok(GaussianSummary {
            dim: d,
            n: self.n + other.n,
            mean,
            comoment,
        })
    }

    /// Sample covariance with an `n − 1` denominator.
    pub fn covariance(&self) -> Result<SquareMatrix> {
        if self.n < 2 {
            return Err(Error::invalid(format!(
                "covariance needs at least 2 samples, summary has {}",
                self.n
            )));
        }
        let denom = (self.n - 1) as f64;
        SquareMatrix::from_row_major(self.dim, self.comoment.iter().map(|v| v / denom).collect())
    }
}

fn symmetric_eigen(m: &SquareMatrix) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(m.to_nalgebra())
}

fn check_symmetric(m: &SquareMatrix) -> Result<()> {
    let tol = SYMMETRY_TOL * m.max_abs().max(1.0);
    let asym = m.max_asymmetry();
    if asym > tol {
        return Err(Error::NotPsd(format!("asymmetry {asym:e} exceeds {tol:e}")));
    }
    Ok(())
}

/// Symmetric PSD square root via eigendecomposition.
///
/// Eigenvalues in `[-eps, 0)` are clamped to zero; anything lower is an
/// error. The result is symmetrized before returning.
pub fn matrix_sqrt_psd(m: &SquareMatrix, eps: f64) -> Result<SquareMatrix> {
    check_symmetric(m)?;
    let eig = symmetric_eigen(m);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -eps {
        return Err(Error::NotPsd(format!("eigenvalue {min:e} below -{eps:e}")));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&roots) * v.transpose();
    let s = (&s + s.transpose()) * 0.5;
    Ok(SquareMatrix::from_nalgebra(&s))
}

/// Fréchet distance between the Gaussians fitted to two summaries.
///
/// Both covariances get `+δ·I` with `δ = eps ·` (mean diagonal of the two
/// covariances) before any square root. A result in `(-1e-6, 0)` is
/// rounding noise and returns 0.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary, eps: f64) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimMismatch {
            expected: a.dim,
            got: b.dim,
        });
    }
    if a.n < 2 || b.n < 2 {
        return Err(Error::invalid(format!(
            "Fréchet distance needs at least 2 samples per side, got {} and {}",
            a.n, b.n
        )));
    }
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::invalid(format!("eps must be non-negative, got {eps}")));
    }
    let d = a.dim;
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    if d == 0 {
        return Ok(mean_term);
    }
    let mut sa = a.covariance()?;
    let mut sb = b.covariance()?;
    let scale = (sa.trace() + sb.trace()) / (2.0 * d as f64);
    let delta = if scale > 0.0 { eps * scale } else { eps };
    sa.add_diagonal(delta);
    sb.add_diagonal(delta);

    let psd_tol = delta.max(1e-10 * scale);
    let root_a = matrix_sqrt_psd(&sa, psd_tol)?.to_nalgebra();
    let inner = &root_a * sb.to_nalgebra() * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let tol = psd_tol * (scale + delta);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(Error::NotPsd(format!("product eigenvalue {min:e}")));
    }
    let tr_root: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();

    let fd = mean_term + sa.trace() + sb.trace() - 2.0 * tr_root;
    if !fd.is_finite() {
        return Err(Error::Numerical("Fréchet distance is not finite".into()));
    }
    if fd < 0.0 {
        if fd > NEGATIVE_NOISE {
            return Ok(0.0);
        }
        return Err(Error::Numerical(format!("Fréchet distance {fd:e} is negative")));
    }
    Ok(fd)
}
