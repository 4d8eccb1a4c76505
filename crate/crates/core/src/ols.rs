//! Ordinary least squares on small dense designs, via Householder QR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on the diagonal of R below which a design is
/// declared rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Leverages this close to one make Cook's distance undefined.
pub const LEVERAGE_TOLERANCE: f64 = 1e-10;

/// Row-major design matrix. The trailing `neighborhood_cols` columns hold
/// the neighborhood-system variables, so fits can report δ̂ separately.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    rows: usize,
    cols: usize,
    neighborhood_cols: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_neighborhood_cols(rows, cols, 0, data)
    }

    pub fn with_neighborhood_cols(
        rows: usize,
        cols: usize,
        neighborhood_cols: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "design of {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if cols == 0 || neighborhood_cols > cols {
            return Err(Error::DimensionMismatch(format!(
                "{neighborhood_cols} neighborhood columns in a design with {cols} columns"
            )));
        }
        Ok(Self {
            rows,
            cols,
            neighborhood_cols,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged design rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn neighborhood_cols(&self) -> usize {
        self.neighborhood_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Sub-design made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Design {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Design {
            rows: rows.len(),
            cols: self.cols,
            neighborhood_cols: self.neighborhood_cols,
            data,
        }
    }

    /// `X b` for every row.
    pub fn predict(&self, coefficients: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| dot(self.row(i), coefficients))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Thin QR factorization `X = Q R` of a full-rank design.
///
/// Kept separately from [`ModelFit`] so a fixed design can be refit
/// against many responses (the sieve bootstrap refits each unit m times).
#[derive(Debug, Clone)]
pub struct QrFactor {
    rows: usize,
    cols: usize,
    /// Column-major n×p, orthonormal columns.
    q: Vec<f64>,
    /// Row-major p×p, upper triangular.
    r: Vec<f64>,
}

impl QrFactor {
    pub fn new(design: &Design) -> Result<Self> {
        let (n, p) = (design.rows, design.cols);
        if n <= p {
            return Err(Error::Underdetermined { rows: n, params: p });
        }
        // Column-major working copy; reflectors are stored below the diagonal.
        let mut a = vec![0.0; n * p];
        for i in 0..n {
            for j in 0..p {
                a[j * n + i] = design.get(i, j);
            }
        }
        let mut diag = vec![0.0; p];
        let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(p);
        for k in 0..p {
            let col = &a[k * n + k..(k + 1) * n];
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = if col[0] > 0.0 { -norm } else { norm };
            let mut v = col.to_vec();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            diag[k] = alpha;
            if vnorm2 > 0.0 {
                for j in k..p {
                    let c = &mut a[j * n + k..(j + 1) * n];
                    let s = 2.0 * dot(&v, c) / vnorm2;
                    for (ci, vi) in c.iter_mut().zip(&v) {
                        *ci -= s * vi;
                    }
                }
            }
            reflectors.push(v);
        }
        let scale = diag.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
        if let Some(column) = diag.iter().position(|d| d.abs() <= RANK_TOLERANCE * scale) {
            return Err(Error::RankDeficient { column });
        }
        let mut r = vec![0.0; p * p];
        for i in 0..p {
            for j in i..p {
                r[i * p + j] = a[j * n + i];
            }
        }
        // Thin Q: apply H_0 ... H_{p-1} to the first p unit vectors.
        let mut q = vec![0.0; n * p];
        for j in 0..p {
            q[j * n + j] = 1.0;
        }
        for k in (0..p).rev() {
            let v = &reflectors[k];
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 == 0.0 {
                continue;
            }
            for j in 0..p {
                let c = &mut q[j * n + k..(j + 1) * n];
                let s = 2.0 * dot(v, c) / vnorm2;
                for (ci, vi) in c.iter_mut().zip(v) {
                    *ci -= s * vi;
                }
            }
        }
        Ok(Self { rows: n, cols: p, q, r })
    }

    fn q_col(&self, j: usize) -> &[f64] {
        &self.q[j * self.rows..(j + 1) * self.rows]
    }

    /// Least-squares coefficients for response `y`.
    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        let p = self.cols;
        let qty: Vec<f64> = (0..p).map(|j| dot(self.q_col(j), y)).collect();
        let mut b = vec![0.0; p];
        for i in (0..p).rev() {
            let tail: f64 = (i + 1..p).map(|j| self.r[i * p + j] * b[j]).sum();
            b[i] = (qty[i] - tail) / self.r[i * p + i];
        }
        b
    }

    /// Diagonal of the hat matrix.
    pub fn leverage(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.q[j * self.rows + i].powi(2)).sum())
            .collect()
    }

    /// Residuals `y - X b`, computed as the projection of `y` onto the
    /// orthogonal complement of the column space.
    pub fn residuals(&self, y: &[f64]) -> Vec<f64> {
        let mut e = y.to_vec();
        for j in 0..self.cols {
            let col = self.q_col(j);
            let s = dot(col, y);
            for (ei, qi) in e.iter_mut().zip(col) {
                *ei -= s * qi;
            }
        }
        e
    }

    /// Full fit of `y` against the factored design.
    pub fn fit(&self, design: &Design, y: &[f64]) -> Result<ModelFit> {
        if y.len() != self.rows || design.rows != self.rows || design.cols != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "response of length {} against a {}x{} design",
                y.len(),
                self.rows,
                self.cols
            )));
        }
        let coefficients = self.solve(y);
        let fitted = design.predict(&coefficients);
        let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let sse: f64 = residuals.iter().map(|e| e * e).sum();
        Ok(ModelFit {
            coefficients,
            residuals,
            fitted,
            leverage: self.leverage(),
            sigma2_hat: sse / (self.rows - self.cols) as f64,
            n_obs: self.rows,
            n_params: self.cols,
            neighborhood_cols: design.neighborhood_cols,
        })
    }
}

/// Result of one least-squares regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    /// Intercept, covariate slopes, then neighborhood coefficients.
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub leverage: Vec<f64>,
    /// SSE / (n − k).
    pub sigma2_hat: f64,
    pub n_obs: usize,
    pub n_params: usize,
    pub neighborhood_cols: usize,
}

impl ModelFit {
    /// Intercept followed by covariate slopes.
    pub fn beta_hat(&self) -> &[f64] {
        &self.coefficients[..self.n_params - self.neighborhood_cols]
    }

    /// Neighborhood coefficients δ̂, one per W column.
    pub fn delta_hat(&self) -> &[f64] {
        &self.coefficients[self.n_params - self.neighborhood_cols..]
    }
}

/// Least-squares fit of `targets` on `design`.
pub fn fit_ols(design: &Design, targets: &[f64]) -> Result<ModelFit> {
    if targets.len() != design.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} design rows",
            targets.len(),
            design.rows()
        )));
    }
    QrFactor::new(design)?.fit(design, targets)
}

/// Cook's distance of observation `i`:
/// `D_i = e_i² / (k s²) · h_ii / (1 − h_ii)²`.
pub fn cooks_distance(fit: &ModelFit, i: usize) -> Result<f64> {
    let h = fit.leverage[i];
    if h >= 1.0 - LEVERAGE_TOLERANCE {
        return Err(Error::LeverageOne { index: i, leverage: h });
    }
    let e = fit.residuals[i];
    if e == 0.0 {
        return Ok(0.0);
    }
    let k = fit.n_params as f64;
    Ok(e * e / (k * fit.sigma2_hat) * h / ((1.0 - h) * (1.0 - h)))
}

/// Largest Cook's distance in the fit, with its observation index.
/// The first observation with leverage one aborts the scan.
pub fn max_cooks_distance(fit: &ModelFit) -> Result<(usize, f64)> {
    let mut best = (0, 0.0);
    for i in 0..fit.n_obs {
        let d = cooks_distance(fit, i)?;
        if d > best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}
