//! Ridge regression for the per-stage global linear model.
//!
//! The bias is left unpenalized by centering features and targets first.
//! When there are at least as many samples as features the primal normal
//! equations `(XcᵀXc + λI) W = XcᵀYc` are solved; otherwise the equivalent
//! dual system `(XcXcᵀ + λI) A = Yc`, `W = XcᵀA` is used, which keeps
//! one-hot feature spaces with tens of thousands of columns tractable. Both
//! go through a Cholesky factorization.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (a, v) in m.iter_mut().zip(self.row(i)) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= self.rows as f64);
        m
    }

    fn centered(&self, means: &[f64]) -> Matrix {
        let mut c = self.clone();
        for i in 0..c.rows {
            for (v, m) in c.row_mut(i).iter_mut().zip(means) {
                *v -= m;
            }
        }
        c
    }
}

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(cols: usize) -> Self {
        Self { cols, indptr: vec![0], indices: Vec::new(), values: Vec::new() }
    }

    /// Appends a row given as `(column, value)` entries with distinct columns.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (u32, f64)>) -> Result<()> {
        let start = self.indices.len();
        for (c, v) in entries {
            if c as usize >= self.cols {
                return Err(Error::InvalidArgument(format!("column {c} out of range {}", self.cols)));
            }
            self.indices.push(c);
            self.values.push(v);
        }
        let mut row: Vec<(u32, f64)> =
            self.indices[start..].iter().copied().zip(self.values[start..].iter().copied()).collect();
        row.sort_by_key(|e| e.0);
        if row.windows(2).any(|w| w[0].0 == w[1].0) {
            self.indices.truncate(start);
            self.values.truncate(start);
            return Err(Error::InvalidArgument("duplicate column in sparse row".into()));
        }
        for (k, (c, v)) in row.into_iter().enumerate() {
            self.indices[start + k] = c;
            self.values[start + k] = v;
        }
        self.indptr.push(self.indices.len());
        Ok(())
    }

    pub fn from_dense(m: &Matrix) -> Self {
        let mut s = Self::new(m.cols());
        for i in 0..m.rows() {
            let entries: Vec<(u32, f64)> =
                m.row(i).iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j as u32, *v)).collect();
            s.push_row(entries).expect("columns in range");
        }
        s
    }

    pub fn rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeConfig {
    pub lambda: f64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

/// `y = Wᵀx + b` with `W` stored feature-major (`feature_dim x target_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearModel {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.cols() != bias.len() {
            return Err(Error::InvalidArgument(format!(
                "weights have {} outputs but bias has {}",
                weights.cols(),
                bias.len()
            )));
        }
        if weights.data().iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear model"));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(feature_dim: usize, target_dim: usize) -> Self {
        Self { weights: Matrix::zeros(feature_dim, target_dim), bias: vec![0.0; target_dim] }
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn target_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn parameter_count(&self) -> usize {
        (self.feature_dim() + 1) * self.target_dim()
    }

    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} features, got {}",
                self.feature_dim(),
                features.len()
            )));
        }
        let mut out = self.bias.clone();
        for (j, &x) in features.iter().enumerate() {
            if x != 0.0 {
                axpy(&mut out, x, self.weights.row(j));
            }
        }
        Ok(out)
    }

    /// Prediction for a 0/1 feature vector given by its active columns.
    pub fn predict_active(&self, active: &[u32]) -> Result<Vec<f64>> {
        let mut out = self.bias.clone();
        for &j in active {
            if j as usize >= self.feature_dim() {
                return Err(Error::InvalidArgument(format!("feature {j} out of range")));
            }
            for (o, w) in out.iter_mut().zip(self.weights.row(j as usize)) {
                *o += w;
            }
        }
        Ok(out)
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn check_inputs(n: usize, p: usize, targets: &Matrix, config: &RidgeConfig) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty("no training rows"));
    }
    if p == 0 || targets.cols() == 0 {
        return Err(Error::InvalidArgument("features and targets need at least one column".into()));
    }
    if targets.rows() != n {
        return Err(Error::InvalidArgument(format!("{n} feature rows but {} target rows", targets.rows())));
    }
    if !(config.lambda >= 0.0) || !config.lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", config.lambda)));
    }
    if targets.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ridge targets"));
    }
    Ok(())
}

/// Fits ridge regression on dense features.
pub fn fit_ridge(features: &Matrix, targets: &Matrix, config: &RidgeConfig) -> Result<LinearModel> {
    let (n, p) = (features.rows(), features.cols());
    check_inputs(n, p, targets, config)?;
    if features.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ridge features"));
    }
    let x_mean = features.column_means();
    let y_mean = targets.column_means();
    let xc = features.centered(&x_mean);
    let yc = targets.centered(&y_mean);

    let weights = if p <= n {
        let mut gram = gram_of_columns(&xc);
        add_ridge(&mut gram, config.lambda);
        let rhs = transpose_times(&xc, &yc);
        cholesky_solve(gram, rhs, config.lambda)?
    } else {
        let mut kernel = gram_of_rows(&xc);
        add_ridge(&mut kernel, config.lambda);
        let dual = cholesky_solve(kernel, yc, config.lambda)?;
        transpose_times(&xc, &dual)
    };
    finish(weights, &x_mean, y_mean)
}

/// Fits ridge regression on sparse features. Produces the same model as
/// [`fit_ridge`] on the densified input.
pub fn fit_ridge_sparse(features: &SparseMatrix, targets: &Matrix, config: &RidgeConfig) -> Result<LinearModel> {
    let (n, p) = (features.rows(), features.cols());
    check_inputs(n, p, targets, config)?;
    if features.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ridge features"));
    }
    let nf = n as f64;
    let mut x_mean = vec![0.0; p];
    for (&c, &v) in features.indices.iter().zip(&features.values) {
        x_mean[c as usize] += v;
    }
    x_mean.iter_mut().for_each(|m| *m /= nf);
    let y_mean = targets.column_means();
    let yc = targets.centered(&y_mean);
    let q = targets.cols();

    let weights = if p <= n {
        // XcᵀXc = XᵀX - n μμᵀ, XcᵀYc = XᵀYc
        let mut gram = Matrix::zeros(p, p);
        let mut rhs = Matrix::zeros(p, q);
        for i in 0..n {
            let (idx, val) = features.row(i);
            for (a, (&ca, &va)) in idx.iter().zip(val).enumerate() {
                for (&cb, &vb) in idx[..=a].iter().zip(&val[..=a]) {
                    let g = gram.get(ca as usize, cb as usize);
                    gram.set(ca as usize, cb as usize, g + va * vb);
                }
                axpy(rhs.row_mut(ca as usize), va, yc.row(i));
            }
        }
        // only the lower triangle was accumulated (rows are column-sorted)
        for a in 0..p {
            for b in 0..=a {
                let v = gram.get(a, b) - nf * x_mean[a] * x_mean[b];
                gram.set(a, b, v);
                gram.set(b, a, v);
            }
        }
        add_ridge(&mut gram, config.lambda);
        cholesky_solve(gram, rhs, config.lambda)?
    } else {
        // XcXcᵀ[i][j] = xi·xj - si - sj + μ·μ with si = xi·μ
        let mut columns: Vec<Vec<(u32, f64)>> = vec![Vec::new(); p];
        let mut s = vec![0.0; n];
        for (i, si) in s.iter_mut().enumerate() {
            let (idx, val) = features.row(i);
            for (&c, &v) in idx.iter().zip(val) {
                columns[c as usize].push((i as u32, v));
                *si += v * x_mean[c as usize];
            }
        }
        let mu2: f64 = x_mean.iter().map(|m| m * m).sum();
        let mut kernel = Matrix::zeros(n, n);
        for col in &columns {
            for (a, &(i, vi)) in col.iter().enumerate() {
                for &(j, vj) in &col[..=a] {
                    let (i, j) = (i as usize, j as usize);
                    kernel.set(i, j, kernel.get(i, j) + vi * vj);
                }
            }
        }
        for i in 0..n {
            for j in 0..=i {
                let v = kernel.get(i, j) - s[i] - s[j] + mu2;
                kernel.set(i, j, v);
                kernel.set(j, i, v);
            }
        }
        add_ridge(&mut kernel, config.lambda);
        let dual = cholesky_solve(kernel, yc, config.lambda)?;
        // Wᵀ = (XᵀA - μ 1ᵀA)ᵀ
        let mut w = Matrix::zeros(p, q);
        let mut col_sums = vec![0.0; q];
        for i in 0..n {
            let (idx, val) = features.row(i);
            for (&c, &v) in idx.iter().zip(val) {
                axpy(w.row_mut(c as usize), v, dual.row(i));
            }
            axpy(&mut col_sums, 1.0, dual.row(i));
        }
        for (j, &m) in x_mean.iter().enumerate() {
            if m != 0.0 {
                axpy(w.row_mut(j), -m, &col_sums);
            }
        }
        w
    };
    finish(weights, &x_mean, y_mean)
}

fn finish(weights: Matrix, x_mean: &[f64], y_mean: Vec<f64>) -> Result<LinearModel> {
    let mut bias = y_mean;
    for (j, &m) in x_mean.iter().enumerate() {
        if m != 0.0 {
            axpy(&mut bias, -m, weights.row(j));
        }
    }
    LinearModel::new(weights, bias)
}

fn add_ridge(m: &mut Matrix, lambda: f64) {
    for i in 0..m.rows() {
        let v = m.get(i, i) + lambda;
        m.set(i, i, v);
    }
}

/// `AᵀA` for a dense `A`.
fn gram_of_columns(a: &Matrix) -> Matrix {
    let p = a.cols();
    let rows: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|j| {
            let mut out = vec![0.0; j + 1];
            for i in 0..a.rows() {
                let r = a.row(i);
                let x = r[j];
                if x != 0.0 {
                    axpy(&mut out, x, &r[..=j]);
                }
            }
            out
        })
        .collect();
    let mut g = Matrix::zeros(p, p);
    for (j, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            g.set(j, k, v);
            g.set(k, j, v);
        }
    }
    g
}

/// `AAᵀ` for a dense `A`.
fn gram_of_rows(a: &Matrix) -> Matrix {
    let n = a.rows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| dot(a.row(i), a.row(j))).collect())
        .collect();
    let mut g = Matrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    g
}

/// `AᵀB`.
fn transpose_times(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.cols(), b.cols());
    for i in 0..a.rows() {
        let br = b.row(i);
        for (j, &x) in a.row(i).iter().enumerate() {
            if x != 0.0 {
                axpy(out.row_mut(j), x, br);
            }
        }
    }
    out
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `S X = B` for symmetric positive-definite `S` in place.
fn cholesky_solve(mut s: Matrix, mut b: Matrix, lambda: f64) -> Result<Matrix> {
    let n = s.rows();
    let scale = (0..n).map(|i| s.get(i, i).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = scale * 1e-12;
    for j in 0..n {
        let (head, tail) = s.data.split_at_mut(j * n);
        let row_j = &mut tail[..n];
        for k in 0..j {
            let lk = &head[k * n..k * n + k];
            row_j[k] = (row_j[k] - dot(&row_j[..k], lk)) / head[k * n + k];
        }
        let d = row_j[j] - dot(&row_j[..j], &row_j[..j]);
        if !(d > tol) {
            return Err(Error::Singular(if lambda == 0.0 {
                "normal equations are rank deficient; use a positive ridge lambda".into()
            } else {
                format!("normal equations are not positive definite (pivot {d:e})")
            }));
        }
        row_j[j] = d.sqrt();
    }
    let q = b.cols();
    // L Z = B
    for i in 0..n {
        let (done, rest) = b.data.split_at_mut(i * q);
        let bi = &mut rest[..q];
        for k in 0..i {
            let l = s.get(i, k);
            if l != 0.0 {
                axpy(bi, -l, &done[k * q..(k + 1) * q]);
            }
        }
        let d = s.get(i, i);
        bi.iter_mut().for_each(|v| *v /= d);
    }
    // Lᵀ X = Z
    for i in (0..n).rev() {
        let (head, rest) = b.data.split_at_mut((i + 1) * q);
        let bi = &mut head[i * q..];
        for k in i + 1..n {
            let l = s.get(k, i);
            if l != 0.0 {
                axpy(bi, -l, &rest[(k - i - 1) * q..(k - i) * q]);
            }
        }
        let d = s.get(i, i);
        bi.iter_mut().for_each(|v| *v /= d);
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_collinear_fit() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![2.0], vec![4.0]]).unwrap();
        let m = fit_ridge(&x, &y, &RidgeConfig { lambda: 0.0 }).unwrap();
        assert!((m.weights.get(0, 0) - 2.0).abs() < 1e-12);
        assert!(m.bias[0].abs() < 1e-12);
    }

    #[test]
    fn constant_targets() {
        let x = Matrix::from_rows(&[vec![1.0, 0.5], vec![2.0, -1.0], vec![0.3, 0.7]]).unwrap();
        let y = Matrix::from_rows(&[vec![4.0], vec![4.0], vec![4.0]]).unwrap();
        let m = fit_ridge(&x, &y, &RidgeConfig { lambda: 0.5 }).unwrap();
        assert!(m.weights.data().iter().all(|w| w.abs() < 1e-12));
        assert!((m.bias[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_without_ridge() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let err = fit_ridge(&x, &y, &RidgeConfig { lambda: 0.0 }).unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");
        assert!(fit_ridge(&x, &y, &RidgeConfig { lambda: 0.1 }).is_ok());
    }

    #[test]
    fn bad_inputs() {
        let x = Matrix::from_rows(&[vec![f64::NAN]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(fit_ridge(&x, &y, &RidgeConfig::default()), Err(Error::NonFinite(_))));
        let x = Matrix::zeros(0, 2);
        let y = Matrix::zeros(0, 1);
        assert!(fit_ridge(&x, &y, &RidgeConfig::default()).is_err());
        let x = Matrix::zeros(2, 1);
        assert!(fit_ridge(&x, &Matrix::zeros(2, 1), &RidgeConfig { lambda: -1.0 }).is_err());
    }

    #[test]
    fn predict_cases() {
        let m = LinearModel::new(Matrix::zeros(3, 2), vec![1.0, -2.0]).unwrap();
        assert_eq!(m.predict(&[5.0, 6.0, 7.0]).unwrap(), vec![1.0, -2.0]);
        assert!(m.predict(&[1.0]).is_err());
        let id = LinearModel::new(Matrix::from_rows(&[vec![1.0]]).unwrap(), vec![0.0]).unwrap();
        assert_eq!(id.predict(&[3.25]).unwrap(), vec![3.25]);
    }

    #[test]
    fn active_prediction_matches_dense() {
        let w = Matrix::from_vec(4, 2, (0..8).map(|v| v as f64 * 0.5).collect()).unwrap();
        let m = LinearModel::new(w, vec![0.1, 0.2]).unwrap();
        assert_eq!(m.predict(&[0.0, 1.0, 0.0, 1.0]).unwrap(), m.predict_active(&[1, 3]).unwrap());
        assert!(m.predict_active(&[4]).is_err());
    }

    #[test]
    fn sparse_rows_reject_duplicates() {
        let mut s = SparseMatrix::new(3);
        assert!(s.push_row([(2, 1.0), (2, 1.0)]).is_err());
        assert!(s.push_row([(3, 1.0)]).is_err());
        s.push_row([(2, 1.0), (0, 2.0)]).unwrap();
        assert_eq!(s.row(0), (&[0u32, 2][..], &[2.0, 1.0][..]));
        assert_eq!(s.rows(), 1);
    }
}
