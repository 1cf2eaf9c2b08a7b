//! Dense row-major matrices and the few kernels the editor needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Matrix whose columns are `cols`.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let rows = cols.first().map_or(0, Vec::len);
        let mut m = Matrix::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::Contract("ragged columns".into()));
            }
            for (i, v) in c.iter().enumerate() {
                m.data[i * m.cols + j] = *v;
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        matvec(&self.data, self.rows, self.cols, x, &mut y);
        y
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Contract(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), orow);
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `y = W x` for a row-major `rows x cols` block.
#[inline]
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    for (r, yr) in y.iter_mut().enumerate().take(rows) {
        *yr = dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `y += W^T x`.
#[inline]
pub fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    for (r, xr) in x.iter().enumerate().take(rows) {
        if *xr != 0.0 {
            axpy(*xr, &w[r * cols..(r + 1) * cols], &mut y[..cols]);
        }
    }
}

/// `G += a b^T` for a row-major `a.len() x b.len()` block.
#[inline]
pub fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (r, ar) in a.iter().enumerate() {
        if *ar != 0.0 {
            axpy(*ar, b, &mut g[r * cols..(r + 1) * cols]);
        }
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    if a.rows != a.cols {
        return Err(Error::Contract("cholesky needs a square matrix".into()));
    }
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j) - dot(&l.data[j * n..j * n + j], &l.data[j * n..j * n + j]);
        if !d.is_finite() || d <= 0.0 {
            return Err(Error::Model(format!(
                "matrix is not positive definite (pivot {j} = {d})"
            )));
        }
        d = d.sqrt();
        l.data[j * n + j] = d;
        for i in j + 1..n {
            let s = a.get(i, j) - dot(&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
            l.data[i * n + j] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L L^T x = b` in place given the Cholesky factor `L`.
pub fn cholesky_solve(l: &Matrix, b: &mut [f64]) {
    let n = l.rows;
    for i in 0..n {
        let s = b[i] - dot(&l.data[i * n..i * n + i], &b[..i]);
        b[i] = s / l.data[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for (k, bk) in b.iter().enumerate().take(n).skip(i + 1) {
            s -= l.data[k * n + i] * bk;
        }
        b[i] = s / l.data[i * n + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = Matrix::from_vec(3, 3, vec![4.0, 12.0, -16.0, 12.0, 37.0, -43.0, -16.0, -43.0, 98.0]).unwrap();
        let l = cholesky(&a).unwrap();
        let want = [2.0, 0.0, 0.0, 6.0, 1.0, 0.0, -8.0, 5.0, 3.0];
        for (x, y) in l.data.iter().zip(want) {
            assert!((x - y).abs() < 1e-12);
        }
        let mut b = vec![1.0, 2.0, 3.0];
        cholesky_solve(&l, &mut b);
        let back = a.mul_vec(&b);
        for (x, y) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn matmul_and_transpose() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = a.matmul(&a.transpose()).unwrap();
        assert_eq!(p.data, vec![14.0, 32.0, 32.0, 77.0]);
        assert!(a.matmul(&a).is_err());
        let c = Matrix::from_columns(&[vec![1.0, 4.0], vec![2.0, 5.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(c, a);
    }
}
