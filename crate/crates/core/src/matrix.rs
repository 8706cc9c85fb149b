//! Dense nonnegative square matrices and the small amount of linear algebra
//! the rest of the crate needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A square matrix with finite, nonnegative entries, stored row-major.
///
/// This is the offspring-mean matrix `H` of a Galton-Watson process: entry
/// `(m, m')` is the mean number of children of type `m'` of an individual of
/// type `m`. Type indices are zero-based throughout the crate.
///
/// Serialized as `{"dim": M, "rows": [[...], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct NonNegMatrix {
    dim: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixJson {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<MatrixJson> for NonNegMatrix {
    type Error = Error;

    fn try_from(json: MatrixJson) -> Result<Self> {
        if json.rows.len() != json.dim {
            return Err(Error::InvalidMatrix(format!("dim is {} but {} rows were given", json.dim, json.rows.len())));
        }
        NonNegMatrix::new(json.rows)
    }
}

impl From<NonNegMatrix> for MatrixJson {
    fn from(m: NonNegMatrix) -> Self {
        MatrixJson { dim: m.dim, rows: m.rows() }
    }
}

impl NonNegMatrix {
    /// Builds a matrix from its rows, rejecting non-square input, negative
    /// entries and non-finite entries.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidMatrix("matrix must have at least one row".into()));
        }
        let mut data = Vec::with_capacity(dim * dim);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidMatrix(format!("row {i} has {} entries, expected {dim}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidMatrix(format!("entry ({i},{j}) is not finite")));
                }
                if v < 0.0 {
                    return Err(Error::InvalidMatrix(format!("entry ({i},{j}) = {v} is negative")));
                }
            }
            data.extend(row);
        }
        Ok(NonNegMatrix { dim, data })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "matrix dimension must be positive");
        NonNegMatrix { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// 1×1 matrix `[[value]]`.
    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![vec![value]])
    }

    pub(crate) fn from_raw(dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dim * dim);
        debug_assert!(data.iter().all(|v| v.is_finite() && *v >= 0.0));
        NonNegMatrix { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "vector length must match matrix dimension");
        self.data.chunks(self.dim).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// `A B`.
    pub fn matmul(&self, other: &NonNegMatrix) -> NonNegMatrix {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        NonNegMatrix::from_raw(n, out)
    }

    /// `A^n`, with `A^0 = Id`.
    pub fn pow(&self, n: u32) -> NonNegMatrix {
        let mut result = NonNegMatrix::identity(self.dim);
        let mut base = self.clone();
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                result = result.matmul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.matmul(&base);
            }
        }
        result
    }

    /// `c A` for `c >= 0`.
    pub fn scale(&self, c: f64) -> NonNegMatrix {
        assert!(c >= 0.0 && c.is_finite(), "scale factor must be finite and nonnegative");
        NonNegMatrix::from_raw(self.dim, self.data.iter().map(|v| v * c).collect())
    }

    /// `A diag(d)`: column `j` multiplied by `d[j]`.
    pub fn scale_columns(&self, d: &[f64]) -> NonNegMatrix {
        assert_eq!(d.len(), self.dim);
        let data = self.data.chunks(self.dim).flat_map(|row| row.iter().zip(d).map(|(a, s)| a * s)).collect();
        NonNegMatrix::from_raw(self.dim, data)
    }

    /// `|||A|||_∞`, the maximum row sum.
    pub fn norm_inf(&self) -> f64 {
        self.data.chunks(self.dim).map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.data.chunks(self.dim).map(|r| r.iter().sum()).collect()
    }

    /// Solves `(Id - A) x = b` by partial-pivoted elimination.
    pub fn solve_identity_minus(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim;
        let mut m: Vec<f64> = self.data.iter().map(|v| -v).collect();
        for i in 0..n {
            m[i * n + i] += 1.0;
        }
        lu_solve(m, n, b.to_vec())
    }

    /// Condition number of `Id - A` in the ∞-norm, computed from the explicit
    /// inverse. Returns `+∞` when the system is singular.
    pub fn identity_minus_condition(&self) -> f64 {
        let n = self.dim;
        let mut m: Vec<f64> = self.data.iter().map(|v| -v).collect();
        for i in 0..n {
            m[i * n + i] += 1.0;
        }
        let norm = m.chunks(n).map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let mut inv_norm: f64 = 0.0;
        let mut inv_rows = vec![0.0; n];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            match lu_solve(m.clone(), n, e) {
                Ok(col) => {
                    for (acc, v) in inv_rows.iter_mut().zip(&col) {
                        *acc += v.abs();
                    }
                }
                Err(_) => return f64::INFINITY,
            }
        }
        for v in inv_rows {
            inv_norm = inv_norm.max(v);
        }
        norm * inv_norm
    }
}

/// Gaussian elimination with partial pivoting on a dense row-major `n × n`
/// system.
pub(crate) fn lu_solve(mut a: Vec<f64>, n: usize, mut b: Vec<f64>) -> Result<Vec<f64>> {
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let (pivot_row, pivot_abs) =
            (col..n)
                .map(|r| (r, a[r * n + col].abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_abs <= scale * 1e-300 || pivot_abs == 0.0 {
            return Err(Error::Singular);
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            b.swap(col, pivot_row);
        }
        let p = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i * n + k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i * n + i];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(x)
}

pub(crate) fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub(crate) fn check_nonneg_vector(x: &[f64], what: &str) -> Result<()> {
    for (i, &v) in x.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidArgument(format!("{what}[{i}] = {v} must be finite and nonnegative")));
        }
    }
    Ok(())
}

pub(crate) fn check_len(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
    }
    Ok(())
}
