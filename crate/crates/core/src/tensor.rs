//! Dense row-major matrices and the numeric kernels built on them.
//!
//! `Tensor` is a plain value type; differentiability comes from recording
//! kernel applications on a [`crate::tape::Tape`]. Keeping the kernels here
//! lets the tape ops and the plain (no-grad) forward paths share one
//! implementation.

use crate::error::{CoreError, Result};

/// Numeric floor applied to row norms and to probabilities before logs.
pub const CLAMP_FLOOR: f64 = 1e-12;

/// A dense row-major matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::Shape(format!(
                "expected {}x{}={} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    /// Builds from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(CoreError::Shape("ragged rows".into()));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(r, c, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    /// The single entry of a 1x1 tensor.
    pub fn item(&self) -> Result<f64> {
        if self.rows * self.cols != 1 {
            return Err(CoreError::Contract(format!(
                "item() on a {}x{} tensor",
                self.rows, self.cols
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same shape and same bit pattern in every entry.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn reshaped(&self, rows: usize, cols: usize) -> Result<Tensor> {
        if rows * cols != self.data.len() {
            return Err(CoreError::Shape(format!(
                "cannot reshape {}x{} into {}x{}",
                self.rows, self.cols, rows, cols
            )));
        }
        Ok(Tensor {
            rows,
            cols,
            data: self.data.clone(),
        })
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CoreError::Shape(format!(
            "{op}: {}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(())
}

/// C = A * B.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.rows {
        return Err(CoreError::Shape(format!(
            "matmul: {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = b.row(k);
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// C = A * B^T. Row i of A dotted with row j of B.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.cols {
        return Err(CoreError::Shape(format!(
            "matmul_nt: {}x{} * ({}x{})^T",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = b.row(j);
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o = acc;
        }
    }
    Ok(out)
}

/// C = A^T * B.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows != b.rows {
        return Err(CoreError::Shape(format!(
            "matmul_tn: ({}x{})^T * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Tensor::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &aki) in a_row.iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let out_row = out.row_mut(i);
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aki * bkj;
            }
        }
    }
    Ok(out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b, "add")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Tensor::new(a.rows, a.cols, data)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b, "sub")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Tensor::new(a.rows, a.cols, data)
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b, "hadamard")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Tensor::new(a.rows, a.cols, data)
}

pub fn scale(a: &Tensor, k: f64) -> Tensor {
    let data = a.data.iter().map(|x| x * k).collect();
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data,
    }
}

pub fn add_scalar(a: &Tensor, k: f64) -> Tensor {
    let data = a.data.iter().map(|x| x + k).collect();
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data,
    }
}

/// Adds a 1xC bias row to every row of A.
pub fn add_row_broadcast(a: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if bias.rows != 1 || bias.cols != a.cols {
        return Err(CoreError::Shape(format!(
            "add_row_broadcast: {}x{} + {}x{}",
            a.rows, a.cols, bias.rows, bias.cols
        )));
    }
    let mut out = a.clone();
    for r in 0..out.rows {
        for (o, b) in out.row_mut(r).iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    Ok(out)
}

pub fn relu(a: &Tensor) -> Tensor {
    let data = a.data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data,
    }
}

pub fn exp(a: &Tensor) -> Tensor {
    let data = a.data.iter().map(|x| x.exp()).collect();
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data,
    }
}

/// Natural log with entries clamped at [`CLAMP_FLOOR`]. Returns the result
/// and the number of clamped entries.
pub fn ln_clamped(a: &Tensor) -> (Tensor, usize) {
    let mut clamps = 0usize;
    let data = a
        .data
        .iter()
        .map(|&x| {
            if x < CLAMP_FLOOR {
                clamps += 1;
                CLAMP_FLOOR.ln()
            } else {
                x.ln()
            }
        })
        .collect();
    (
        Tensor {
            rows: a.rows,
            cols: a.cols,
            data,
        },
        clamps,
    )
}

/// Row-wise softmax with max-subtraction stabilization.
pub fn row_softmax(a: &Tensor) -> Tensor {
    let mut out = a.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Row-wise log(sum(exp(x))) with max-subtraction, returned as Rx1.
pub fn logsumexp_row(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows, 1);
    for r in 0..a.rows {
        let row = a.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        out.data[r] = max + sum.ln();
    }
    out
}

/// Row-wise log(sum_j w_j * exp(x_j)) with max-subtraction, returned as Rx1.
///
/// Weights must be nonnegative with a strictly positive row total; the
/// stabilization constant is the row max of x so entries never overflow.
pub fn weighted_logsumexp_row(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    check_same_shape(x, w, "weighted_logsumexp_row")?;
    let mut out = Tensor::zeros(x.rows, 1);
    for r in 0..x.rows {
        let xr = x.row(r);
        let wr = w.row(r);
        let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (&xv, &wv) in xr.iter().zip(wr) {
            sum += wv * (xv - max).exp();
        }
        if sum <= 0.0 {
            return Err(CoreError::Numeric(format!(
                "weighted logsumexp row {r} has non-positive weighted sum {sum}"
            )));
        }
        out.data[r] = max + sum.ln();
    }
    Ok(out)
}

pub fn row_sum(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows, 1);
    for r in 0..a.rows {
        out.data[r] = a.row(r).iter().sum();
    }
    out
}

pub fn col_sum(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, a.cols);
    for r in 0..a.rows {
        for (o, v) in out.data.iter_mut().zip(a.row(r)) {
            *o += v;
        }
    }
    out
}

pub fn reduce_sum(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum())
}

pub fn reduce_mean(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum::<f64>() / a.data.len() as f64)
}

/// Diagonal of a square matrix as Nx1.
pub fn take_diag(a: &Tensor) -> Result<Tensor> {
    if a.rows != a.cols {
        return Err(CoreError::Shape(format!(
            "take_diag on a {}x{} tensor",
            a.rows, a.cols
        )));
    }
    let mut out = Tensor::zeros(a.rows, 1);
    for i in 0..a.rows {
        out.data[i] = a.data[i * a.cols + i];
    }
    Ok(out)
}

/// Euclidean norm of each row, clamped at [`CLAMP_FLOOR`]. Returns the Rx1
/// norms and the number of clamped rows.
pub fn row_norms_clamped(a: &Tensor) -> (Tensor, usize) {
    let mut clamps = 0usize;
    let mut out = Tensor::zeros(a.rows, 1);
    for r in 0..a.rows {
        let norm = a.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
        out.data[r] = if norm < CLAMP_FLOOR {
            clamps += 1;
            CLAMP_FLOOR
        } else {
            norm
        };
    }
    (out, clamps)
}

/// Divides every row of A by the matching entry of the Rx1 tensor s.
pub fn div_rows(a: &Tensor, s: &Tensor) -> Result<Tensor> {
    if s.rows != a.rows || s.cols != 1 {
        return Err(CoreError::Shape(format!(
            "div_rows: {}x{} by {}x{}",
            a.rows, a.cols, s.rows, s.cols
        )));
    }
    let mut out = a.clone();
    for r in 0..out.rows {
        let d = s.data[r];
        for v in out.row_mut(r) {
            *v /= d;
        }
    }
    Ok(out)
}

/// All ordered row pairs of (u, v) concatenated: row i*n+j is [u_i, v_j].
pub fn concat_rows_pairwise(u: &Tensor, v: &Tensor) -> Result<Tensor> {
    if u.rows != v.rows {
        return Err(CoreError::Shape(format!(
            "concat_rows_pairwise: {} vs {} rows",
            u.rows, v.rows
        )));
    }
    let n = u.rows;
    let mut out = Tensor::zeros(n * n, u.cols + v.cols);
    for i in 0..n {
        for j in 0..n {
            let row = out.row_mut(i * n + j);
            row[..u.cols].copy_from_slice(u.row(i));
            row[u.cols..].copy_from_slice(v.row(j));
        }
    }
    Ok(out)
}
