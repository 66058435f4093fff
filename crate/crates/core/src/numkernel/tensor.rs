use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Every value in the crate is two-dimensional; vectors are `1 × n` rows and
/// scalars are `1 × 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim(format!(
                "extents must be positive, got {rows}x{cols}"
            )));
        }
        if rows * cols != data.len() {
            return Err(Error::dim(format!(
                "shape {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: [rows, cols],
            data,
        })
    }

    /// Panics on non-positive extents; use [`Tensor::new`] for untrusted input.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(
            rows > 0 && cols > 0,
            "extents must be positive, got {rows}x{cols}"
        );
        Tensor {
            shape: [rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        let mut t = Tensor::zeros(rows, cols);
        t.data.fill(value);
        t
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut t = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                t.data[r * cols + c] = f(r, c);
            }
        }
        t
    }

    pub fn identity(n: usize) -> Self {
        Tensor::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: [1, 1],
            data: vec![value],
        }
    }

    pub fn row(values: &[f64]) -> Self {
        Tensor::new(1, values.len(), values.to_vec()).expect("non-empty row")
    }

    pub fn column(values: &[f64]) -> Self {
        Tensor::new(values.len(), 1, values.to_vec()).expect("non-empty column")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Tensor::new(rows.len(), cols, rows.concat())
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.shape[1];
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_slice_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Value of a `1 × 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn transpose(&self) -> Tensor {
        let [r, c] = self.shape;
        Tensor::from_fn(c, r, |i, j| self.data[j * c + i])
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let cols = self.cols();
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= self.rows() {
                return Err(Error::Index(format!(
                    "row {i} out of range for {} rows",
                    self.rows()
                )));
            }
            out.extend_from_slice(self.row_slice(i));
        }
        Tensor::new(idx.len(), cols, out)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        check_inner(self, other, self.cols(), other.rows(), "matmul")?;
        let mut out = Tensor::zeros(self.rows(), other.cols());
        matmul_into(self, other, &mut out);
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        check_inner(self, other, self.cols(), other.cols(), "matmul_nt")?;
        let mut out = Tensor::zeros(self.rows(), other.rows());
        matmul_nt_into(self, other, &mut out);
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        check_inner(self, other, self.rows(), other.rows(), "matmul_tn")?;
        let mut out = Tensor::zeros(self.cols(), other.cols());
        matmul_tn_into(self, other, &mut out);
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_inner(a: &Tensor, b: &Tensor, ka: usize, kb: usize, what: &str) -> Result<()> {
    if ka != kb {
        return Err(Error::dim(format!(
            "{what}: inner extents differ for {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// `out += a · b`
pub(crate) fn matmul_into(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    for i in 0..m {
        let orow = &mut out.data[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a · bᵀ`
pub(crate) fn matmul_nt_into(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            out.data[i * n + j] += dot(arow, &b.data[j * k..(j + 1) * k]);
        }
    }
}

/// `out += aᵀ · b`
pub(crate) fn matmul_tn_into(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    for p in 0..k {
        let brow = &b.data[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a.data[p * m + i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Max-subtracted softmax in place. Shared by every attention path so that
/// equal inputs always produce bitwise-equal weights.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
