//! Dense kernels used by every layer of the acoustic model.

use alloc::vec::Vec;

/// Upper bound applied by [`Activation::ClippedRelu`] unless configured otherwise.
pub const DEFAULT_RELU_CLIP: f32 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("shape mismatch: {what} (expected {expected}, got {actual})")]
pub struct ShapeError {
    pub what: &'static str,
    pub expected: usize,
    pub actual: usize,
}

/// Row-major matrix over any contiguous `f32` storage.
///
/// Owned matrices use `Vec<f32>`; memory-mapped weights plug in their own
/// storage type as long as it derefs to a slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S = Vec<f32>> {
    rows: usize,
    cols: usize,
    data: S,
}

impl<S: AsRef<[f32]>> Matrix<S> {
    pub fn from_storage(rows: usize, cols: usize, data: S) -> Result<Self, ShapeError> {
        let len = data.as_ref().len();
        if len != rows * cols {
            return Err(ShapeError {
                what: "matrix data length",
                expected: rows * cols,
                actual: len,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f32] {
        self.data.as_ref()
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.as_slice()[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.as_slice()[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }

    pub fn storage(&self) -> &S {
        &self.data
    }

    pub fn to_owned(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.as_slice().to_vec(),
        }
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, ShapeError> {
        Self::from_storage(rows, cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: alloc::vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        let cols = self.cols;
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
}

/// Activation applied after every hidden affine map.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Activation {
    /// `max(0, x)`.
    #[default]
    Relu,
    /// `min(max(0, x), clip)`, the variant some recurrent speech models train with.
    ClippedRelu(f32),
}

impl Activation {
    #[inline]
    /// NaN passes through so that overflow upstream stays visible.
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu if x < 0.0 => 0.0,
            Activation::ClippedRelu(_) if x < 0.0 => 0.0,
            Activation::ClippedRelu(clip) if x > clip => clip,
            _ => x,
        }
    }

    pub fn apply_in_place(self, xs: &mut [f32]) {
        for x in xs {
            *x = self.apply(*x);
        }
    }
}

/// `out[i] = Σ_j w[i,j]·x[j] + b[i]`, accumulated in `f64`.
pub fn affine_into<S: AsRef<[f32]>, B: AsRef<[f32]> + ?Sized>(
    w: &Matrix<S>,
    x: &[f32],
    b: &B,
    out: &mut [f32],
) -> Result<(), ShapeError> {
    let b = b.as_ref();
    check(w.cols(), x.len(), "affine input width")?;
    check(w.rows(), b.len(), "affine bias length")?;
    check(w.rows(), out.len(), "affine output length")?;
    for (r, (o, &bias)) in out.iter_mut().zip(b).enumerate() {
        *o = (dot(w.row(r), x) + bias as f64) as f32;
    }
    Ok(())
}

pub fn affine<S: AsRef<[f32]>, B: AsRef<[f32]> + ?Sized>(
    w: &Matrix<S>,
    x: &[f32],
    b: &B,
) -> Result<Vec<f32>, ShapeError> {
    let mut out = alloc::vec![0.0; w.rows()];
    affine_into(w, x, b, &mut out)?;
    Ok(out)
}

/// Adds `w·x` to `acc` without a bias term.
pub fn matvec_add_into<S: AsRef<[f32]>>(
    w: &Matrix<S>,
    x: &[f32],
    acc: &mut [f32],
) -> Result<(), ShapeError> {
    check(w.cols(), x.len(), "matvec input width")?;
    check(w.rows(), acc.len(), "matvec output length")?;
    for (r, a) in acc.iter_mut().enumerate() {
        *a = (*a as f64 + dot(w.row(r), x)) as f32;
    }
    Ok(())
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    // Four independent lanes keep the reduction pipelined; the summation order
    // is fixed, so results stay bit-reproducible.
    let mut lanes = [0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = i * 4;
        lanes[0] += a[k] as f64 * b[k] as f64;
        lanes[1] += a[k + 1] as f64 * b[k + 1] as f64;
        lanes[2] += a[k + 2] as f64 * b[k + 2] as f64;
        lanes[3] += a[k + 3] as f64 * b[k + 3] as f64;
    }
    let mut tail = 0f64;
    for k in chunks * 4..a.len() {
        tail += a[k] as f64 * b[k] as f64;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

fn check(expected: usize, actual: usize, what: &'static str) -> Result<(), ShapeError> {
    if expected == actual {
        Ok(())
    } else {
        Err(ShapeError {
            what,
            expected,
            actual,
        })
    }
}

pub fn relu(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| Activation::Relu.apply(v)).collect()
}

/// Max-shifted softmax. Panics on an empty input.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(xs: &mut [f32]) {
    assert!(!xs.is_empty(), "softmax of an empty vector");
    let max = xs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0f64;
    let mut exps = Vec::with_capacity(xs.len());
    for &x in xs.iter() {
        let e = libm::exp((x - max) as f64);
        sum += e;
        exps.push(e);
    }
    for (x, e) in xs.iter_mut().zip(exps) {
        *x = (e / sum) as f32;
    }
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
