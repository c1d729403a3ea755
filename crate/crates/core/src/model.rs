//! The bidirectional recurrent acoustic model.
//!
//! Per frame `t`, with `g` the activation:
//!
//! ```text
//! h1 = g(W1·x + b1)      h2 = g(W2·h1 + b2)      h3 = g(W3·h2 + b3)
//! hf_t = g(W4·h3_t + Wr_f·hf_{t-1} + b4)          (ascending t, hf_{-1} = 0)
//! hb_t = g(W4·h3_t + Wr_b·hb_{t+1} + b4)          (descending t, hb_T = 0)
//! h4 = hf + hb           h5 = g(W5·h4 + b5)      y = softmax(W6·h5 + b6)
//! ```
//!
//! `W4`/`b4` are shared by both directions; only the recurrent matrices differ.
//! No layer changes the frame count.

use alloc::vec::Vec;

use crate::nn::{self, Activation, Matrix, ShapeError};

/// Tensor names in storage order.
pub const TENSOR_NAMES: [&str; 14] = [
    "W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4", "Wr_f", "Wr_b", "W5", "b5", "W6", "b6",
];

/// Hidden width of the published models.
pub const DEFAULT_N_HIDDEN: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("invalid model dimensions: {0}")]
    InvalidDims(&'static str),
    #[error("expected {expected} tensors, got {actual}")]
    TensorCount { expected: usize, actual: usize },
    #[error("tensor {name} has shape {actual_rows}x{actual_cols}, expected {rows}x{cols}")]
    TensorShape {
        name: &'static str,
        rows: usize,
        cols: usize,
        actual_rows: usize,
        actual_cols: usize,
    },
    #[error("feature width {actual} does not match model input width {expected}")]
    FeatureWidth { expected: usize, actual: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("distribution row {row} is not a probability distribution")]
    NotADistribution { row: usize },
    #[error("activations overflowed at frame {frame}; unclipped ReLU can diverge on long inputs, a clipped activation bounds it")]
    NonFinite { frame: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub feat_dim: usize,
    pub n_hidden: usize,
    /// Output classes, blank included.
    pub alphabet_size: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.feat_dim == 0 || self.n_hidden == 0 {
            return Err(ModelError::InvalidDims("dimensions must be positive"));
        }
        if self.alphabet_size < 2 {
            return Err(ModelError::InvalidDims(
                "alphabet needs a character and the blank",
            ));
        }
        Ok(())
    }

    /// `(name, rows, cols)` for every tensor, in storage order. Biases are `1×n`.
    pub fn tensor_shapes(&self) -> [(&'static str, usize, usize); 14] {
        let (d, h, k) = (self.feat_dim, self.n_hidden, self.alphabet_size);
        [
            ("W1", h, d),
            ("b1", 1, h),
            ("W2", h, h),
            ("b2", 1, h),
            ("W3", h, h),
            ("b3", 1, h),
            ("W4", h, h),
            ("b4", 1, h),
            ("Wr_f", h, h),
            ("Wr_b", h, h),
            ("W5", h, h),
            ("b5", 1, h),
            ("W6", k, h),
            ("b6", 1, k),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_shapes().iter().map(|(_, r, c)| r * c).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeEntry {
    pub name: &'static str,
    pub expected: (usize, usize),
    pub actual: Option<(usize, usize)>,
    pub finite: bool,
}

impl ShapeEntry {
    pub fn ok(&self) -> bool {
        self.actual == Some(self.expected) && self.finite
    }
}

/// Expected vs. actual shape of every tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeReport {
    pub entries: Vec<ShapeEntry>,
    pub extra_tensors: usize,
}

impl ShapeReport {
    pub fn passed(&self) -> bool {
        self.extra_tensors == 0 && self.entries.iter().all(ShapeEntry::ok)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ShapeEntry> {
        self.entries.iter().filter(|e| !e.ok())
    }
}

impl core::fmt::Display for ShapeReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        for e in &self.entries {
            let actual = match e.actual {
                Some((r, c)) => alloc::format!("{r}x{c}"),
                None => "missing".into(),
            };
            writeln!(
                f,
                "{:<5} expected {}x{} actual {}{} {}",
                e.name,
                e.expected.0,
                e.expected.1,
                actual,
                if e.finite { "" } else { " (non-finite)" },
                if e.ok() { "ok" } else { "FAIL" }
            )?;
        }
        if self.extra_tensors > 0 {
            writeln!(f, "{} unexpected extra tensors", self.extra_tensors)?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Checks a tensor list against `dims`, including a finiteness scan of every value.
pub fn validate<S: AsRef<[f32]>>(tensors: &[Matrix<S>], dims: &ModelDims) -> ShapeReport {
    let shapes = dims.tensor_shapes();
    let entries = shapes
        .iter()
        .enumerate()
        .map(|(i, &(name, rows, cols))| {
            let t = tensors.get(i);
            ShapeEntry {
                name,
                expected: (rows, cols),
                actual: t.map(|m| (m.rows(), m.cols())),
                finite: t.is_none_or(|m| m.is_finite()),
            }
        })
        .collect();
    ShapeReport {
        entries,
        extra_tensors: tensors.len().saturating_sub(shapes.len()),
    }
}

/// All model parameters. Shapes are checked on construction; values never change.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<S = Vec<f32>> {
    dims: ModelDims,
    tensors: Vec<Matrix<S>>,
}

impl<S: AsRef<[f32]>> ModelWeights<S> {
    /// `tensors` must follow [`TENSOR_NAMES`] order.
    pub fn new(dims: ModelDims, tensors: Vec<Matrix<S>>) -> Result<Self, ModelError> {
        dims.validate()?;
        if tensors.len() != TENSOR_NAMES.len() {
            return Err(ModelError::TensorCount {
                expected: TENSOR_NAMES.len(),
                actual: tensors.len(),
            });
        }
        for (t, (name, rows, cols)) in tensors.iter().zip(dims.tensor_shapes()) {
            if t.rows() != rows || t.cols() != cols {
                return Err(ModelError::TensorShape {
                    name,
                    rows,
                    cols,
                    actual_rows: t.rows(),
                    actual_cols: t.cols(),
                });
            }
        }
        Ok(Self { dims, tensors })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn tensors(&self) -> &[Matrix<S>] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix<S>> {
        TENSOR_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn validate(&self) -> ShapeReport {
        validate(&self.tensors, &self.dims)
    }

    pub fn w1(&self) -> &Matrix<S> {
        &self.tensors[0]
    }
    pub fn b1(&self) -> &[f32] {
        self.tensors[1].as_slice()
    }
    pub fn w2(&self) -> &Matrix<S> {
        &self.tensors[2]
    }
    pub fn b2(&self) -> &[f32] {
        self.tensors[3].as_slice()
    }
    pub fn w3(&self) -> &Matrix<S> {
        &self.tensors[4]
    }
    pub fn b3(&self) -> &[f32] {
        self.tensors[5].as_slice()
    }
    pub fn w4(&self) -> &Matrix<S> {
        &self.tensors[6]
    }
    pub fn b4(&self) -> &[f32] {
        self.tensors[7].as_slice()
    }
    pub fn wr_forward(&self) -> &Matrix<S> {
        &self.tensors[8]
    }
    pub fn wr_backward(&self) -> &Matrix<S> {
        &self.tensors[9]
    }
    pub fn w5(&self) -> &Matrix<S> {
        &self.tensors[10]
    }
    pub fn b5(&self) -> &[f32] {
        self.tensors[11].as_slice()
    }
    pub fn w6(&self) -> &Matrix<S> {
        &self.tensors[12]
    }
    pub fn b6(&self) -> &[f32] {
        self.tensors[13].as_slice()
    }

    /// Copies every tensor into owned storage.
    pub fn to_owned(&self) -> ModelWeights {
        ModelWeights {
            dims: self.dims,
            tensors: self.tensors.iter().map(Matrix::to_owned).collect(),
        }
    }
}

impl ModelWeights {
    /// Replaces one tensor, keeping the shape contract.
    pub fn with_tensor(mut self, name: &str, value: Matrix) -> Result<Self, ModelError> {
        let i = TENSOR_NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or(ModelError::InvalidDims("unknown tensor name"))?;
        let (name, rows, cols) = self.dims.tensor_shapes()[i];
        if value.rows() != rows || value.cols() != cols {
            return Err(ModelError::TensorShape {
                name,
                rows,
                cols,
                actual_rows: value.rows(),
                actual_cols: value.cols(),
            });
        }
        self.tensors[i] = value;
        Ok(self)
    }

    pub fn zeros(dims: ModelDims) -> Result<Self, ModelError> {
        let tensors = dims
            .tensor_shapes()
            .iter()
            .map(|&(_, r, c)| Matrix::zeros(r, c))
            .collect();
        Self::new(dims, tensors)
    }

    pub fn into_tensors(self) -> Vec<Matrix> {
        self.tensors
    }
}

/// Per-frame character probabilities, `T×K`, blank in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct CharDistribution(Matrix);

impl CharDistribution {
    /// Rows must be non-negative and sum to one within `1e-5`.
    pub fn new(probs: Matrix) -> Result<Self, ModelError> {
        for r in 0..probs.rows() {
            let row = probs.row(r);
            let sum: f64 = row.iter().map(|&p| p as f64).sum();
            // Written so that a NaN sum fails.
            let sums_to_one = (sum - 1.0).abs() <= 1e-5;
            if !sums_to_one || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(ModelError::NotADistribution { row: r });
            }
        }
        Ok(Self(probs))
    }

    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        self.0.row(t)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Runs two independent closures, possibly in parallel.
pub trait Join {
    fn join<A, B, RA, RB>(&self, a: A, b: B) -> (RA, RB)
    where
        A: FnOnce() -> RA + Send,
        B: FnOnce() -> RB + Send,
        RA: Send,
        RB: Send;
}

/// Runs `a` then `b` on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Join for Sequential {
    fn join<A, B, RA, RB>(&self, a: A, b: B) -> (RA, RB)
    where
        A: FnOnce() -> RA + Send,
        B: FnOnce() -> RB + Send,
        RA: Send,
        RB: Send,
    {
        let ra = a();
        (ra, b())
    }
}

pub fn forward<S: AsRef<[f32]> + Sync>(
    w: &ModelWeights<S>,
    x: &Matrix,
) -> Result<CharDistribution, ModelError> {
    forward_with(w, x, Activation::Relu, &Sequential)
}

/// Full forward pass. The two recurrence directions are handed to `join`; the
/// result is bit-identical whichever [`Join`] runs them.
pub fn forward_with<S: AsRef<[f32]> + Sync, J: Join>(
    w: &ModelWeights<S>,
    x: &Matrix,
    act: Activation,
    join: &J,
) -> Result<CharDistribution, ModelError> {
    let dims = w.dims;
    if x.cols() != dims.feat_dim {
        return Err(ModelError::FeatureWidth {
            expected: dims.feat_dim,
            actual: x.cols(),
        });
    }
    if x.rows() == 0 {
        return Err(ModelError::EmptyInput);
    }
    let h = dims.n_hidden;
    let frames = x.rows();

    let mut h3 = Matrix::zeros(frames, h);
    let mut h1 = alloc::vec![0f32; h];
    let mut h2 = alloc::vec![0f32; h];
    for t in 0..frames {
        dense(w.w1(), x.row(t), w.b1(), act, &mut h1)?;
        dense(w.w2(), &h1, w.b2(), act, &mut h2)?;
        dense(w.w3(), &h2, w.b3(), act, h3.row_mut(t))?;
    }

    let proj = recurrent_input(w, &h3)?;
    let (fwd, bwd) = join.join(
        || scan(&proj, w.wr_forward(), false, act),
        || scan(&proj, w.wr_backward(), true, act),
    );
    let (fwd, bwd) = (fwd?, bwd?);

    let k = dims.alphabet_size;
    let mut out = Matrix::zeros(frames, k);
    let mut h4 = alloc::vec![0f32; h];
    let mut h5 = alloc::vec![0f32; h];
    for t in 0..frames {
        for ((m, &f), &b) in h4.iter_mut().zip(fwd.row(t)).zip(bwd.row(t)) {
            *m = f + b;
        }
        dense(w.w5(), &h4, w.b5(), act, &mut h5)?;
        let logits = out.row_mut(t);
        nn::affine_into(w.w6(), &h5, w.b6(), logits)?;
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite { frame: t });
        }
        nn::softmax_in_place(logits);
    }
    Ok(CharDistribution(out))
}

fn dense<S: AsRef<[f32]>>(
    w: &Matrix<S>,
    x: &[f32],
    b: &[f32],
    act: Activation,
    out: &mut [f32],
) -> Result<(), ShapeError> {
    nn::affine_into(w, x, b, out)?;
    act.apply_in_place(out);
    Ok(())
}

/// `W4·h3_t + b4` for every frame.
fn recurrent_input<S: AsRef<[f32]>>(
    w: &ModelWeights<S>,
    h3: &Matrix,
) -> Result<Matrix, ModelError> {
    let h = w.dims.n_hidden;
    if h3.cols() != h {
        return Err(ShapeError {
            what: "recurrent layer input width",
            expected: h,
            actual: h3.cols(),
        }
        .into());
    }
    let mut proj = Matrix::zeros(h3.rows(), h);
    for t in 0..h3.rows() {
        nn::affine_into(w.w4(), h3.row(t), w.b4(), proj.row_mut(t))?;
    }
    Ok(proj)
}

fn scan<S: AsRef<[f32]>>(
    proj: &Matrix,
    recurrent: &Matrix<S>,
    reverse: bool,
    act: Activation,
) -> Result<Matrix, ModelError> {
    let (frames, h) = (proj.rows(), proj.cols());
    let mut out = Matrix::zeros(frames, h);
    let mut prev = alloc::vec![0f32; h];
    let mut cur = alloc::vec![0f32; h];
    for step in 0..frames {
        let t = if reverse { frames - 1 - step } else { step };
        cur.copy_from_slice(proj.row(t));
        nn::matvec_add_into(recurrent, &prev, &mut cur)?;
        act.apply_in_place(&mut cur);
        out.row_mut(t).copy_from_slice(&cur);
        core::mem::swap(&mut prev, &mut cur);
    }
    Ok(out)
}

/// Left-to-right recurrence over third-layer activations (`T×n_hidden`).
pub fn forward_recurrence<S: AsRef<[f32]>>(
    w: &ModelWeights<S>,
    h3: &Matrix,
    act: Activation,
) -> Result<Matrix, ModelError> {
    scan(&recurrent_input(w, h3)?, w.wr_forward(), false, act)
}

/// Right-to-left recurrence over third-layer activations (`T×n_hidden`).
pub fn backward_recurrence<S: AsRef<[f32]>>(
    w: &ModelWeights<S>,
    h3: &Matrix,
    act: Activation,
) -> Result<Matrix, ModelError> {
    scan(&recurrent_input(w, h3)?, w.wr_backward(), true, act)
}
