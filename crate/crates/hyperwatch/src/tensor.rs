//! Reverse-mode automatic differentiation on a flat computation tape.
//!
//! Every intermediate value is an f64 tensor stored row-major in a tape
//! arena. Operations evaluate eagerly and record enough bookkeeping to run
//! the chain rule backwards over the recorded list. The op set is the small
//! vocabulary the hypergraph model needs: dense matmul, elementwise
//! arithmetic and activations, column concatenation, row gather/scatter,
//! segment reductions, and softmax over an arbitrary grouping of indices.
//!
//! Backward walks the ops in reverse insertion order, so gradients for any
//! node are complete before they are consumed, and two backward passes over
//! identical inputs produce bit-identical gradients.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} requires a 2-d tensor, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    BadShape { len: usize, shape: Vec<usize> },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("softmax group {group} is empty")]
    EmptyGroup { group: usize },
    #[error("segment id {seg} out of range for {segments} segments")]
    SegmentOutOfRange { seg: usize, segments: usize },
    #[error("duplicate row index {index} in scatter")]
    DuplicateIndex { index: usize },
    #[error("row index {index} out of bounds for {rows} rows")]
    IndexOutOfBounds { index: usize, rows: usize },
    #[error("non-finite value produced by {what}")]
    NonFinite { what: &'static str },
    #[error("non-finite gradient in parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("empty input to {op}")]
    Empty { op: &'static str },
}

/// Dense row-major tensor. `grad` is populated by [`Tape::backward`] for
/// nodes that require gradients.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<Self, TensorError> {
        let want: usize = shape.iter().product();
        if want != data.len() || shape.is_empty() {
            return Err(TensorError::BadShape {
                len: data.len(),
                shape,
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>, requires_grad: bool) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
            requires_grad,
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// (rows, cols) view: matrices report their shape, vectors are columns.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (self.shape[0], 1),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }
}

/// Identifier of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Transpose { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    ScaleRows { x: usize, w: usize },
    MulScalar { x: usize, s: usize },
    Relu { x: usize },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Sqrt { x: usize },
    Recip { x: usize },
    Concat { parts: Vec<usize>, axis: usize },
    GatherRows { x: usize, idx: Vec<usize> },
    ScatterRows { x: usize, idx: Vec<usize> },
    SegmentSum { x: usize, seg: Vec<usize> },
    GroupedSoftmax { x: usize, seg: Vec<usize>, segments: usize },
    RowDot { a: usize, b: usize },
    RowSum { x: usize },
    SumAll { x: usize },
    Reshape { x: usize },
    BceLoss { pred: usize, target: usize },
}

/// Recorded forward computation: a node arena plus one op per node
/// describing how it was produced.
pub struct Tape {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
}

const BCE_CLAMP: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, t: Tensor, op: Op) -> TensorId {
        self.nodes.push(t);
        self.ops.push(op);
        TensorId(self.nodes.len() - 1)
    }

    /// Insert a leaf tensor.
    pub fn leaf(&mut self, t: Tensor) -> TensorId {
        self.push(t, Op::Leaf)
    }

    /// Leaf that participates in gradients.
    pub fn var(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId, TensorError> {
        Ok(self.leaf(Tensor::new(data, shape, true)?))
    }

    /// Leaf excluded from gradients.
    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId, TensorError> {
        Ok(self.leaf(Tensor::new(data, shape, false)?))
    }

    fn matrix_shape(&self, id: TensorId, op: &'static str) -> Result<(usize, usize), TensorError> {
        let s = &self.nodes[id.0].shape;
        if s.len() != 2 {
            return Err(TensorError::NotMatrix {
                op,
                shape: s.clone(),
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (m, ka) = self.matrix_shape(a, "matmul")?;
        let (kb, n) = self.matrix_shape(b, "matmul")?;
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let out = matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, ka, n);
        let t = Tensor::new(out, vec![m, n], false)?;
        Ok(self.push(t, Op::MatMul { a: a.0, b: b.0 }))
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let (r, c) = self.matrix_shape(x, "transpose")?;
        let src = &self.nodes[x.0].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::new(out, vec![c, r], false)?;
        Ok(self.push(t, Op::Transpose { x: x.0 }))
    }

    fn same_shape(&self, a: TensorId, b: TensorId, op: &'static str) -> Result<(), TensorError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x + y);
        let t = Tensor::new(data, self.nodes[a.0].shape.clone(), false)?;
        Ok(self.push(t, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.same_shape(a, b, "sub")?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x - y);
        let t = Tensor::new(data, self.nodes[a.0].shape.clone(), false)?;
        Ok(self.push(t, Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x * y);
        let t = Tensor::new(data, self.nodes[a.0].shape.clone(), false)?;
        Ok(self.push(t, Op::Mul { a: a.0, b: b.0 }))
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v * c).collect();
        let t = Tensor {
            shape: self.nodes[x.0].shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(t, Op::Scale { x: x.0, c })
    }

    /// Multiply row i of `x` by `w[i]`.
    pub fn scale_rows(&mut self, x: TensorId, w: TensorId) -> Result<TensorId, TensorError> {
        let (r, c) = self.nodes[x.0].rows_cols();
        if self.nodes[w.0].len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: self.nodes[w.0].shape.clone(),
            });
        }
        let xs = &self.nodes[x.0].data;
        let ws = &self.nodes[w.0].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = xs[i * c + j] * ws[i];
            }
        }
        let t = Tensor::new(out, self.nodes[x.0].shape.clone(), false)?;
        Ok(self.push(t, Op::ScaleRows { x: x.0, w: w.0 }))
    }

    /// Multiply every entry of `x` by the scalar tensor `s` (shape `[1]`).
    pub fn mul_scalar(&mut self, x: TensorId, s: TensorId) -> Result<TensorId, TensorError> {
        if self.nodes[s.0].len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "mul_scalar",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: self.nodes[s.0].shape.clone(),
            });
        }
        let sv = self.nodes[s.0].data[0];
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v * sv).collect();
        let t = Tensor::new(data, self.nodes[x.0].shape.clone(), false)?;
        Ok(self.push(t, Op::MulScalar { x: x.0, s: s.0 }))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.max(0.0)).collect();
        let t = Tensor {
            shape: self.nodes[x.0].shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(t, Op::Relu { x: x.0 })
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let data: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let t = Tensor {
            shape: self.nodes[x.0].shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(t, Op::Sigmoid { x: x.0 })
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.tanh()).collect();
        let t = Tensor {
            shape: self.nodes[x.0].shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(t, Op::Tanh { x: x.0 })
    }

    pub fn sqrt(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let mut data = Vec::with_capacity(self.nodes[x.0].len());
        for &v in &self.nodes[x.0].data {
            let r = v.sqrt();
            if !r.is_finite() {
                return Err(TensorError::NonFinite { what: "sqrt" });
            }
            data.push(r);
        }
        let t = Tensor::new(data, self.nodes[x.0].shape.clone(), false)?;
        Ok(self.push(t, Op::Sqrt { x: x.0 }))
    }

    pub fn recip(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let mut data = Vec::with_capacity(self.nodes[x.0].len());
        for &v in &self.nodes[x.0].data {
            let r = 1.0 / v;
            if !r.is_finite() {
                return Err(TensorError::NonFinite { what: "recip" });
            }
            data.push(r);
        }
        let t = Tensor::new(data, self.nodes[x.0].shape.clone(), false)?;
        Ok(self.push(t, Op::Recip { x: x.0 }))
    }

    /// Concatenate 2-d tensors along `axis` (0 stacks rows, 1 widens rows).
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Empty { op: "concat" });
        }
        let (r0, c0) = self.matrix_shape(parts[0], "concat")?;
        match axis {
            0 => {
                let mut rows = r0;
                let mut data = self.nodes[parts[0].0].data.clone();
                for &p in &parts[1..] {
                    let (r, c) = self.matrix_shape(p, "concat")?;
                    if c != c0 {
                        return Err(TensorError::ShapeMismatch {
                            op: "concat",
                            lhs: vec![r0, c0],
                            rhs: vec![r, c],
                        });
                    }
                    rows += r;
                    data.extend_from_slice(&self.nodes[p.0].data);
                }
                let t = Tensor::new(data, vec![rows, c0], false)?;
                Ok(self.push(
                    t,
                    Op::Concat {
                        parts: parts.iter().map(|p| p.0).collect(),
                        axis,
                    },
                ))
            }
            1 => {
                let mut widths = vec![c0];
                for &p in &parts[1..] {
                    let (r, c) = self.matrix_shape(p, "concat")?;
                    if r != r0 {
                        return Err(TensorError::ShapeMismatch {
                            op: "concat",
                            lhs: vec![r0, c0],
                            rhs: vec![r, c],
                        });
                    }
                    widths.push(c);
                }
                let total: usize = widths.iter().sum();
                let mut data = vec![0.0; r0 * total];
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    let src = &self.nodes[p.0].data;
                    for i in 0..r0 {
                        data[i * total + off..i * total + off + w]
                            .copy_from_slice(&src[i * w..(i + 1) * w]);
                    }
                    off += w;
                }
                let t = Tensor::new(data, vec![r0, total], false)?;
                Ok(self.push(
                    t,
                    Op::Concat {
                        parts: parts.iter().map(|p| p.0).collect(),
                        axis,
                    },
                ))
            }
            _ => Err(TensorError::NotMatrix {
                op: "concat axis",
                shape: vec![axis],
            }),
        }
    }

    /// Select rows of `x` by index; indices may repeat.
    pub fn gather_rows(&mut self, x: TensorId, idx: &[usize]) -> Result<TensorId, TensorError> {
        let (r, c) = self.nodes[x.0].rows_cols();
        for &i in idx {
            if i >= r {
                return Err(TensorError::IndexOutOfBounds { index: i, rows: r });
            }
        }
        let src = &self.nodes[x.0].data;
        let mut data = vec![0.0; idx.len() * c];
        for (j, &i) in idx.iter().enumerate() {
            data[j * c..(j + 1) * c].copy_from_slice(&src[i * c..(i + 1) * c]);
        }
        let shape = if self.nodes[x.0].shape.len() == 1 {
            vec![idx.len()]
        } else {
            vec![idx.len(), c]
        };
        let t = Tensor::new(data, shape, false)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                x: x.0,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Place row j of `x` at row `idx[j]` of a zero tensor with `rows` rows.
    /// Indices must be unique.
    pub fn scatter_rows(
        &mut self,
        x: TensorId,
        idx: &[usize],
        rows: usize,
    ) -> Result<TensorId, TensorError> {
        let (r, c) = self.nodes[x.0].rows_cols();
        if idx.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_rows",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: vec![idx.len()],
            });
        }
        let mut seen = vec![false; rows];
        for &i in idx {
            if i >= rows {
                return Err(TensorError::IndexOutOfBounds { index: i, rows });
            }
            if seen[i] {
                return Err(TensorError::DuplicateIndex { index: i });
            }
            seen[i] = true;
        }
        let src = &self.nodes[x.0].data;
        let mut data = vec![0.0; rows * c];
        for (j, &i) in idx.iter().enumerate() {
            data[i * c..(i + 1) * c].copy_from_slice(&src[j * c..(j + 1) * c]);
        }
        let shape = if self.nodes[x.0].shape.len() == 1 {
            vec![rows]
        } else {
            vec![rows, c]
        };
        let t = Tensor::new(data, shape, false)?;
        Ok(self.push(
            t,
            Op::ScatterRows {
                x: x.0,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Sum rows of `x` into `segments` buckets selected by `seg`.
    pub fn segment_sum(
        &mut self,
        x: TensorId,
        seg: &[usize],
        segments: usize,
    ) -> Result<TensorId, TensorError> {
        let (r, c) = self.nodes[x.0].rows_cols();
        if seg.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: vec![seg.len()],
            });
        }
        for &s in seg {
            if s >= segments {
                return Err(TensorError::SegmentOutOfRange { seg: s, segments });
            }
        }
        let src = &self.nodes[x.0].data;
        let mut data = vec![0.0; segments * c];
        for (row, &s) in seg.iter().enumerate() {
            for j in 0..c {
                data[s * c + j] += src[row * c + j];
            }
        }
        let shape = if self.nodes[x.0].shape.len() == 1 {
            vec![segments]
        } else {
            vec![segments, c]
        };
        let t = Tensor::new(data, shape, false)?;
        Ok(self.push(
            t,
            Op::SegmentSum {
                x: x.0,
                seg: seg.to_vec(),
            },
        ))
    }

    /// Softmax applied independently inside each segment of a flat score
    /// vector. Every segment in `0..segments` must own at least one index.
    pub fn grouped_softmax(
        &mut self,
        scores: TensorId,
        seg: &[usize],
        segments: usize,
    ) -> Result<TensorId, TensorError> {
        let n = self.nodes[scores.0].len();
        if seg.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "grouped_softmax",
                lhs: self.nodes[scores.0].shape.clone(),
                rhs: vec![seg.len()],
            });
        }
        let mut count = vec![0usize; segments];
        for &s in seg {
            if s >= segments {
                return Err(TensorError::SegmentOutOfRange { seg: s, segments });
            }
            count[s] += 1;
        }
        for (g, &c) in count.iter().enumerate() {
            if c == 0 {
                return Err(TensorError::EmptyGroup { group: g });
            }
        }
        let src = &self.nodes[scores.0].data;
        let mut maxes = vec![f64::NEG_INFINITY; segments];
        for (i, &s) in seg.iter().enumerate() {
            if src[i] > maxes[s] {
                maxes[s] = src[i];
            }
        }
        let mut sums = vec![0.0; segments];
        let mut out = vec![0.0; n];
        for (i, &s) in seg.iter().enumerate() {
            let e = (src[i] - maxes[s]).exp();
            out[i] = e;
            sums[s] += e;
        }
        for (i, &s) in seg.iter().enumerate() {
            out[i] /= sums[s];
        }
        let t = Tensor::new(out, self.nodes[scores.0].shape.clone(), false)?;
        Ok(self.push(
            t,
            Op::GroupedSoftmax {
                x: scores.0,
                seg: seg.to_vec(),
                segments,
            },
        ))
    }

    /// Row-wise dot product of two equally shaped tensors.
    pub fn row_dot(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.same_shape(a, b, "row_dot")?;
        let (r, c) = self.nodes[a.0].rows_cols();
        let xs = &self.nodes[a.0].data;
        let ys = &self.nodes[b.0].data;
        let mut out = vec![0.0; r];
        for i in 0..r {
            let mut acc = 0.0;
            for j in 0..c {
                acc += xs[i * c + j] * ys[i * c + j];
            }
            out[i] = acc;
        }
        let t = Tensor::new(out, vec![r], false)?;
        Ok(self.push(t, Op::RowDot { a: a.0, b: b.0 }))
    }

    /// Sum each row into a vector of row totals.
    pub fn row_sum(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let (r, c) = self.nodes[x.0].rows_cols();
        let src = &self.nodes[x.0].data;
        let mut out = vec![0.0; r];
        for i in 0..r {
            let mut acc = 0.0;
            for j in 0..c {
                acc += src[i * c + j];
            }
            out[i] = acc;
        }
        let t = Tensor::new(out, vec![r], false)?;
        Ok(self.push(t, Op::RowSum { x: x.0 }))
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let total: f64 = self.nodes[x.0].data.iter().sum();
        let t = Tensor {
            shape: vec![1],
            data: vec![total],
            requires_grad: false,
            grad: None,
        };
        self.push(t, Op::SumAll { x: x.0 })
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let n = self.nodes[x.0].len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId, TensorError> {
        let want: usize = shape.iter().product();
        if want != self.nodes[x.0].len() {
            return Err(TensorError::BadShape {
                len: self.nodes[x.0].len(),
                shape,
            });
        }
        let t = Tensor::new(self.nodes[x.0].data.clone(), shape, false)?;
        Ok(self.push(t, Op::Reshape { x: x.0 }))
    }

    /// Mean squared error between two equally shaped tensors.
    pub fn mse_loss(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId, TensorError> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean_all(sq))
    }

    /// Mean binary cross-entropy of probabilities `pred` against labels in
    /// `[0, 1]`. Probabilities are clamped away from {0, 1} before the log.
    pub fn bce_loss(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId, TensorError> {
        if self.nodes[pred.0].len() != self.nodes[target.0].len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_loss",
                lhs: self.nodes[pred.0].shape.clone(),
                rhs: self.nodes[target.0].shape.clone(),
            });
        }
        let ps = &self.nodes[pred.0].data;
        let ys = &self.nodes[target.0].data;
        let n = ps.len() as f64;
        let mut total = 0.0;
        for (&p, &y) in ps.iter().zip(ys) {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        let t = Tensor {
            shape: vec![1],
            data: vec![total / n],
            requires_grad: false,
            grad: None,
        };
        Ok(self.push(
            t,
            Op::BceLoss {
                pred: pred.0,
                target: target.0,
            },
        ))
    }

    /// Reverse pass from a scalar loss. After it returns, every leaf with
    /// `requires_grad` carries a gradient; leaves the loss does not reach get
    /// zeros.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.nodes[loss.0].len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.ops[id] {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul { a, b } => {
                    let (m, k) = {
                        let s = &self.nodes[*a].shape;
                        (s[0], s[1])
                    };
                    let nc = self.nodes[*b].shape[1];
                    // dA = G * B^T, dB = A^T * G
                    let bt = transpose_raw(&self.nodes[*b].data, k, nc);
                    let da = matmul_raw(&g, &bt, m, nc, k);
                    let at = transpose_raw(&self.nodes[*a].data, m, k);
                    let db = matmul_raw(&at, &g, k, m, nc);
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::Transpose { x } => {
                    let (r, c) = {
                        let s = &self.nodes[*x].shape;
                        (s[0], s[1])
                    };
                    let gt = transpose_raw(&g, c, r);
                    accumulate(&mut grads, *x, &gt);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *b, &neg);
                }
                Op::Mul { a, b } => {
                    let da = zip_map(&g, &self.nodes[*b].data, |x, y| x * y);
                    let db = zip_map(&g, &self.nodes[*a].data, |x, y| x * y);
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::Scale { x, c } => {
                    let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::ScaleRows { x, w } => {
                    let (r, c) = self.nodes[*x].rows_cols();
                    let xs = &self.nodes[*x].data;
                    let ws = &self.nodes[*w].data;
                    let mut dx = vec![0.0; r * c];
                    let mut dw = vec![0.0; r];
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] = g[i * c + j] * ws[i];
                            dw[i] += g[i * c + j] * xs[i * c + j];
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                    accumulate(&mut grads, *w, &dw);
                }
                Op::MulScalar { x, s } => {
                    let sv = self.nodes[*s].data[0];
                    let xs = &self.nodes[*x].data;
                    let dx: Vec<f64> = g.iter().map(|v| v * sv).collect();
                    let ds: f64 = g.iter().zip(xs).map(|(gv, xv)| gv * xv).sum();
                    accumulate(&mut grads, *x, &dx);
                    accumulate(&mut grads, *s, &[ds]);
                }
                Op::Relu { x } => {
                    let dx = zip_map(&self.nodes[*x].data, &g, |xv, gv| {
                        if xv > 0.0 {
                            gv
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Sigmoid { x } => {
                    let dx = zip_map(&self.nodes[id].data, &g, |y, gv| gv * y * (1.0 - y));
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Tanh { x } => {
                    let dx = zip_map(&self.nodes[id].data, &g, |y, gv| gv * (1.0 - y * y));
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Sqrt { x } => {
                    let dx = zip_map(&self.nodes[id].data, &g, |y, gv| gv / (2.0 * y));
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Recip { x } => {
                    let dx = zip_map(&self.nodes[id].data, &g, |y, gv| -gv * y * y);
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Concat { parts, axis } => {
                    if *axis == 0 {
                        let cols = self.nodes[id].shape[1];
                        let mut row_off = 0;
                        for &p in parts {
                            let pr = self.nodes[p].shape[0];
                            let slice = &g[row_off * cols..(row_off + pr) * cols];
                            accumulate(&mut grads, p, slice);
                            row_off += pr;
                        }
                    } else {
                        let rows = self.nodes[id].shape[0];
                        let total = self.nodes[id].shape[1];
                        let mut col_off = 0;
                        for &p in parts {
                            let pc = self.nodes[p].shape[1];
                            let mut dp = vec![0.0; rows * pc];
                            for i in 0..rows {
                                dp[i * pc..(i + 1) * pc].copy_from_slice(
                                    &g[i * total + col_off..i * total + col_off + pc],
                                );
                            }
                            accumulate(&mut grads, p, &dp);
                            col_off += pc;
                        }
                    }
                }
                Op::GatherRows { x, idx } => {
                    let (r, c) = self.nodes[*x].rows_cols();
                    let mut dx = vec![0.0; r * c];
                    for (j, &i) in idx.iter().enumerate() {
                        for col in 0..c {
                            dx[i * c + col] += g[j * c + col];
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::ScatterRows { x, idx } => {
                    let (_, c) = self.nodes[*x].rows_cols();
                    let mut dx = vec![0.0; idx.len() * c];
                    for (j, &i) in idx.iter().enumerate() {
                        dx[j * c..(j + 1) * c].copy_from_slice(&g[i * c..(i + 1) * c]);
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::SegmentSum { x, seg } => {
                    let (r, c) = self.nodes[*x].rows_cols();
                    let mut dx = vec![0.0; r * c];
                    for (row, &s) in seg.iter().enumerate() {
                        dx[row * c..(row + 1) * c].copy_from_slice(&g[s * c..(s + 1) * c]);
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::GroupedSoftmax { x, seg, segments } => {
                    let y = &self.nodes[id].data;
                    let mut dots = vec![0.0; *segments];
                    for (i, &s) in seg.iter().enumerate() {
                        dots[s] += g[i] * y[i];
                    }
                    let mut dx = vec![0.0; y.len()];
                    for (i, &s) in seg.iter().enumerate() {
                        dx[i] = y[i] * (g[i] - dots[s]);
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::RowDot { a, b } => {
                    let (r, c) = self.nodes[*a].rows_cols();
                    let xs = &self.nodes[*a].data;
                    let ys = &self.nodes[*b].data;
                    let mut da = vec![0.0; r * c];
                    let mut db = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = g[i] * ys[i * c + j];
                            db[i * c + j] = g[i] * xs[i * c + j];
                        }
                    }
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::RowSum { x } => {
                    let (r, c) = self.nodes[*x].rows_cols();
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] = g[i];
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::SumAll { x } => {
                    let dx = vec![g[0]; self.nodes[*x].len()];
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Reshape { x } => {
                    accumulate(&mut grads, *x, &g);
                }
                Op::BceLoss { pred, target } => {
                    let ps = &self.nodes[*pred].data;
                    let ys = &self.nodes[*target].data;
                    let n = ps.len() as f64;
                    let mut dp = vec![0.0; ps.len()];
                    let mut dy = vec![0.0; ps.len()];
                    for i in 0..ps.len() {
                        let p = ps[i].clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        dp[i] = g[0] * (p - ys[i]) / (p * (1.0 - p)) / n;
                        dy[i] = g[0] * ((1.0 - p).ln() - p.ln()) / n;
                    }
                    accumulate(&mut grads, *pred, &dp);
                    accumulate(&mut grads, *target, &dy);
                }
            }
        }

        for (id, slot) in grads.iter_mut().enumerate() {
            if self.nodes[id].requires_grad {
                let g = slot
                    .take()
                    .unwrap_or_else(|| vec![0.0; self.nodes[id].len()]);
                self.nodes[id].grad = Some(g);
            }
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, delta: &[f64]) {
    match &mut grads[id] {
        Some(g) => {
            for (gv, dv) in g.iter_mut().zip(delta) {
                *gv += dv;
            }
        }
        None => grads[id] = Some(delta.to_vec()),
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Row-major (m x k) * (k x n).
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose_raw(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

/// Named trainable tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, data: Vec<f64>, shape: Vec<usize>) -> Result<Self, TensorError> {
        Ok(Param {
            name: name.into(),
            value: Tensor::new(data, shape, true)?,
        })
    }

    pub fn zero_grad(&mut self) {
        self.value.grad = None;
    }
}

/// Adam optimizer with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Param], lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients stored on `params`. Parameters
    /// without a gradient are treated as having zero gradient.
    pub fn step(&mut self, params: &mut [Param]) -> Result<(), TensorError> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (pi, p) in params.iter_mut().enumerate() {
            let zero;
            let g: &[f64] = match &p.value.grad {
                Some(g) => g,
                None => {
                    zero = vec![0.0; p.value.len()];
                    &zero
                }
            };
            for &gv in g {
                if !gv.is_finite() {
                    return Err(TensorError::NonFiniteGradient {
                        name: p.name.clone(),
                    });
                }
            }
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            for i in 0..p.value.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value.data[i] -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) use tests::xorshift as tests_xorshift;
