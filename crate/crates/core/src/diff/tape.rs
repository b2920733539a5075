//! Reverse-mode computation record.
//!
//! Every op appends one node holding its forward value and enough saved
//! state for the backward rule. Node indices are a topological order by
//! construction, so [`Tape::backward`] is a single reverse sweep.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Real, Tensor};
use super::{ParamId, ParamSet, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Sparse row mixing matrix: `out[i] = Σ_j w_ij · x[j]`.
///
/// Used for neighbour means and attribute-token means, where a dense
/// adjacency matmul would waste most of its work on zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct RowMix<T = f32> {
    in_rows: usize,
    rows: Vec<Vec<(usize, T)>>,
}

impl<T: Real> RowMix<T> {
    pub fn new(in_rows: usize, rows: Vec<Vec<(usize, T)>>) -> Self {
        for r in &rows {
            for &(j, _) in r {
                assert!(j < in_rows, "row mix index {j} out of range {in_rows}");
            }
        }
        Self { in_rows, rows }
    }

    /// Uniform mean over each index list; empty lists give a zero row.
    pub fn mean_of(in_rows: usize, groups: &[Vec<usize>]) -> Self {
        let rows = groups
            .iter()
            .map(|g| {
                if g.is_empty() {
                    Vec::new()
                } else {
                    let w = T::one() / T::from_usize(g.len()).unwrap();
                    g.iter().map(|&j| (j, w)).collect()
                }
            })
            .collect();
        Self::new(in_rows, rows)
    }

    pub fn out_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn in_rows(&self) -> usize {
        self.in_rows
    }

    pub fn cast<U: Real>(&self) -> RowMix<U> {
        RowMix {
            in_rows: self.in_rows,
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|&(j, w)| (j, U::from_f64_lossy(w.to_f64().unwrap()))).collect())
                .collect(),
        }
    }
}

enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Transpose(Var),
    MeanRows(Var),
    Sum(Var),
    Gather(Var, Vec<usize>),
    Mix(Var, Arc<RowMix<T>>),
    OuterSum(Var, Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Sqrt(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm { x: Var, inv_std: Vec<T> },
    Dropout { x: Var, mask: Vec<T> },
    Cosine { a: Var, b: Var, norm_a: T, norm_b: T },
    Pick(Var, usize, usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A single-threaded computation record.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    grad_leaves: Vec<Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
///
/// Parameters never reached by the loss simply have no entry, which reads
/// back as a zero gradient.
#[derive(Clone, Debug)]
pub struct Gradients<T: Real = f32> {
    params: Vec<Option<Tensor<T>>>,
    leaves: HashMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn empty(param_count: usize) -> Self {
        Self { params: vec![None; param_count], leaves: HashMap::new() }
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.index()).and_then(Option::as_ref)
    }

    /// Gradient of a leaf created with [`Tape::leaf`] and `requires_grad`.
    pub fn leaf(&self, var: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&var)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Sums another gradient set into this one (batch reduction).
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if self.params.len() < other.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(t),
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.params.iter_mut().flatten() {
            g.scale_assign(factor);
        }
    }

    /// Global L2 norm over all parameter gradients.
    pub fn norm(&self) -> T {
        self.params
            .iter()
            .flatten()
            .flat_map(|g| g.data().iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().flatten().all(Tensor::all_finite)
    }
}

fn check_same(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(), TensorError> {
    if a == b {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch { op, left: a, right: b })
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new(), grad_leaves: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFiniteValue { op: op_name });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; gradients are not tracked.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Input leaf whose gradient is reported through [`Gradients::leaf`].
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: requires_grad });
        let v = Var(self.nodes.len() - 1);
        if requires_grad {
            self.grad_leaves.push(v);
        }
        v
    }

    /// Loads a parameter onto the tape (once per tape).
    pub fn param(&mut self, store: &ParamSet<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: store.get(id).clone(), op: Op::Param, needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(TensorError::ShapeMismatch { op: "matmul", left: (m, k), right: (k2, n) });
        }
        let mut out = Tensor::zeros(m, n);
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, out.data_mut(), false);
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", out, Op::MatMul(a, b), ng)
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var, TensorError> {
        check_same(name, self.shape(a), self.shape(b))?;
        let (r, c) = self.shape(a);
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(name, Tensor::new(r, c, data), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(&mut self, name: &'static str, a: Var, row: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var, TensorError> {
        let (r, c) = self.shape(a);
        let rs = self.shape(row);
        if rs != (1, c) {
            return Err(TensorError::ShapeMismatch { op: name, left: (r, c), right: rs });
        }
        let bias = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for i in 0..r {
            for (x, &b) in out.row_mut(i).iter_mut().zip(&bias) {
                *x = f(*x, b);
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(name, out, op, ng)
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        self.row_broadcast("add_row", a, row, |x, b| x + b, Op::AddRow(a, row))
    }

    /// Multiplies every row of an `m×n` matrix elementwise by a `1×n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        self.row_broadcast("mul_row", a, row, |x, b| x * b, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x * factor);
        let ng = self.needs(a);
        self.push("scale", out, Op::Scale(a, factor), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x + c);
        let ng = self.needs(a);
        self.push("add_scalar", out, Op::AddScalar(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = parts.first().map(|&p| self.shape(p).0).ok_or(TensorError::InvalidArgument {
            op: "concat_cols",
            msg: "no inputs".into(),
        })?;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(TensorError::ShapeMismatch { op: "concat_cols", left: self.shape(parts[0]), right: self.shape(p) });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push("concat_cols", Tensor::new(rows, cols, data), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = parts.first().map(|&p| self.shape(p).1).ok_or(TensorError::InvalidArgument {
            op: "concat_rows",
            msg: "no inputs".into(),
        })?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(TensorError::ShapeMismatch { op: "concat_rows", left: self.shape(parts[0]), right: self.shape(p) });
            }
            rows += self.shape(p).0;
            data.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push("concat_rows", Tensor::new(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (r, c) = self.shape(a);
        if start > end || end > r {
            return Err(TensorError::InvalidArgument { op: "slice_rows", msg: format!("{start}..{end} of {r} rows") });
        }
        let data = self.value(a).data()[start * c..end * c].to_vec();
        let ng = self.needs(a);
        self.push("slice_rows", Tensor::new(end - start, c, data), Op::SliceRows(a, start), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).transpose();
        let ng = self.needs(a);
        self.push("transpose", out, Op::Transpose(a), ng)
    }

    /// Column-wise mean over rows: `m×n → 1×n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, c) = self.shape(a);
        if r == 0 {
            return Err(TensorError::InvalidArgument { op: "mean_rows", msg: "zero rows".into() });
        }
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &x) in out.iter_mut().zip(self.value(a).row(i)) {
                *o = *o + x;
            }
        }
        let inv = T::one() / T::from_usize(r).unwrap();
        out.iter_mut().for_each(|o| *o = *o * inv);
        let ng = self.needs(a);
        self.push("mean_rows", Tensor::row_vector(out), Op::MeanRows(a), ng)
    }

    /// Sum of all entries, `1×1`.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).data().iter().copied().sum();
        let ng = self.needs(a);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Row lookup (embedding tables).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = self.shape(table);
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(TensorError::InvalidArgument { op: "gather_rows", msg: format!("row {i} of {r}") });
            }
            data.extend_from_slice(self.value(table).row(i));
        }
        let ng = self.needs(table);
        self.push("gather_rows", Tensor::new(indices.len(), c, data), Op::Gather(table, indices.to_vec()), ng)
    }

    pub fn row_mix(&mut self, x: Var, mix: Arc<RowMix<T>>) -> Result<Var, TensorError> {
        let (r, c) = self.shape(x);
        if r != mix.in_rows {
            return Err(TensorError::ShapeMismatch { op: "row_mix", left: (r, c), right: (mix.out_rows(), mix.in_rows) });
        }
        let mut out = Tensor::zeros(mix.out_rows(), c);
        let xv = self.value(x);
        for (i, terms) in mix.rows.iter().enumerate() {
            let orow = out.row_mut(i);
            for &(j, w) in terms {
                for (o, &v) in orow.iter_mut().zip(xv.row(j)) {
                    *o = *o + w * v;
                }
            }
        }
        let ng = self.needs(x);
        self.push("row_mix", out, Op::Mix(x, mix), ng)
    }

    /// `out[i][j] = col[i] + row[j]` for an `m×1` column and a `1×n` row.
    pub fn outer_sum(&mut self, col: Var, row: Var) -> Result<Var, TensorError> {
        let (m, c1) = self.shape(col);
        let (r1, n) = self.shape(row);
        if c1 != 1 || r1 != 1 {
            return Err(TensorError::ShapeMismatch { op: "outer_sum", left: (m, c1), right: (r1, n) });
        }
        let cv = self.value(col).data().to_vec();
        let rv = self.value(row).data().to_vec();
        let mut data = Vec::with_capacity(m * n);
        for &a in &cv {
            data.extend(rv.iter().map(|&b| a + b));
        }
        let ng = self.needs(col) || self.needs(row);
        self.push("outer_sum", Tensor::new(m, n, data), Op::OuterSum(col, row), ng)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var, TensorError> {
        let out = self.value(a).map(f);
        let ng = self.needs(a);
        self.push(name, out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("relu", a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var, TensorError> {
        self.unary("leaky_relu", a, |x| if x > T::zero() { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("sigmoid", a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("tanh", a, T::tanh, Op::Tanh(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, TensorError> {
        if self.value(a).data().iter().any(|&x| x < T::zero()) {
            return Err(TensorError::NonFiniteValue { op: "sqrt" });
        }
        self.unary("sqrt", a, T::sqrt, Op::Sqrt(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        let ng = self.needs(a);
        self.push("softmax_rows", out, Op::SoftmaxRows(a), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|x| *x = *x - lse);
        }
        let ng = self.needs(a);
        self.push("log_softmax_rows", out, Op::LogSoftmaxRows(a), ng)
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Result<Var, TensorError> {
        let mut out = self.value(a).clone();
        let c = T::from_usize(out.cols()).unwrap();
        let mut inv_std = Vec::with_capacity(out.rows());
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let mean = row.iter().copied().sum::<T>() / c;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / c;
            let is = T::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * is);
            inv_std.push(is);
        }
        let ng = self.needs(a);
        self.push("layer_norm", out, Op::LayerNorm { x: a, inv_std }, ng)
    }

    /// Inverted dropout. In eval mode (`train == false`) this is the identity
    /// and records nothing.
    pub fn dropout(&mut self, a: Var, p: T, train: bool, seed: u64) -> Result<Var, TensorError> {
        if p < T::zero() || p >= T::one() {
            return Err(TensorError::InvalidArgument { op: "dropout", msg: format!("p = {p}") });
        }
        if !train || p == T::zero() {
            return Ok(a);
        }
        let keep = T::one() / (T::one() - p);
        let pf = p.to_f64().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < pf { T::zero() } else { keep })
            .collect();
        let data = self.value(a).data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let (r, c) = self.shape(a);
        let ng = self.needs(a);
        self.push("dropout", Tensor::new(r, c, data), Op::Dropout { x: a, mask }, ng)
    }

    /// Cosine similarity of two `1×n` vectors, `1×1`. A zero vector yields 0.
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        check_same("cosine_sim", self.shape(a), self.shape(b))?;
        if self.shape(a).0 != 1 {
            return Err(TensorError::InvalidArgument { op: "cosine_sim", msg: "expects row vectors".into() });
        }
        let av = self.value(a);
        let bv = self.value(b);
        let dot: T = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).sum();
        let norm_a = av.l2_norm();
        let norm_b = bv.l2_norm();
        let denom = norm_a * norm_b;
        let c = if denom > T::zero() { dot / denom } else { T::zero() };
        let ng = self.needs(a) || self.needs(b);
        self.push("cosine_sim", Tensor::scalar(c), Op::Cosine { a, b, norm_a, norm_b }, ng)
    }

    /// Single entry as a `1×1` tensor.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Result<Var, TensorError> {
        let (rows, cols) = self.shape(a);
        if r >= rows || c >= cols {
            return Err(TensorError::InvalidArgument { op: "pick", msg: format!("({r},{c}) of {rows}x{cols}") });
        }
        let v = self.value(a).get(r, c);
        let ng = self.needs(a);
        self.push("pick", Tensor::scalar(v), Op::Pick(a, r, c), ng)
    }

    /// Propagates gradients from a `1×1` loss and releases the record.
    pub fn backward(self, loss: Var, param_count: usize) -> Result<Gradients<T>, TensorError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            // Keep leaf/param gradients for collection below.
            if matches!(node.op, Op::Leaf | Op::Param) {
                grads[idx] = Some(g);
            }
        }

        let mut out = Gradients::empty(param_count);
        for (&id, &v) in &self.params {
            if let Some(g) = grads[v.0].take() {
                if id.index() >= out.params.len() {
                    out.params.resize(id.index() + 1, None);
                }
                out.params[id.index()] = Some(g);
            }
        }
        for &v in &self.grad_leaves {
            if let Some(g) = grads[v.0].take() {
                out.leaves.insert(v, g);
            }
        }
        Ok(out)
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).shape();
                let n = val(*b).cols();
                if self.needs(*a) {
                    let mut ga = Tensor::zeros(m, k);
                    T::gemm(m, n, k, g.data(), false, val(*b).data(), true, ga.data_mut(), false);
                    acc(*a, ga);
                }
                if self.needs(*b) {
                    let mut gb = Tensor::zeros(k, n);
                    T::gemm(k, m, n, val(*a).data(), true, g.data(), false, gb.data_mut(), false);
                    acc(*b, gb);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, zip(g, val(*b), |x, y| x * y));
                acc(*b, zip(g, val(*a), |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, col_sums(g));
            }
            Op::MulRow(a, row) => {
                let r = val(*row).data();
                let mut ga = g.clone();
                for i in 0..ga.rows() {
                    for (x, &w) in ga.row_mut(i).iter_mut().zip(r) {
                        *x = *x * w;
                    }
                }
                acc(*a, ga);
                acc(*row, col_sums(&zip(g, val(*a), |x, y| x * y)));
            }
            Op::Scale(a, f) => acc(*a, g.map(|x| x * *f)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    let mut gp = Tensor::zeros(r, c);
                    for i in 0..r {
                        gp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + c]);
                    }
                    offset += c;
                    acc(p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    acc(p, Tensor::new(r, c, g.data()[offset * c..(offset + r) * c].to_vec()));
                    offset += r;
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*a, ga);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::MeanRows(a) => {
                let (r, c) = val(*a).shape();
                let inv = T::one() / T::from_usize(r).unwrap();
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    for (x, &gv) in ga.row_mut(i).iter_mut().zip(g.data()) {
                        *x = gv * inv;
                    }
                }
                acc(*a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Tensor::filled(r, c, g.item()));
            }
            Op::Gather(table, indices) => {
                let (r, c) = val(*table).shape();
                let mut gt = Tensor::zeros(r, c);
                for (k, &i) in indices.iter().enumerate() {
                    for (x, &gv) in gt.row_mut(i).iter_mut().zip(g.row(k)) {
                        *x = *x + gv;
                    }
                }
                acc(*table, gt);
            }
            Op::Mix(x, mix) => {
                let c = g.cols();
                let mut gx = Tensor::zeros(mix.in_rows, c);
                for (i, terms) in mix.rows.iter().enumerate() {
                    for &(j, w) in terms {
                        for (o, &gv) in gx.row_mut(j).iter_mut().zip(g.row(i)) {
                            *o = *o + w * gv;
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::OuterSum(col, row) => {
                let (m, n) = g.shape();
                let mut gc = Tensor::zeros(m, 1);
                let mut gr = Tensor::zeros(1, n);
                for i in 0..m {
                    for j in 0..n {
                        let v = g.get(i, j);
                        gc.data_mut()[i] = gc.data()[i] + v;
                        gr.data_mut()[j] = gr.data()[j] + v;
                    }
                }
                acc(*col, gc);
                acc(*row, gr);
            }
            Op::Relu(a) => acc(*a, zip(g, val(*a), |gv, x| if x > T::zero() { gv } else { T::zero() })),
            Op::LeakyRelu(a, slope) => {
                acc(*a, zip(g, val(*a), |gv, x| if x > T::zero() { gv } else { gv * *slope }))
            }
            Op::Sigmoid(a) => acc(*a, zip(g, y, |gv, s| gv * s * (T::one() - s))),
            Op::Tanh(a) => acc(*a, zip(g, y, |gv, t| gv * (T::one() - t * t))),
            Op::Sqrt(a) => {
                let two = T::one() + T::one();
                acc(*a, zip(g, y, |gv, s| if s > T::zero() { gv / (two * s) } else { T::zero() }))
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Tensor::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for ((o, &p), &q) in ga.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *o = p * (q - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = Tensor::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let total: T = gr.iter().copied().sum();
                    for ((o, &ly), &q) in ga.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *o = q - ly.exp() * total;
                    }
                }
                acc(*a, ga);
            }
            Op::LayerNorm { x, inv_std } => {
                let c = T::from_usize(g.cols()).unwrap();
                let mut gx = Tensor::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let xh = y.row(i);
                    let gr = g.row(i);
                    let mean_g = gr.iter().copied().sum::<T>() / c;
                    let mean_gx = gr.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / c;
                    for ((o, &gv), &h) in gx.row_mut(i).iter_mut().zip(gr).zip(xh) {
                        *o = inv_std[i] * (gv - mean_g - h * mean_gx);
                    }
                }
                acc(*x, gx);
            }
            Op::Dropout { x, mask } => {
                let (r, c) = g.shape();
                acc(*x, Tensor::new(r, c, g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect()));
            }
            Op::Cosine { a, b, norm_a, norm_b } => {
                let denom = *norm_a * *norm_b;
                if denom > T::zero() {
                    let c = y.item();
                    let gv = g.item();
                    let av = val(*a);
                    let bv = val(*b);
                    let na2 = *norm_a * *norm_a;
                    let nb2 = *norm_b * *norm_b;
                    acc(*a, zip(bv, av, |bb, aa| gv * (bb / denom - c * aa / na2)));
                    acc(*b, zip(av, bv, |aa, bb| gv * (aa / denom - c * bb / nb2)));
                }
            }
            Op::Pick(a, r, c) => {
                let (rows, cols) = val(*a).shape();
                let mut ga = Tensor::zeros(rows, cols);
                ga.set(*r, *c, g.item());
                acc(*a, ga);
            }
        }
    }
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let (r, c) = a.shape();
    Tensor::new(r, c, a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

fn col_sums<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let mut out = vec![T::zero(); g.cols()];
    for i in 0..g.rows() {
        for (o, &v) in out.iter_mut().zip(g.row(i)) {
            *o = *o + v;
        }
    }
    Tensor::row_vector(out)
}

/// Numerically stable in-place softmax of one row.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}
