//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Values are computed
//! eagerly; [`Tape::backward`] walks the records in reverse and accumulates
//! exact analytic gradients for every node that depends on a trainable leaf.
//! Tapes are discarded after each step.

use std::rc::Rc;

use super::error::NumericError;
use super::scalar::Scalar;
use super::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    MulScalar(Var, Var),
    Concat(Vec<Var>, usize),
    Slice { src: Var, axis: usize, start: usize },
    Reshape(Var),
    GatherRows(Var, Rc<[usize]>),
    GatherElements(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<[usize]>),
    SegmentSoftmax(Var, Rc<[usize]>),
    Softmax(Var, usize),
    MaskedSoftmax(Var),
    LogSoftmax(Var),
    Tanh(Var),
    LeakyRelu(Var, T),
    Elu(Var, T),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    MaxPool {
        src: Var,
        argmax: Vec<usize>,
    },
    Mean(Var, usize),
    SumAll(Var),
    L2Normalize {
        src: Var,
        norms: Vec<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the differentiated output w.r.t. `var`; `None` when no
    /// gradient path reaches it.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Iteration lanes of a rank-1 or rank-2 tensor along `axis`:
/// (lane count, lane length, start offset of lane `l`, element stride).
fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize, usize) {
    match (shape.len(), axis) {
        (2, 1) => (shape[0], shape[1], shape[1], 1),
        (2, 0) => (shape[1], shape[0], 1, shape[1]),
        _ => (1, shape.iter().product(), 0, 1),
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> NumericError {
    NumericError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn as_matrix_shape(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        2 => (shape[0], shape[1]),
        1 => (1, shape[0]),
        _ => (0, 0),
    }
}

fn matmul_raw<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

fn transpose_raw<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t)
        + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x);
    (y, dy)
}

/// A recorded forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` cut off from the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(mismatch("transpose", s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let data = transpose_raw(self.value(a).data(), r, c);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![c, r], data)?, Op::Transpose(a), rg))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, NumericError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op_name, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, c) = as_matrix_shape(ta.shape());
        if tb.len() != c {
            return Err(mismatch("add_row", ta.shape(), tb.shape()));
        }
        let mut data = ta.data().to_vec();
        for i in 0..r {
            for (x, &y) in data[i * c..(i + 1) * c].iter_mut().zip(tb.data()) {
                *x = *x + y;
            }
        }
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow(a, b), rg))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, NumericError> {
        let (ta, tc) = (self.value(a), self.value(col));
        let (r, c) = as_matrix_shape(ta.shape());
        if tc.len() != r {
            return Err(mismatch("mul_col", ta.shape(), tc.shape()));
        }
        let mut data = ta.data().to_vec();
        for i in 0..r {
            let s = tc.data()[i];
            for x in &mut data[i * c..(i + 1) * c] {
                *x = *x * s;
            }
        }
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a, col]);
        Ok(self.push(Tensor::new(shape, data)?, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Multiplies every element of `a` by the single-element `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, NumericError> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.len() != 1 {
            return Err(mismatch("mul_scalar", ta.shape(), ts.shape()));
        }
        let k = ts.item();
        let data = ta.data().iter().map(|&x| x * k).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a, s]);
        Ok(self.push(Tensor::new(shape, data)?, Op::MulScalar(a, s), rg))
    }

    /// Concatenation along `axis` (0 = rows, 1 = columns). Rank-1 inputs are
    /// joined end to end.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumericError> {
        let first = *parts.first().ok_or(NumericError::ShapeMismatch {
            op: "concat",
            left: vec![],
            right: vec![],
        })?;
        let rank = self.shape(first).len();
        let value = if rank == 1 {
            let mut data = Vec::new();
            for &p in parts {
                if self.shape(p).len() != 1 {
                    return Err(mismatch("concat", self.shape(first), self.shape(p)));
                }
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::vector(data)
        } else if axis == 0 {
            let cols = self.shape(first)[1];
            let mut data = Vec::new();
            let mut rows = 0;
            for &p in parts {
                let s = self.shape(p);
                if s.len() != 2 || s[1] != cols {
                    return Err(mismatch("concat", self.shape(first), s));
                }
                rows += s[0];
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::new(vec![rows, cols], data)?
        } else {
            let rows = self.shape(first)[0];
            let mut total = 0;
            for &p in parts {
                let s = self.shape(p);
                if s.len() != 2 || s[0] != rows {
                    return Err(mismatch("concat", self.shape(first), s));
                }
                total += s[1];
            }
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor::new(vec![rows, total], data)?
        };
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(
        &mut self,
        a: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, NumericError> {
        let t = self.value(a);
        let s = t.shape().to_vec();
        let value = match (s.len(), axis) {
            (1, _) => {
                if start + len > s[0] {
                    return Err(mismatch("slice", &s, &[start, len]));
                }
                Tensor::vector(t.data()[start..start + len].to_vec())
            }
            (2, 0) => {
                if start + len > s[0] {
                    return Err(mismatch("slice", &s, &[start, len]));
                }
                Tensor::new(
                    vec![len, s[1]],
                    t.data()[start * s[1]..(start + len) * s[1]].to_vec(),
                )?
            }
            (2, 1) => {
                if start + len > s[1] {
                    return Err(mismatch("slice", &s, &[start, len]));
                }
                let mut data = Vec::with_capacity(s[0] * len);
                for r in 0..s[0] {
                    data.extend_from_slice(&t.row(r)[start..start + len]);
                }
                Tensor::new(vec![s[0], len], data)?
            }
            _ => return Err(mismatch("slice", &s, &[axis])),
        };
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Slice { src: a, axis, start }, rg))
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>, NumericError> {
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.slice(a, axis, start, len)?);
            start += len;
        }
        Ok(out)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericError> {
        let value = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Rows of `a` selected by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var, NumericError> {
        let t = self.value(a);
        let (r, c) = as_matrix_shape(t.shape());
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= r {
                return Err(NumericError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: r,
                });
            }
            data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(vec![idx.len(), c], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::GatherRows(a, idx), rg))
    }

    /// Picks `a[t, idx[t]]` from each row, giving a rank-1 tensor.
    pub fn gather_elements(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var, NumericError> {
        let t = self.value(a);
        let (r, c) = as_matrix_shape(t.shape());
        if idx.len() != r {
            return Err(mismatch("gather_elements", t.shape(), &[idx.len()]));
        }
        let mut data = Vec::with_capacity(r);
        for (row, &j) in idx.iter().enumerate() {
            if j >= c {
                return Err(NumericError::IndexOutOfRange {
                    op: "gather_elements",
                    index: j,
                    len: c,
                });
            }
            data.push(t.data()[row * c + j]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::vector(data), Op::GatherElements(a, idx), rg))
    }

    fn check_offsets(&self, op: &'static str, rows: usize, offsets: &[usize]) -> Result<(), NumericError> {
        let ok = offsets.first() == Some(&0)
            && offsets.last() == Some(&rows)
            && offsets.windows(2).all(|w| w[0] <= w[1]);
        if ok {
            Ok(())
        } else {
            Err(mismatch(op, &[rows], &[offsets.len()]))
        }
    }

    /// Sums consecutive row segments: output row `s` is the sum of rows
    /// `offsets[s]..offsets[s+1]`.
    pub fn segment_sum(&mut self, a: Var, offsets: Rc<[usize]>) -> Result<Var, NumericError> {
        let t = self.value(a);
        let (r, c) = as_matrix_shape(t.shape());
        self.check_offsets("segment_sum", r, &offsets)?;
        let segs = offsets.len() - 1;
        let mut data = vec![T::zero(); segs * c];
        for s in 0..segs {
            let out = &mut data[s * c..(s + 1) * c];
            for e in offsets[s]..offsets[s + 1] {
                for (o, &x) in out.iter_mut().zip(&t.data()[e * c..(e + 1) * c]) {
                    *o = *o + x;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(vec![segs, c], data)?,
            Op::SegmentSum(a, offsets),
            rg,
        ))
    }

    /// Softmax within each segment of a flat score list.
    pub fn segment_softmax(&mut self, a: Var, offsets: Rc<[usize]>) -> Result<Var, NumericError> {
        let t = self.value(a);
        let n = t.len();
        self.check_offsets("segment_softmax", n, &offsets)?;
        let mut data = t.data().to_vec();
        for w in offsets.windows(2) {
            softmax_in_place(&mut data[w[0]..w[1]]);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SegmentSoftmax(a, offsets), rg))
    }

    /// Softmax along `axis` (rank-1 tensors use the whole vector).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumericError> {
        let t = self.value(a);
        if axis > 1 || (t.rank() == 1 && axis != 0) {
            return Err(mismatch("softmax", t.shape(), &[axis]));
        }
        let (n_lanes, len, lstride, step) = lanes(t.shape(), axis);
        let mut data = t.data().to_vec();
        let mut buf = vec![T::zero(); len];
        for l in 0..n_lanes {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = data[l * lstride + i * step];
            }
            softmax_in_place(&mut buf);
            for (i, &b) in buf.iter().enumerate() {
                data[l * lstride + i * step] = b;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Softmax(a, axis), rg))
    }

    /// Row-wise softmax over the entries whose mask is `true`; masked entries
    /// are exactly zero and a fully masked row is all zeros.
    pub fn masked_softmax(&mut self, a: Var, mask: Rc<[bool]>) -> Result<Var, NumericError> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return Err(mismatch("masked_softmax", t.shape(), &[mask.len()]));
        }
        let (r, c) = as_matrix_shape(t.shape());
        let mut data = vec![T::zero(); t.len()];
        for i in 0..r {
            let row = &t.data()[i * c..(i + 1) * c];
            let m = &mask[i * c..(i + 1) * c];
            let mut max = T::neg_infinity();
            for (&x, &keep) in row.iter().zip(m) {
                if keep && x > max {
                    max = x;
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let mut sum = T::zero();
            for j in 0..c {
                if m[j] {
                    let e = (row[j] - max).exp();
                    data[i * c + j] = e;
                    sum = sum + e;
                }
            }
            for j in 0..c {
                if m[j] {
                    data[i * c + j] = data[i * c + j] / sum;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MaskedSoftmax(a), rg))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = as_matrix_shape(t.shape());
        let mut data = t.data().to_vec();
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for &x in row.iter() {
                sum = sum + (x - max).exp();
            }
            let lse = max + sum.ln();
            for x in row.iter_mut() {
                *x = *x - lse;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, T::tanh, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.map(
            a,
            move |x| if x > T::zero() { x } else { x * slope },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn elu(&mut self, a: Var, alpha: T) -> Var {
        self.map(
            a,
            move |x| {
                if x > T::zero() {
                    x
                } else {
                    alpha * (x.exp() - T::one())
                }
            },
            Op::Elu(a, alpha),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, |x| gelu_parts(x).0, Op::Gelu(a))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var, NumericError> {
        let t = self.value(x);
        let (r, c) = as_matrix_shape(t.shape());
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.len() != c || b.len() != c {
            return Err(mismatch("layer_norm", t.shape(), g.shape()));
        }
        let n = T::from_usize(c).expect("usize to scalar");
        let mut xhat = vec![T::zero(); t.len()];
        let mut inv_std = vec![T::zero(); r];
        let mut out = vec![T::zero(); t.len()];
        for i in 0..r {
            let row = &t.data()[i * c..(i + 1) * c];
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / n;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// `x W + b` with `W` of shape (in, out).
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericError> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Maximum along `axis`; ties resolve to the first maximal entry.
    pub fn max_pool(&mut self, a: Var, axis: usize) -> Result<Var, NumericError> {
        let t = self.value(a);
        if t.rank() != 2 || axis > 1 {
            return Err(mismatch("max_pool", t.shape(), &[axis]));
        }
        let (n_lanes, len, lstride, step) = lanes(t.shape(), axis);
        let mut data = Vec::with_capacity(n_lanes);
        let mut argmax = Vec::with_capacity(n_lanes);
        for l in 0..n_lanes {
            let mut best = 0;
            let mut bv = t.data()[l * lstride];
            for i in 1..len {
                let v = t.data()[l * lstride + i * step];
                if v > bv {
                    bv = v;
                    best = i;
                }
            }
            data.push(bv);
            argmax.push(l * lstride + best * step);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::vector(data), Op::MaxPool { src: a, argmax }, rg))
    }

    /// Mean along `axis`; a rank-1 input reduces to a single element.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var, NumericError> {
        let t = self.value(a);
        if axis > 1 || (t.rank() == 1 && axis != 0) {
            return Err(mismatch("mean", t.shape(), &[axis]));
        }
        let (n_lanes, len, lstride, step) = lanes(t.shape(), axis);
        let n = T::from_usize(len).expect("usize to scalar");
        let data = (0..n_lanes)
            .map(|l| {
                let mut s = T::zero();
                for i in 0..len {
                    s = s + t.data()[l * lstride + i * step];
                }
                s / n
            })
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::vector(data), Op::Mean(a, axis), rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(T::zero(), |s, &v| s + v);
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).len()).expect("usize to scalar");
        let s = self.sum_all(a);
        self.scale(s, T::one() / n)
    }

    /// Row-wise L2 normalization; an all-zero row stays zero.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = as_matrix_shape(t.shape());
        let mut data = t.data().to_vec();
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            let n = row.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
            norms.push(n);
            if n > T::zero() {
                for x in row.iter_mut() {
                    *x = *x / n;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::L2Normalize { src: a, norms }, rg)
    }

    /// Cosine similarity of two equally shaped tensors, as a single element.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("cosine_similarity", self.shape(a), self.shape(b)));
        }
        let len = self.value(a).len();
        let a1 = self.reshape(a, &[len])?;
        let b1 = self.reshape(b, &[len])?;
        let na = self.l2_normalize(a1);
        let nb = self.l2_normalize(b1);
        let prod = self.mul(na, nb)?;
        Ok(self.sum_all(prod))
    }

    /// Reverse pass from the single-element `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, NumericError> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(NumericError::NotScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::filled(out.shape(), T::one()));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn like(&self, v: Var, data: Vec<T>) -> Tensor<T> {
        Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient shape")
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k) = (ta.shape()[0], ta.shape()[1]);
                let m = tb.shape()[1];
                if self.requires_grad(*a) {
                    let bt = transpose_raw(tb.data(), k, m);
                    let da = matmul_raw(gd, &bt, n, m, k);
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.requires_grad(*b) {
                    let at = transpose_raw(ta.data(), n, k);
                    let db = matmul_raw(&at, gd, k, n, m);
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::Transpose(a) => {
                let s = y.shape();
                let da = transpose_raw(gd, s[0], s[1]);
                self.accumulate(grads, *a, self.like(*a, da));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, self.like(*a, gd.to_vec()));
                self.accumulate(grads, *b, self.like(*b, gd.to_vec()));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, self.like(*a, gd.to_vec()));
                let neg = gd.iter().map(|&v| -v).collect();
                self.accumulate(grads, *b, self.like(*b, neg));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let da = gd.iter().zip(tb.data()).map(|(&g, &x)| g * x).collect();
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.requires_grad(*b) {
                    let db = gd.iter().zip(ta.data()).map(|(&g, &x)| g * x).collect();
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, self.like(*a, gd.to_vec()));
                if self.requires_grad(*b) {
                    let (r, c) = as_matrix_shape(y.shape());
                    let mut db = vec![T::zero(); c];
                    for i in 0..r {
                        for (d, &v) in db.iter_mut().zip(&gd[i * c..(i + 1) * c]) {
                            *d = *d + v;
                        }
                    }
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                let (r, c) = as_matrix_shape(y.shape());
                if self.requires_grad(*a) {
                    let mut da = gd.to_vec();
                    for i in 0..r {
                        let s = tc.data()[i];
                        for v in &mut da[i * c..(i + 1) * c] {
                            *v = *v * s;
                        }
                    }
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.requires_grad(*col) {
                    let dc = (0..r)
                        .map(|i| {
                            let mut s = T::zero();
                            for j in 0..c {
                                s = s + gd[i * c + j] * ta.data()[i * c + j];
                            }
                            s
                        })
                        .collect();
                    self.accumulate(grads, *col, self.like(*col, dc));
                }
            }
            Op::Scale(a, k) => {
                let da = gd.iter().map(|&v| v * *k).collect();
                self.accumulate(grads, *a, self.like(*a, da));
            }
            Op::MulScalar(a, s) => {
                let (ta, ts) = (self.value(*a), self.value(*s));
                if self.requires_grad(*a) {
                    let k = ts.item();
                    let da = gd.iter().map(|&v| v * k).collect();
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.requires_grad(*s) {
                    let ds = gd
                        .iter()
                        .zip(ta.data())
                        .fold(T::zero(), |acc, (&g, &x)| acc + g * x);
                    self.accumulate(grads, *s, self.like(*s, vec![ds]));
                }
            }
            Op::Concat(parts, axis) => {
                if y.rank() == 1 || *axis == 0 {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        self.accumulate(grads, *p, self.like(*p, gd[off..off + n].to_vec()));
                        off += n;
                    }
                } else {
                    let (r, total) = (y.shape()[0], y.shape()[1]);
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).shape()[1];
                        let mut dp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            dp.extend_from_slice(&gd[i * total + off..i * total + off + w]);
                        }
                        self.accumulate(grads, *p, self.like(*p, dp));
                        off += w;
                    }
                }
            }
            Op::Slice { src, axis, start } => {
                let s = self.value(*src).shape().to_vec();
                let mut da = vec![T::zero(); s.iter().product()];
                match (s.len(), *axis) {
                    (1, _) => da[*start..*start + gd.len()].copy_from_slice(gd),
                    (2, 0) => da[start * s[1]..start * s[1] + gd.len()].copy_from_slice(gd),
                    _ => {
                        let w = y.shape()[1];
                        for r in 0..s[0] {
                            da[r * s[1] + start..r * s[1] + start + w]
                                .copy_from_slice(&gd[r * w..(r + 1) * w]);
                        }
                    }
                }
                self.accumulate(grads, *src, self.like(*src, da));
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, self.like(*a, gd.to_vec()));
            }
            Op::GatherRows(a, idx) => {
                let t = self.value(*a);
                let c = as_matrix_shape(t.shape()).1;
                let mut da = vec![T::zero(); t.len()];
                for (k, &i) in idx.iter().enumerate() {
                    for (d, &v) in da[i * c..(i + 1) * c].iter_mut().zip(&gd[k * c..(k + 1) * c]) {
                        *d = *d + v;
                    }
                }
                self.accumulate(grads, *a, self.like(*a, da));
            }
            Op::GatherElements(a, idx) => {
                let t = self.value(*a);
                let c = as_matrix_shape(t.shape()).1;
                let mut da = vec![T::zero(); t.len()];
                for (row, &j) in idx.iter().enumerate() {
                    da[row * c + j] = da[row * c + j] + gd[row];
                }
                self.accumulate(grads, *a, self.like(*a, da));
            }
            Op::SegmentSum(a, offsets) => {
                let t = self.value(*a);
                let c = as_matrix_shape(t.shape()).1;
                let mut da = vec![T::zero(); t.len()];
                for (s, w) in offsets.windows(2).enumerate() {
                    for e in w[0]..w[1] {
                        da[e * c..(e + 1) * c].copy_from_slice(&gd[s * c..(s + 1) * c]);
                    }
                }
                self.accumulate(grads, *a, self.like(*a, da));
            }
            Op::SegmentSoftmax(a, offsets) => {
                let mut da = vec![T::zero(); y.len()];
                for w in offsets.windows(2) {
                    softmax_backward(&y.data()[w[0]..w[1]], &gd[w[0]..w[1]], &mut da[w[0]..w[1]]);
                }
                self.accumulate(grads, *a, self.like(*a, da));
            }
            Op::Softmax(a, axis) => {
                let (n_lanes, len, lstride, step) = lanes(y.shape(), *axis);
                let mut da = vec![T::zero(); y.len()];
                let mut yb = vec![T::zero(); len];
                let mut gb = vec![T::zero(); len];
                let mut db = vec![T::zero(); len];
                for l in 0..n_lanes {
                    for i in 0..len {
                        yb[i] = y.data()[l * lstride + i * step];
                        gb[i] = gd[l * lstride + i * step];
                    }
                    softmax_backward(&yb, &gb, &mut db);
                    for i in 0..len {
                        da[l * lstride + i * step] = db[i];
                    }
                }
                self.accumulate(grads, *a, self.like(*a, da));
            }
            Op::MaskedSoftmax(a) => {
                // Masked entries have y = 0, so they receive zero gradient.
                let (r, c) = as_matrix_shape(y.shape());
                let mut da = vec![T::zero(); y.len()];
                for i in 0..r {
                    let rng = i * c..(i + 1) * c;
                    softmax_backward(&y.data()[rng.clone()], &gd[rng.clone()], &mut da[rng]);
                }
                self.accumulate(grads, *a, self.like(*a, da));
            }
            Op::LogSoftmax(a) => {
                let (r, c) = as_matrix_shape(y.shape());
                let mut da = vec![T::zero(); y.len()];
                for i in 0..r {
                    let gs = gd[i * c..(i + 1) * c].iter().fold(T::zero(), |s, &v| s + v);
                    for j in 0..c {
                        let k = i * c + j;
                        da[k] = gd[k] - y.data()[k].exp() * gs;
                    }
                }
                self.accumulate(grads, *a, self.like(*a, da));
            }
            Op::Tanh(a) => {
                let da = gd
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &t)| g * (T::one() - t * t))
                    .collect();
                self.accumulate(grads, *a, self.like(*a, da));
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                let da = gd
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &v)| if v > T::zero() { g } else { g * *slope })
                    .collect();
                self.accumulate(grads, *a, self.like(*a, da));
            }
            Op::Elu(a, alpha) => {
                let x = self.value(*a);
                let da = gd
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(&g, (&v, &out))| if v > T::zero() { g } else { g * (out + *alpha) })
                    .collect();
                self.accumulate(grads, *a, self.like(*a, da));
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let da = gd
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &v)| g * gelu_parts(v).1)
                    .collect();
                self.accumulate(grads, *a, self.like(*a, da));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = as_matrix_shape(y.shape());
                let gm = self.value(*gamma).data();
                if self.requires_grad(*gamma) {
                    let mut dg = vec![T::zero(); c];
                    for i in 0..r {
                        for j in 0..c {
                            dg[j] = dg[j] + gd[i * c + j] * xhat[i * c + j];
                        }
                    }
                    self.accumulate(grads, *gamma, self.like(*gamma, dg));
                }
                if self.requires_grad(*beta) {
                    let mut db = vec![T::zero(); c];
                    for i in 0..r {
                        for j in 0..c {
                            db[j] = db[j] + gd[i * c + j];
                        }
                    }
                    self.accumulate(grads, *beta, self.like(*beta, db));
                }
                if self.requires_grad(*x) {
                    let n = T::from_usize(c).expect("usize to scalar");
                    let mut dx = vec![T::zero(); y.len()];
                    for i in 0..r {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..c {
                            let dh = gd[i * c + j] * gm[j];
                            s1 = s1 + dh;
                            s2 = s2 + dh * xhat[i * c + j];
                        }
                        for j in 0..c {
                            let dh = gd[i * c + j] * gm[j];
                            dx[i * c + j] =
                                inv_std[i] / n * (n * dh - s1 - xhat[i * c + j] * s2);
                        }
                    }
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
            }
            Op::MaxPool { src, argmax } => {
                let mut da = vec![T::zero(); self.value(*src).len()];
                for (&pos, &g) in argmax.iter().zip(gd) {
                    da[pos] = da[pos] + g;
                }
                self.accumulate(grads, *src, self.like(*src, da));
            }
            Op::Mean(a, axis) => {
                let t = self.value(*a);
                let (n_lanes, len, lstride, step) = lanes(t.shape(), *axis);
                let n = T::from_usize(len).expect("usize to scalar");
                let mut da = vec![T::zero(); t.len()];
                for l in 0..n_lanes {
                    let v = gd[l] / n;
                    for i in 0..len {
                        da[l * lstride + i * step] = v;
                    }
                }
                self.accumulate(grads, *a, self.like(*a, da));
            }
            Op::SumAll(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, self.like(*a, vec![gd[0]; n]));
            }
            Op::L2Normalize { src, norms } => {
                let (r, c) = as_matrix_shape(y.shape());
                let mut da = vec![T::zero(); y.len()];
                for i in 0..r {
                    let n = norms[i];
                    if n == T::zero() {
                        continue;
                    }
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &gd[i * c..(i + 1) * c];
                    let dot = yr.iter().zip(gr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                    for j in 0..c {
                        da[i * c + j] = (gr[j] - yr[j] * dot) / n;
                    }
                }
                self.accumulate(grads, *src, self.like(*src, da));
            }
        }
    }
}

fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in xs.iter_mut() {
        *x = *x / sum;
    }
}

fn softmax_backward<T: Scalar>(y: &[T], g: &[T], out: &mut [T]) {
    let dot = y.iter().zip(g).fold(T::zero(), |s, (&a, &b)| s + a * b);
    for ((o, &yv), &gv) in out.iter_mut().zip(y).zip(g) {
        *o = yv * (gv - dot);
    }
}
