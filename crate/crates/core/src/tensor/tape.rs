//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the tape from the loss towards the leaves.  Nodes only receive
//! gradients when at least one of their inputs requires them.

use rand::Rng;

use super::conv::{self, ConvDims};
use super::element::{gemm, Layout};
use super::{Element, Mode, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    SumAll(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ConcatCols(Var, Var),
    SegmentSum {
        x: Var,
        seg: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Running statistics of a batch-norm layer, updated in train mode.
pub struct RunningStats<'a, T> {
    pub mean: &'a mut [T],
    pub var: &'a mut [T],
}

/// Gradients of one backward pass, retained for leaf nodes only.
#[derive(Debug)]
pub struct Grads<T> {
    leaf: Vec<Option<Vec<T>>>,
}

impl<T: Element> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.leaf.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

fn dims2(t: &[usize], what: &str) -> Result<(usize, usize)> {
    match t {
        [m, n] => Ok((*m, *n)),
        _ => Err(Error::shape(format!("{what} expects a rank-2 tensor, got {t:?}"))),
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it participates in differentiation iff `requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad;
        let mut value = t;
        value.clear_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, data: Vec<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let value = Tensor::new(shape, data)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: operands {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        self.push(name, shape, data, op, rg)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(name, shape, data, op, rg)
    }

    /// `[m,k] · [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.shape(a), "matmul")?;
        let (k2, n) = dims2(self.shape(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul: inner dimensions {k} and {k2} differ")));
        }
        let mut out = vec![T::ZERO; m * n];
        gemm(m, k, n, self.value(a).data(), Layout::Normal, self.value(b).data(), Layout::Normal, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), rg)
    }

    /// Adds a length-`n` bias to every row of an `[m,n]` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "add_bias")?;
        if self.shape(b) != [n] {
            return Err(Error::shape(format!("add_bias: bias {:?} for {n} columns", self.shape(b))));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            for (v, &bb) in row.iter_mut().zip(bias) {
                *v += bb;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        self.push("add_bias", vec![m, n], out, Op::AddBias(x, b), rg)
    }

    /// Fully connected layer: `x · w + b` with `w` stored `[in, out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    /// Multiplies every element by the single value held in `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::shape(format!("scale_by: factor has shape {:?}", self.shape(s))));
        }
        let c = self.value(s).item();
        let data = self.value(x).data().iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(s);
        self.push("scale_by", shape, data, Op::ScaleBy(x, s), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| if v > T::ZERO { v } else { T::ZERO }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, |v| v.exp(), Op::Exp(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push("sum", vec![1], vec![s], Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum_all(x)?;
        self.scale(s, T::ONE / T::from_f64(n as f64))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape(x))));
        }
        let data = self.value(x).data().to_vec();
        let rg = self.rg(x);
        self.push("reshape", shape.to_vec(), data, Op::Reshape(x), rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let dims = ConvDims::for_conv(self.shape(x), self.shape(w), self.shape(b), stride, padding)?;
        let out = conv::conv2d_forward(&dims, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push("conv2d", dims.out_shape(), out, Op::Conv2d { x, w, b, dims }, rg)
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let dims = ConvDims::for_transpose(
            self.shape(x),
            self.shape(w),
            self.shape(b),
            stride,
            padding,
            output_padding,
        )?;
        let out = conv::conv_transpose2d_forward(&dims, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push("conv_transpose2d", dims.out_shape(), out, Op::ConvTranspose2d { x, w, b, dims }, rg)
    }

    /// Per-channel batch normalization of an NCHW tensor.
    ///
    /// Train mode normalizes with the biased batch variance and folds the
    /// unbiased one into the running statistics; eval mode uses the running
    /// statistics as-is.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: RunningStats<'_, T>,
        mode: Mode,
        momentum: T,
        eps: T,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [n, c, h, w] = shape[..] else {
            return Err(Error::shape(format!("batch_norm2d expects NCHW, got {shape:?}")));
        };
        for (v, what) in [(gamma, "gamma"), (beta, "beta")] {
            if self.shape(v) != [c] {
                return Err(Error::shape(format!("batch_norm2d {what} {:?} for {c} channels", self.shape(v))));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(Error::shape("batch_norm2d running statistics have the wrong length"));
        }
        let train = mode == Mode::Train;
        if train && n < 2 {
            return Err(Error::param("batch_norm2d in train mode needs a batch of at least 2"));
        }
        let plane = h * w;
        let count = T::from_f64((n * plane) as f64);
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::ZERO; xs.len()];
        let mut inv_std = vec![T::ZERO; c];
        let mut out = vec![T::ZERO; xs.len()];
        for ch in 0..c {
            let (mean, var) = if train {
                let mut sum = T::ZERO;
                for ni in 0..n {
                    let s = (ni * c + ch) * plane;
                    sum += xs[s..s + plane].iter().copied().sum::<T>();
                }
                let mean = sum / count;
                let mut sq = T::ZERO;
                for ni in 0..n {
                    let s = (ni * c + ch) * plane;
                    for &v in &xs[s..s + plane] {
                        sq += (v - mean) * (v - mean);
                    }
                }
                let var = sq / count;
                let unbiased = sq / (count - T::ONE);
                running.mean[ch] = (T::ONE - momentum) * running.mean[ch] + momentum * mean;
                running.var[ch] = (T::ONE - momentum) * running.var[ch] + momentum * unbiased;
                (mean, var)
            } else {
                (running.mean[ch], running.var[ch])
            };
            let is = T::ONE / (var + eps).sqrt();
            inv_std[ch] = is;
            for ni in 0..n {
                let s = (ni * c + ch) * plane;
                for i in s..s + plane {
                    let xh = (xs[i] - mean) * is;
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            "batch_norm2d",
            shape,
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        )
    }

    /// Inverted dropout: eval mode (or `p == 0`) returns `x` itself.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::param(format!("dropout probability {p} outside [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { T::ZERO } else { keep })
            .collect();
        let data = self.value(x).data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push("dropout", shape, data, Op::Dropout { x, mask }, rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("softmax axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut out = self.value(x).data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut mx = out[idx(0)];
                for j in 1..len {
                    mx = mx.max(out[idx(j)]);
                }
                let mut z = T::ZERO;
                for j in 0..len {
                    let e = (out[idx(j)] - mx).exp();
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[idx(j)] /= z;
                }
            }
        }
        let rg = self.rg(x);
        self.push("softmax", shape, out, Op::Softmax { x, axis }, rg)
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)` rows.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = dims2(self.shape(logits), "cross_entropy")?;
        if targets.len() != m || targets.iter().any(|&t| t >= n) {
            return Err(Error::shape(format!("cross_entropy: {} targets for {m}x{n} logits", targets.len())));
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::ZERO; m * n];
        let mut loss = T::ZERO;
        for r in 0..m {
            let row = &x[r * n..(r + 1) * n];
            let mx = row.iter().copied().fold(row[0], T::max);
            let z: T = row.iter().map(|&v| (v - mx).exp()).sum();
            for j in 0..n {
                probs[r * n + j] = (row[j] - mx).exp() / z;
            }
            loss += z.ln() + mx - row[targets[r]];
        }
        loss /= T::from_f64(m as f64);
        let rg = self.rg(logits);
        self.push(
            "cross_entropy",
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Selects rows of a rank-2 tensor (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::shape(format!("gather_rows: row {bad} out of {m}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.rg(x);
        self.push("gather_rows", vec![idx.len(), n], out, Op::GatherRows { x, idx: idx.to_vec() }, rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, na) = dims2(self.shape(a), "concat_cols")?;
        let (m2, nb) = dims2(self.shape(b), "concat_cols")?;
        if m != m2 {
            return Err(Error::shape(format!("concat_cols: {m} and {m2} rows")));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(m * (na + nb));
        for r in 0..m {
            out.extend_from_slice(&da[r * na..(r + 1) * na]);
            out.extend_from_slice(&db[r * nb..(r + 1) * nb]);
        }
        let rg = self.rg(a) || self.rg(b);
        self.push("concat_cols", vec![m, na + nb], out, Op::ConcatCols(a, b), rg)
    }

    /// Sums rows into `segments` buckets: output row `s` is the sum of all
    /// input rows `i` with `seg[i] == s`, accumulated in row order.
    pub fn segment_sum(&mut self, x: Var, seg: &[usize], segments: usize) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "segment_sum")?;
        if seg.len() != m || seg.iter().any(|&s| s >= segments) {
            return Err(Error::shape("segment_sum: segment ids do not match rows"));
        }
        let src = self.value(x).data();
        let mut out = vec![T::ZERO; segments * n];
        for (i, &s) in seg.iter().enumerate() {
            for (o, &v) in out[s * n..(s + 1) * n].iter_mut().zip(&src[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        let rg = self.rg(x);
        self.push("segment_sum", vec![segments, n], out, Op::SegmentSum { x, seg: seg.to_vec() }, rg)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.rg(loss) {
            grads[loss.0] = Some(vec![T::ONE]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        for g in grads.iter().flatten() {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(Grads { leaf: grads })
    }

    fn accum(&self, grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.shape(*a), "matmul")?;
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    let mut da = vec![T::ZERO; m * k];
                    gemm(m, n, k, g, Layout::Normal, val(*b), Layout::Transposed, &mut da, false);
                    self.accum(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![T::ZERO; k * n];
                    gemm(k, m, n, val(*a), Layout::Transposed, g, Layout::Normal, &mut db, false);
                    self.accum(grads, *b, db);
                }
            }
            Op::AddBias(x, b) => {
                let n = self.shape(*b)[0];
                if self.rg(*b) {
                    let mut db = vec![T::ZERO; n];
                    for row in g.chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accum(grads, *b, db);
                }
                self.accum(grads, *x, g.to_vec());
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.to_vec());
                self.accum(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.to_vec());
                self.accum(grads, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accum(grads, *a, g.iter().zip(val(*b)).map(|(&d, &y)| d * y).collect());
                }
                if self.rg(*b) {
                    self.accum(grads, *b, g.iter().zip(val(*a)).map(|(&d, &y)| d * y).collect());
                }
            }
            Op::Scale(x, c) => self.accum(grads, *x, g.iter().map(|&d| d * *c).collect()),
            Op::ScaleBy(x, s) => {
                let c = val(*s)[0];
                if self.rg(*s) {
                    let ds: T = g.iter().zip(val(*x)).map(|(&d, &v)| d * v).sum();
                    self.accum(grads, *s, vec![ds]);
                }
                self.accum(grads, *x, g.iter().map(|&d| d * c).collect());
            }
            Op::AddScalar(x) | Op::Reshape(x) => self.accum(grads, *x, g.to_vec()),
            Op::Relu(x) => {
                let d = g
                    .iter()
                    .zip(val(*x))
                    .map(|(&d, &v)| if v > T::ZERO { d } else { T::ZERO })
                    .collect();
                self.accum(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                self.accum(grads, *x, g.iter().zip(y).map(|(&d, &s)| d * s * (T::ONE - s)).collect());
            }
            Op::Exp(x) => {
                let y = node.value.data();
                self.accum(grads, *x, g.iter().zip(y).map(|(&d, &e)| d * e).collect());
            }
            Op::SumAll(x) => {
                let n = self.value(*x).numel();
                self.accum(grads, *x, vec![g[0]; n]);
            }
            Op::Conv2d { x, w, b, dims } => {
                let cg = conv::conv2d_backward(dims, val(*x), val(*w), g, [self.rg(*x), self.rg(*w), self.rg(*b)]);
                self.accum_conv(grads, (*x, *w, *b), cg);
            }
            Op::ConvTranspose2d { x, w, b, dims } => {
                let cg = conv::conv_transpose2d_backward(dims, val(*x), val(*w), g, [self.rg(*x), self.rg(*w), self.rg(*b)]);
                self.accum_conv(grads, (*x, *w, *b), cg);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = self.shape(*x);
                let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
                let gm = val(*gamma);
                let mut dgamma = vec![T::ZERO; c];
                let mut dbeta = vec![T::ZERO; c];
                for ni in 0..n {
                    for ch in 0..c {
                        let s = (ni * c + ch) * plane;
                        for i in s..s + plane {
                            dgamma[ch] += g[i] * xhat[i];
                            dbeta[ch] += g[i];
                        }
                    }
                }
                if self.rg(*x) {
                    let mut dx = vec![T::ZERO; g.len()];
                    let count = T::from_f64((n * plane) as f64);
                    for ch in 0..c {
                        let scale = gm[ch] * inv_std[ch];
                        // sum(dxhat) and sum(dxhat * xhat) are gamma * dbeta and gamma * dgamma.
                        let mean_d = dbeta[ch] / count;
                        let mean_dx = dgamma[ch] / count;
                        for ni in 0..n {
                            let s = (ni * c + ch) * plane;
                            for i in s..s + plane {
                                dx[i] = if *train {
                                    scale * (g[i] - mean_d - xhat[i] * mean_dx)
                                } else {
                                    scale * g[i]
                                };
                            }
                        }
                    }
                    self.accum(grads, *x, dx);
                }
                self.accum(grads, *gamma, dgamma);
                self.accum(grads, *beta, dbeta);
            }
            Op::Dropout { x, mask } => {
                self.accum(grads, *x, g.iter().zip(mask).map(|(&d, &m)| d * m).collect());
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let mut dx = vec![T::ZERO; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: T = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            dx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                self.accum(grads, *x, dx);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let (m, n) = dims2(self.shape(*logits), "cross_entropy")?;
                let scale = g[0] / T::from_f64(m as f64);
                let mut dx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    dx[r * n + t] -= scale;
                }
                self.accum(grads, *logits, dx);
            }
            Op::GatherRows { x, idx } => {
                if self.rg(*x) {
                    let (m, n) = dims2(self.shape(*x), "gather_rows")?;
                    let mut dx = vec![T::ZERO; m * n];
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, &v) in dx[i * n..(i + 1) * n].iter_mut().zip(&g[r * n..(r + 1) * n]) {
                            *d += v;
                        }
                    }
                    self.accum(grads, *x, dx);
                }
            }
            Op::ConcatCols(a, b) => {
                let (m, na) = dims2(self.shape(*a), "concat_cols")?;
                let nb = self.shape(*b)[1];
                let w = na + nb;
                if self.rg(*a) {
                    let da = (0..m).flat_map(|r| g[r * w..r * w + na].iter().copied()).collect();
                    self.accum(grads, *a, da);
                }
                if self.rg(*b) {
                    let db = (0..m).flat_map(|r| g[r * w + na..(r + 1) * w].iter().copied()).collect();
                    self.accum(grads, *b, db);
                }
            }
            Op::SegmentSum { x, seg } => {
                if self.rg(*x) {
                    let n = self.shape(*x)[1];
                    let dx = seg.iter().flat_map(|&s| g[s * n..(s + 1) * n].iter().copied()).collect();
                    self.accum(grads, *x, dx);
                }
            }
        }
        Ok(())
    }

    fn accum_conv(&self, grads: &mut [Option<Vec<T>>], (x, w, b): (Var, Var, Var), cg: conv::ConvGrads<T>) {
        if let Some(d) = cg.input {
            self.accum(grads, x, d);
        }
        if let Some(d) = cg.weight {
            self.accum(grads, w, d);
        }
        if let Some(d) = cg.bias {
            self.accum(grads, b, d);
        }
    }
}

pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
