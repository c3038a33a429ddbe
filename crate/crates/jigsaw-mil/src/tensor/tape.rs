use super::{sigmoid, softplus, Result, Scalar, Tensor, TensorError};

/// Index of a node on a [`Tape`].
pub type NodeId = usize;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    ScalarMul(NodeId, f64),
    AddBias(NodeId, NodeId),
    Unary(NodeId, UnaryKind),
    RowSoftmax(NodeId),
    LayerNorm(NodeId, NodeId, NodeId),
    ChannelNorm(NodeId, NodeId, NodeId),
    Conv2d(NodeId, NodeId),
    DepthwiseConv2d(NodeId, NodeId),
    MeanRows(NodeId),
    ColMax(NodeId),
    Reshape(NodeId),
    Concat(NodeId, NodeId),
    Gather(NodeId, Vec<usize>),
    Sum(NodeId),
    Mean(NodeId),
    SqNorm(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Tanh,
    Relu,
    Sigmoid,
    Log,
    Exp,
    Softplus,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
    grad: Option<Vec<T>>,
}

/// A per-pass expression graph. Operations are evaluated eagerly as they are
/// recorded, so node order is already topological; `backward` walks it in
/// reverse, visiting each node exactly once.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
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

    /// Bind a value as a leaf. Only leaves with `requires_grad` receive
    /// gradients after `backward`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    /// Gradient of a leaf after `backward`; `None` when the leaf does not
    /// require gradients or no gradient flowed into it.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id].grad.as_deref()
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Vec<T>> {
        self.nodes[id].grad.take()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad, grad: None });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    fn data(&self, id: NodeId) -> &[T] {
        self.nodes[id].value.data()
    }

    fn rank2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape(id) {
            [r, c] => Ok((r, c)),
            ref s => Err(TensorError::ShapeMismatch {
                op,
                detail: format!("expected rank-2 tensor, got {s:?}"),
            }),
        }
    }

    fn rank3(&self, id: NodeId, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape(id) {
            [h, w, c] => Ok((h, w, c)),
            ref s => Err(TensorError::ShapeMismatch {
                op,
                detail: format!("expected rank-3 tensor, got {s:?}"),
            }),
        }
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.rank2(a, "matmul")?;
        let (k2, n) = self.rank2(b, "matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("[{m}x{k}] * [{k2}x{n}]"),
            });
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, false);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Matmul(a, b), needs))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.rank2(a, "transpose")?;
        let x = self.data(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), needs))
    }

    fn zip_op(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: name,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let out: Vec<T> =
            self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, op, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scalar_mul(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let cc = T::from_f64(c);
        let out: Vec<T> = self.data(a).iter().map(|&x| x * cc).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::ScalarMul(a, c), needs))
    }

    /// `a[r,c] + bias[c]`, bias broadcast over rows.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.rank2(a, "add_bias")?;
        if self.shape(bias) != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                detail: format!("bias {:?} for [{r}x{c}]", self.shape(bias)),
            });
        }
        let x = self.data(a);
        let b = self.data(bias);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(x[i * c + j] + b[j]);
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::AddBias(a, bias), needs))
    }

    fn unary(&mut self, a: NodeId, kind: UnaryKind) -> Result<NodeId> {
        if kind == UnaryKind::Log {
            if let Some(&bad) = self.data(a).iter().find(|x| **x <= T::zero()) {
                return Err(TensorError::Domain {
                    op: "log",
                    detail: format!("non-positive input {bad}"),
                });
            }
        }
        let out: Vec<T> = self
            .data(a)
            .iter()
            .map(|&x| match kind {
                UnaryKind::Tanh => x.tanh(),
                UnaryKind::Relu => x.max(T::zero()),
                UnaryKind::Sigmoid => sigmoid(x),
                UnaryKind::Log => x.ln(),
                UnaryKind::Exp => x.exp(),
                UnaryKind::Softplus => softplus(x),
            })
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Unary(a, kind), needs))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, UnaryKind::Tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, UnaryKind::Relu)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, UnaryKind::Sigmoid)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, UnaryKind::Log)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, UnaryKind::Exp)
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, UnaryKind::Softplus)
    }

    pub fn row_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.rank2(a, "row_softmax")?;
        let x = self.data(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(row[0], T::max);
            let mut z = T::zero();
            for j in 0..c {
                let e = (row[j] - m).exp();
                out[i * c + j] = e;
                z = z + e;
            }
            for j in 0..c {
                out[i * c + j] = out[i * c + j] / z;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::RowSoftmax(a), needs))
    }

    /// Normalization over the last axis with learnable scale and shift.
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        let c = *shape.last().ok_or(TensorError::ShapeMismatch {
            op: "layer_norm",
            detail: "rank-0 input".into(),
        })?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                detail: format!(
                    "scale {:?} / shift {:?} for last axis {c}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            });
        }
        let rows = self.nodes[a].value.numel() / c;
        let x = self.data(a);
        let g = self.data(gamma);
        let b = self.data(beta);
        let eps = T::from_f64(LN_EPS);
        let inv_c = T::one() / T::from_f64(c as f64);
        let mut out = vec![T::zero(); rows * c];
        for i in 0..rows {
            let row = &x[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() * inv_c;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
            let inv_s = T::one() / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * inv_s * g[j] + b[j];
            }
        }
        let needs = self.needs(a) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm(a, gamma, beta), needs))
    }

    /// Per-channel normalization over all spatial positions of an `[h,w,c]`
    /// grid (batch-of-one behavior), with per-channel scale and shift.
    pub fn channel_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (h, w, c) = self.rank3(a, "channel_norm")?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "channel_norm",
                detail: format!("scale/shift for {c} channels"),
            });
        }
        let p = h * w;
        let x = self.data(a);
        let g = self.data(gamma);
        let b = self.data(beta);
        let eps = T::from_f64(LN_EPS);
        let inv_p = T::one() / T::from_f64(p as f64);
        let mut out = vec![T::zero(); p * c];
        for ch in 0..c {
            let mut mean = T::zero();
            for pos in 0..p {
                mean = mean + x[pos * c + ch];
            }
            mean = mean * inv_p;
            let mut var = T::zero();
            for pos in 0..p {
                let d = x[pos * c + ch] - mean;
                var = var + d * d;
            }
            var = var * inv_p;
            let inv_s = T::one() / (var + eps).sqrt();
            for pos in 0..p {
                out[pos * c + ch] = (x[pos * c + ch] - mean) * inv_s * g[ch] + b[ch];
            }
        }
        let needs = self.needs(a) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(Tensor::new(vec![h, w, c], out)?, Op::ChannelNorm(a, gamma, beta), needs))
    }

    /// Dense 2-D convolution, stride 1, zero padding `k/2` (shape-preserving).
    /// Input `[h,w,c_in]`, weight `[k,k,c_in,c_out]`.
    pub fn conv2d(&mut self, a: NodeId, weight: NodeId) -> Result<NodeId> {
        let (h, w, ci) = self.rank3(a, "conv2d")?;
        let (k, k2, wci, co) = match *self.shape(weight) {
            [k, k2, wci, co] => (k, k2, wci, co),
            ref s => {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("weight must be [k,k,c_in,c_out], got {s:?}"),
                })
            }
        };
        if k != k2 || k % 2 == 0 {
            return Err(TensorError::InvalidArg {
                op: "conv2d",
                detail: format!("kernel must be square and odd, got {k}x{k2}"),
            });
        }
        if wci != ci {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("input has {ci} channels, weight expects {wci}"),
            });
        }
        let cols = im2col(self.data(a), h, w, ci, k);
        let mut out = vec![T::zero(); h * w * co];
        T::gemm(h * w, k * k * ci, co, &cols, false, self.data(weight), false, &mut out, false);
        let needs = self.needs(a) || self.needs(weight);
        Ok(self.push(Tensor::new(vec![h, w, co], out)?, Op::Conv2d(a, weight), needs))
    }

    /// Depthwise 2-D convolution, stride 1, zero padding `k/2`.
    /// Input `[h,w,c]`, weight `[k,k,c]`.
    pub fn depthwise_conv2d(&mut self, a: NodeId, weight: NodeId) -> Result<NodeId> {
        let (h, w, c) = self.rank3(a, "depthwise_conv2d")?;
        let (k, k2, wc) = self.rank3(weight, "depthwise_conv2d")?;
        if k != k2 || k % 2 == 0 {
            return Err(TensorError::InvalidArg {
                op: "depthwise_conv2d",
                detail: format!("kernel must be square and odd, got {k}x{k2}"),
            });
        }
        if wc != c {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_conv2d",
                detail: format!("input has {c} channels, weight expects {wc}"),
            });
        }
        let pad = k / 2;
        let x = self.data(a);
        let kw = self.data(weight);
        let mut out = vec![T::zero(); h * w * c];
        for kh in 0..k {
            for kwi in 0..k {
                let wrow = &kw[(kh * k + kwi) * c..(kh * k + kwi + 1) * c];
                for oh in 0..h {
                    let ih = oh + kh;
                    if ih < pad || ih - pad >= h {
                        continue;
                    }
                    let ih = ih - pad;
                    for ow in 0..w {
                        let iw = ow + kwi;
                        if iw < pad || iw - pad >= w {
                            continue;
                        }
                        let iw = iw - pad;
                        let src = &x[(ih * w + iw) * c..(ih * w + iw + 1) * c];
                        let dst = &mut out[(oh * w + ow) * c..(oh * w + ow + 1) * c];
                        for ch in 0..c {
                            dst[ch] = dst[ch] + src[ch] * wrow[ch];
                        }
                    }
                }
            }
        }
        let needs = self.needs(a) || self.needs(weight);
        Ok(self.push(Tensor::new(vec![h, w, c], out)?, Op::DepthwiseConv2d(a, weight), needs))
    }

    /// Global average pooling over the leading axis: `[r,c] -> [1,c]`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.rank2(a, "mean_rows")?;
        let x = self.data(a);
        let inv_r = T::one() / T::from_f64(r as f64);
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for j in 0..c {
                out[j] = out[j] + x[i * c + j];
            }
        }
        for v in &mut out {
            *v = *v * inv_r;
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(vec![1, c], out)?, Op::MeanRows(a), needs))
    }

    /// Columnwise max over the leading axis: `[r,c] -> [1,c]`.
    /// Gradient routes to the first maximizing row per column.
    pub fn col_max(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.rank2(a, "col_max")?;
        let x = self.data(a);
        let mut out = vec![T::zero(); c];
        for j in 0..c {
            let mut best = x[j];
            for i in 1..r {
                best = best.max(x[i * c + j]);
            }
            out[j] = best;
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(vec![1, c], out)?, Op::ColMax(a), needs))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a].value.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", self.shape(a)),
            });
        }
        let data = self.data(a).to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Reshape(a), needs))
    }

    /// Concatenate along the first axis; trailing extents must agree.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != sb.len() || sa[1..] != sb[1..] {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        let mut data = Vec::with_capacity(self.data(a).len() + self.data(b).len());
        data.extend_from_slice(self.data(a));
        data.extend_from_slice(self.data(b));
        let mut shape = sa;
        shape[0] += sb[0];
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(a, b), needs))
    }

    /// Gather rows by index list; duplicate indices are allowed and their
    /// gradients accumulate.
    pub fn gather(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        let r = shape[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(TensorError::InvalidArg {
                op: "gather",
                detail: format!("index {bad} out of range for {r} rows"),
            });
        }
        if indices.is_empty() {
            return Err(TensorError::InvalidArg { op: "gather", detail: "empty index list".into() });
        }
        let stride: usize = shape[1..].iter().product();
        let x = self.data(a);
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(&x[i * stride..(i + 1) * stride]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Gather(a, indices.to_vec()), needs))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s: T = self.data(a).iter().copied().sum();
        let needs = self.needs(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), needs))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.nodes[a].value.numel();
        let s: T = self.data(a).iter().copied().sum();
        let needs = self.needs(a);
        Ok(self.push(Tensor::scalar(s / T::from_f64(n as f64)), Op::Mean(a), needs))
    }

    /// Squared L2 norm of all elements, as a scalar.
    pub fn sq_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let s: T = self.data(a).iter().map(|&x| x * x).sum();
        let needs = self.needs(a);
        Ok(self.push(Tensor::scalar(s), Op::SqNorm(a), needs))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar root; the root's adjoint is seeded with 1.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.nodes[root].value.numel() != 1 {
            return Err(TensorError::NonScalarRoot(self.shape(root).to_vec()));
        }
        self.backward_seeded(&[(root, vec![T::one()])])
    }

    /// Reverse pass from externally supplied cotangents (vector-Jacobian
    /// products). Used to stitch branch tapes together through a loss tape.
    pub fn backward_seeded(&mut self, seeds: &[(NodeId, Vec<T>)]) -> Result<()> {
        for (id, seed) in seeds {
            if seed.len() != self.nodes[*id].value.numel() {
                return Err(TensorError::ShapeMismatch {
                    op: "backward",
                    detail: format!("seed length {} for node {id}", seed.len()),
                });
            }
            self.accum(*id, seed);
        }
        for id in (0..self.nodes.len()).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            // Leaves keep their accumulated gradient; everything else is
            // consumed while propagating.
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[id].grad.take() else { continue };
            self.propagate(id, &g);
        }
        Ok(())
    }

    fn accum(&mut self, id: NodeId, contribution: &[T]) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let node = &mut self.nodes[id];
        match &mut node.grad {
            Some(buf) => {
                for (b, &c) in buf.iter_mut().zip(contribution) {
                    *b = *b + c;
                }
            }
            None => node.grad = Some(contribution.to_vec()),
        }
    }

    /// Take a node's gradient buffer (zeros if absent) for in-place
    /// accumulation, to be returned via `put_grad`.
    fn take_buf(&mut self, id: NodeId) -> Vec<T> {
        let numel = self.nodes[id].value.numel();
        self.nodes[id].grad.take().unwrap_or_else(|| vec![T::zero(); numel])
    }

    fn put_grad(&mut self, id: NodeId, buf: Vec<T>) {
        self.nodes[id].grad = Some(buf);
    }

    fn propagate(&mut self, id: NodeId, g: &[T]) {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.needs(a) {
                    let mut ga = self.take_buf(a);
                    T::gemm(m, n, k, g, false, self.data(b), true, &mut ga, true);
                    self.put_grad(a, ga);
                }
                if self.needs(b) {
                    let mut gb = self.take_buf(b);
                    T::gemm(k, m, n, self.data(a), true, g, false, &mut gb, true);
                    self.put_grad(b, gb);
                }
            }
            Op::Transpose(a) => {
                if self.needs(a) {
                    let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
                    let mut ga = self.take_buf(a);
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = ga[i * n + j] + g[j * m + i];
                        }
                    }
                    self.put_grad(a, ga);
                }
            }
            Op::Add(a, b) => {
                self.accum(a, g);
                self.accum(b, g);
            }
            Op::Sub(a, b) => {
                self.accum(a, g);
                if self.needs(b) {
                    let mut gb = self.take_buf(b);
                    for (d, &s) in gb.iter_mut().zip(g) {
                        *d = *d - s;
                    }
                    self.put_grad(b, gb);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let mut ga = self.take_buf(a);
                    for ((d, &s), &y) in ga.iter_mut().zip(g).zip(self.nodes[b].value.data()) {
                        *d = *d + s * y;
                    }
                    self.put_grad(a, ga);
                }
                if self.needs(b) {
                    let mut gb = self.take_buf(b);
                    for ((d, &s), &x) in gb.iter_mut().zip(g).zip(self.nodes[a].value.data()) {
                        *d = *d + s * x;
                    }
                    self.put_grad(b, gb);
                }
            }
            Op::ScalarMul(a, c) => {
                if self.needs(a) {
                    let cc = T::from_f64(c);
                    let mut ga = self.take_buf(a);
                    for (d, &s) in ga.iter_mut().zip(g) {
                        *d = *d + s * cc;
                    }
                    self.put_grad(a, ga);
                }
            }
            Op::AddBias(a, bias) => {
                self.accum(a, g);
                if self.needs(bias) {
                    let c = self.shape(bias)[0];
                    let r = self.shape(a)[0];
                    let mut gb = self.take_buf(bias);
                    for i in 0..r {
                        for j in 0..c {
                            gb[j] = gb[j] + g[i * c + j];
                        }
                    }
                    self.put_grad(bias, gb);
                }
            }
            Op::Unary(a, kind) => {
                if self.needs(a) {
                    let mut ga = self.take_buf(a);
                    {
                        let x = self.nodes[a].value.data();
                        let y = self.nodes[id].value.data();
                        for i in 0..ga.len() {
                            let d = match kind {
                                UnaryKind::Tanh => T::one() - y[i] * y[i],
                                UnaryKind::Relu => {
                                    if x[i] > T::zero() {
                                        T::one()
                                    } else {
                                        T::zero()
                                    }
                                }
                                UnaryKind::Sigmoid => y[i] * (T::one() - y[i]),
                                UnaryKind::Log => T::one() / x[i],
                                UnaryKind::Exp => y[i],
                                UnaryKind::Softplus => sigmoid(x[i]),
                            };
                            ga[i] = ga[i] + g[i] * d;
                        }
                    }
                    self.put_grad(a, ga);
                }
            }
            Op::RowSoftmax(a) => {
                if self.needs(a) {
                    let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
                    let mut ga = self.take_buf(a);
                    {
                        let y = self.nodes[id].value.data();
                        for i in 0..r {
                            let yr = &y[i * c..(i + 1) * c];
                            let gr = &g[i * c..(i + 1) * c];
                            let dot: T = yr.iter().zip(gr).map(|(&yy, &gg)| yy * gg).sum();
                            for j in 0..c {
                                ga[i * c + j] = ga[i * c + j] + yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                    self.put_grad(a, ga);
                }
            }
            Op::LayerNorm(a, gamma, beta) => {
                let c = *self.shape(a).last().unwrap();
                let rows = self.nodes[a].value.numel() / c;
                self.norm_backward(id, a, gamma, beta, g, rows, c, |row, j, _c| row * _c + j);
                let _ = rows;
            }
            Op::ChannelNorm(a, gamma, beta) => {
                let (h, w, c) = (self.shape(a)[0], self.shape(a)[1], self.shape(a)[2]);
                // "row" = channel, elements strided by c across h*w positions
                self.norm_backward(id, a, gamma, beta, g, c, h * w, |ch, pos, c_all| {
                    pos * c_all + ch
                });
                let _ = (h, w);
            }
            Op::Conv2d(a, weight) => {
                let (h, w, ci) = (self.shape(a)[0], self.shape(a)[1], self.shape(a)[2]);
                let k = self.shape(weight)[0];
                let co = self.shape(weight)[3];
                let cols = im2col(self.data(a), h, w, ci, k);
                if self.needs(weight) {
                    let mut gw = self.take_buf(weight);
                    T::gemm(k * k * ci, h * w, co, &cols, true, g, false, &mut gw, true);
                    self.put_grad(weight, gw);
                }
                if self.needs(a) {
                    let mut dcols = vec![T::zero(); h * w * k * k * ci];
                    T::gemm(h * w, co, k * k * ci, g, false, self.data(weight), true, &mut dcols, false);
                    let mut ga = self.take_buf(a);
                    col2im_add(&dcols, &mut ga, h, w, ci, k);
                    self.put_grad(a, ga);
                }
            }
            Op::DepthwiseConv2d(a, weight) => {
                let (h, w, c) = (self.shape(a)[0], self.shape(a)[1], self.shape(a)[2]);
                let k = self.shape(weight)[0];
                let pad = k / 2;
                if self.needs(weight) {
                    let mut gw = self.take_buf(weight);
                    {
                        let x = self.nodes[a].value.data();
                        for kh in 0..k {
                            for kwi in 0..k {
                                let wslot = &mut gw[(kh * k + kwi) * c..(kh * k + kwi + 1) * c];
                                for oh in 0..h {
                                    let ih = oh + kh;
                                    if ih < pad || ih - pad >= h {
                                        continue;
                                    }
                                    let ih = ih - pad;
                                    for ow in 0..w {
                                        let iw = ow + kwi;
                                        if iw < pad || iw - pad >= w {
                                            continue;
                                        }
                                        let iw = iw - pad;
                                        let src = &x[(ih * w + iw) * c..];
                                        let gout = &g[(oh * w + ow) * c..];
                                        for ch in 0..c {
                                            wslot[ch] = wslot[ch] + gout[ch] * src[ch];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.put_grad(weight, gw);
                }
                if self.needs(a) {
                    let mut ga = self.take_buf(a);
                    {
                        let kw = self.nodes[weight].value.data();
                        for kh in 0..k {
                            for kwi in 0..k {
                                let wrow = &kw[(kh * k + kwi) * c..(kh * k + kwi + 1) * c];
                                for oh in 0..h {
                                    let ih = oh + kh;
                                    if ih < pad || ih - pad >= h {
                                        continue;
                                    }
                                    let ih = ih - pad;
                                    for ow in 0..w {
                                        let iw = ow + kwi;
                                        if iw < pad || iw - pad >= w {
                                            continue;
                                        }
                                        let iw = iw - pad;
                                        let dst = &mut ga[(ih * w + iw) * c..(ih * w + iw + 1) * c];
                                        let gout = &g[(oh * w + ow) * c..(oh * w + ow + 1) * c];
                                        for ch in 0..c {
                                            dst[ch] = dst[ch] + gout[ch] * wrow[ch];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.put_grad(a, ga);
                }
            }
            Op::MeanRows(a) => {
                if self.needs(a) {
                    let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
                    let inv_r = T::one() / T::from_f64(r as f64);
                    let mut ga = self.take_buf(a);
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = ga[i * c + j] + g[j] * inv_r;
                        }
                    }
                    self.put_grad(a, ga);
                }
            }
            Op::ColMax(a) => {
                if self.needs(a) {
                    let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
                    let mut ga = self.take_buf(a);
                    {
                        let x = self.nodes[a].value.data();
                        for j in 0..c {
                            let mut arg = 0;
                            let mut best = x[j];
                            for i in 1..r {
                                if x[i * c + j] > best {
                                    best = x[i * c + j];
                                    arg = i;
                                }
                            }
                            ga[arg * c + j] = ga[arg * c + j] + g[j];
                        }
                    }
                    self.put_grad(a, ga);
                }
            }
            Op::Reshape(a) => {
                self.accum(a, g);
            }
            Op::Concat(a, b) => {
                let na = self.nodes[a].value.numel();
                self.accum(a, &g[..na]);
                self.accum(b, &g[na..]);
            }
            Op::Gather(a, indices) => {
                if self.needs(a) {
                    let stride = self.nodes[a].value.row_stride();
                    let mut ga = self.take_buf(a);
                    for (pos, &i) in indices.iter().enumerate() {
                        let src = &g[pos * stride..(pos + 1) * stride];
                        let dst = &mut ga[i * stride..(i + 1) * stride];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                    self.put_grad(a, ga);
                }
            }
            Op::Sum(a) => {
                if self.needs(a) {
                    let mut ga = self.take_buf(a);
                    for d in ga.iter_mut() {
                        *d = *d + g[0];
                    }
                    self.put_grad(a, ga);
                }
            }
            Op::Mean(a) => {
                if self.needs(a) {
                    let s = g[0] / T::from_f64(self.nodes[a].value.numel() as f64);
                    let mut ga = self.take_buf(a);
                    for d in ga.iter_mut() {
                        *d = *d + s;
                    }
                    self.put_grad(a, ga);
                }
            }
            Op::SqNorm(a) => {
                if self.needs(a) {
                    let two_g = g[0] + g[0];
                    let mut ga = self.take_buf(a);
                    {
                        let x = self.nodes[a].value.data();
                        for (d, &v) in ga.iter_mut().zip(x) {
                            *d = *d + two_g * v;
                        }
                    }
                    self.put_grad(a, ga);
                }
            }
        }
    }

    /// Shared adjoint for layer/channel normalization. `rows` units of `c`
    /// elements each, addressed through `at(row, j, c)`.
    #[allow(clippy::too_many_arguments)]
    fn norm_backward(
        &mut self,
        id: NodeId,
        a: NodeId,
        gamma: NodeId,
        beta: NodeId,
        g: &[T],
        rows: usize,
        c: usize,
        at: impl Fn(usize, usize, usize) -> usize,
    ) {
        let c_all = *self.shape(a).last().unwrap();
        let eps = T::from_f64(LN_EPS);
        let inv_c = T::one() / T::from_f64(c as f64);
        let need_a = self.needs(a);
        let need_g = self.needs(gamma);
        let need_b = self.needs(beta);
        let mut ga = if need_a { self.take_buf(a) } else { Vec::new() };
        let mut gg = if need_g { self.take_buf(gamma) } else { Vec::new() };
        let mut gb = if need_b { self.take_buf(beta) } else { Vec::new() };
        {
            let x = self.nodes[a].value.data();
            let gam = self.nodes[gamma].value.data();
            // For layer_norm, gamma[j] pairs with unit element j; for
            // channel_norm the "row" index is the channel, so gamma[row].
            let gamma_of = |row: usize, j: usize| -> T {
                if c_all == c {
                    gam[j] // layer_norm: units are rows, params span last axis
                } else {
                    gam[row] // channel_norm: units are channels
                }
            };
            for row in 0..rows {
                let mut mean = T::zero();
                for j in 0..c {
                    mean = mean + x[at(row, j, c_all)];
                }
                mean = mean * inv_c;
                let mut var = T::zero();
                for j in 0..c {
                    let d = x[at(row, j, c_all)] - mean;
                    var = var + d * d;
                }
                var = var * inv_c;
                let inv_s = T::one() / (var + eps).sqrt();

                let mut mean_h = T::zero();
                let mut mean_hx = T::zero();
                for j in 0..c {
                    let idx = at(row, j, c_all);
                    let xhat = (x[idx] - mean) * inv_s;
                    let h = g[idx] * gamma_of(row, j);
                    mean_h = mean_h + h;
                    mean_hx = mean_hx + h * xhat;
                    if need_g {
                        let slot = if c_all == c { j } else { row };
                        gg[slot] = gg[slot] + g[idx] * xhat;
                    }
                    if need_b {
                        let slot = if c_all == c { j } else { row };
                        gb[slot] = gb[slot] + g[idx];
                    }
                }
                mean_h = mean_h * inv_c;
                mean_hx = mean_hx * inv_c;
                if need_a {
                    for j in 0..c {
                        let idx = at(row, j, c_all);
                        let xhat = (x[idx] - mean) * inv_s;
                        let h = g[idx] * gamma_of(row, j);
                        ga[idx] = ga[idx] + (h - mean_h - xhat * mean_hx) * inv_s;
                    }
                }
            }
        }
        let _ = id;
        if need_a {
            self.put_grad(a, ga);
        }
        if need_g {
            self.put_grad(gamma, gg);
        }
        if need_b {
            self.put_grad(beta, gb);
        }
    }
}

/// Unfold `[h,w,c]` into `[h*w, k*k*c]` patch rows with zero padding `k/2`.
fn im2col<T: Scalar>(x: &[T], h: usize, w: usize, c: usize, k: usize) -> Vec<T> {
    let pad = k / 2;
    let mut cols = vec![T::zero(); h * w * k * k * c];
    let patch = k * k * c;
    for oh in 0..h {
        for ow in 0..w {
            let base = (oh * w + ow) * patch;
            for kh in 0..k {
                let ih = oh + kh;
                if ih < pad || ih - pad >= h {
                    continue;
                }
                let ih = ih - pad;
                for kw in 0..k {
                    let iw = ow + kw;
                    if iw < pad || iw - pad >= w {
                        continue;
                    }
                    let iw = iw - pad;
                    let dst = base + (kh * k + kw) * c;
                    let src = (ih * w + iw) * c;
                    cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    cols
}

/// Scatter-add the adjoint of `im2col` back onto the `[h,w,c]` input.
fn col2im_add<T: Scalar>(dcols: &[T], dx: &mut [T], h: usize, w: usize, c: usize, k: usize) {
    let pad = k / 2;
    let patch = k * k * c;
    for oh in 0..h {
        for ow in 0..w {
            let base = (oh * w + ow) * patch;
            for kh in 0..k {
                let ih = oh + kh;
                if ih < pad || ih - pad >= h {
                    continue;
                }
                let ih = ih - pad;
                for kw in 0..k {
                    let iw = ow + kw;
                    if iw < pad || iw - pad >= w {
                        continue;
                    }
                    let iw = iw - pad;
                    let src = base + (kh * k + kw) * c;
                    let dst = (ih * w + iw) * c;
                    for ch in 0..c {
                        dx[dst + ch] = dx[dst + ch] + dcols[src + ch];
                    }
                }
            }
        }
    }
}
