//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends one node to the [`Tape`]; a node only ever refers
//! to nodes recorded before it, so the tape is a topological order by
//! construction and [`Tape::backward`] is a single reverse sweep.

use crate::error::{contract, Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    /// Position of the producing operation on the tape.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Softmax(Var),
    RowSoftmax(Var),
    Gap(Var),
    ChannelScale { weights: Var, input: Var },
    Conv2d { input: Var, kernel: Var, geom: ConvGeom, cols: Option<Vec<T>> },
    BiasAdd { input: Var, bias: Var },
    Upsample2(Var),
    ConcatChannels(Vec<Var>),
    Row { input: Var, index: usize },
    ConcatRows(Vec<Var>),
    Sum(Var),
    CrossEntropy { logits: Var, labels: Vec<u8>, probs: Vec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::RowSoftmax(_) => "row_softmax",
            Op::Gap(_) => "gap",
            Op::ChannelScale { .. } => "channel_scale",
            Op::Conv2d { .. } => "conv2d",
            Op::BiasAdd { .. } => "bias_add",
            Op::Upsample2(_) => "upsample_nearest",
            Op::ConcatChannels(_) => "concat_channels",
            Op::Row { .. } => "row",
            Op::ConcatRows(_) => "concat_rows",
            Op::Sum(_) => "sum",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Softmax(a)
            | Op::RowSoftmax(a)
            | Op::Gap(a)
            | Op::Upsample2(a)
            | Op::Sum(a) => vec![*a],
            Op::ChannelScale { weights, input } => vec![*weights, *input],
            Op::Conv2d { input, kernel, .. } => vec![*input, *kernel],
            Op::BiasAdd { input, bias } => vec![*input, *bias],
            Op::ConcatChannels(parts) | Op::ConcatRows(parts) => parts.clone(),
            Op::Row { input, .. } => vec![*input],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
    tag: Option<&'static str>,
}

/// Ordered record of executed operations, sufficient to replay adjoints.
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

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None, tag: None });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient on [`backward`](Self::backward).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient populated by the last backward pass that reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    /// Attaches a label to a recorded value so callers can locate it later.
    pub fn tag(&mut self, v: Var, label: &'static str) -> Var {
        self.nodes[v.0].tag = Some(label);
        v
    }

    /// Every tagged value, in recording order.
    pub fn tagged(&self) -> Vec<(Var, &'static str)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| n.tag.map(|t| (Var(i), t))).collect()
    }

    pub fn find_tag(&self, label: &str) -> Option<Var> {
        self.tagged().into_iter().find(|(_, t)| *t == label).map(|(v, _)| v)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let op = match op {
            Op::Conv2d { input, kernel, geom, .. } if !self.nodes[kernel.0].requires_grad => {
                Op::Conv2d { input, kernel, geom, cols: None }
            }
            op => op,
        };
        self.nodes.push(Node { value, op, requires_grad, grad: None, tag: None });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    // ---------------------------------------------------------------- ops

    /// Matrix product of two rank-2 values.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(contract!("matmul of [{m}x{k}] by [{k2}x{n}]: inner dimensions differ"));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        Ok(self.push(t, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(contract!("{what}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let t = self.value(a).map(|x| x * s);
        Ok(self.push(t, Op::Scale(a, s)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        Ok(self.push(t, Op::Relu(a)))
    }

    /// Softmax of a rank-1 value, computed with max-subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.rank() != 1 {
            return Err(contract!("softmax expects rank 1, got shape {:?}", v.shape()));
        }
        v.ensure_finite("softmax input")?;
        let mut out = vec![T::zero(); v.len()];
        kernels::softmax_into(v.data(), &mut out);
        let t = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(t, Op::Softmax(a)))
    }

    /// Independent softmax over every row of a rank-2 value.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        let v = self.value(a);
        v.ensure_finite("row_softmax input")?;
        let mut out = vec![T::zero(); r * c];
        for (src, dst) in v.data().chunks(c).zip(out.chunks_mut(c)) {
            kernels::softmax_into(src, dst);
        }
        Ok(self.push(Tensor::new([r, c], out)?, Op::RowSoftmax(a)))
    }

    /// Global average pooling: row means of a `[c×d]` matrix.
    pub fn gap(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        let inv = T::one() / T::of(c as f64);
        let data = self.value(a).data().chunks(c).map(|row| row.iter().copied().sum::<T>() * inv).collect();
        Ok(self.push(Tensor::new([r], data)?, Op::Gap(a)))
    }

    /// Scales slice `i` of `input` (along the leading axis) by `weights[i]`.
    pub fn channel_scale(&mut self, weights: Var, input: Var) -> Result<Var> {
        let w = self.value(weights);
        let x = self.value(input);
        if w.rank() != 1 || x.rank() < 1 || x.shape()[0] != w.len() {
            return Err(contract!(
                "channel_scale: weights {:?} do not match leading axis of {:?}",
                w.shape(),
                x.shape()
            ));
        }
        let stride = x.len() / w.len();
        let mut out = x.data().to_vec();
        for (chunk, &s) in out.chunks_mut(stride).zip(w.data()) {
            for v in chunk {
                *v *= s;
            }
        }
        let t = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(t, Op::ChannelScale { weights, input }))
    }

    /// 3×3 cross-correlation with zero padding 1.
    ///
    /// `input` is `[cin×h×w]`, `kernel` is `[cout×cin×3×3]`; the output is
    /// `[cout × ceil(h/stride) × ceil(w/stride)]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        if stride != 1 && stride != 2 {
            return Err(contract!("conv2d stride must be 1 or 2, got {stride}"));
        }
        let (cin, h, w) = self.value(input).dims3()?;
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 4 || ks[1] != cin || ks[2] != 3 || ks[3] != 3 {
            return Err(contract!("conv2d: kernel {ks:?} does not fit input [{cin}x{h}x{w}]"));
        }
        if h < 3 || w < 3 {
            return Err(contract!("conv2d needs spatial size >= 3, got {h}x{w}"));
        }
        let cout = ks[0];
        let geom = ConvGeom::new(cin, h, w, stride);
        let cols = kernels::im2col(&geom, self.value(input).data());
        let mut out = vec![T::zero(); cout * geom.cols()];
        kernels::gemm_nn(cout, geom.rows(), geom.cols(), self.value(kernel).data(), &cols, &mut out);
        let t = Tensor::new([cout, geom.ho, geom.wo], out)?;
        Ok(self.push(t, Op::Conv2d { input, kernel, geom, cols: Some(cols) }))
    }

    /// Adds `bias[i]` to every element of slice `i` along the leading axis.
    pub fn bias_add(&mut self, input: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let b = self.value(bias);
        if b.rank() != 1 || x.rank() < 1 || x.shape()[0] != b.len() {
            return Err(contract!("bias_add: bias {:?} does not match {:?}", b.shape(), x.shape()));
        }
        let stride = x.len() / b.len();
        let mut out = x.data().to_vec();
        for (chunk, &s) in out.chunks_mut(stride).zip(b.data()) {
            for v in chunk {
                *v += s;
            }
        }
        let t = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(t, Op::BiasAdd { input, bias }))
    }

    /// Nearest-neighbour upsampling by a factor of two.
    pub fn upsample_nearest(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        let src = self.value(input).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                let srow = &src[ch * h * w + (y / 2) * w..ch * h * w + (y / 2 + 1) * w];
                let drow = &mut out[ch * h2 * w2 + y * w2..ch * h2 * w2 + (y + 1) * w2];
                for (x, d) in drow.iter_mut().enumerate() {
                    *d = srow[x / 2];
                }
            }
        }
        Ok(self.push(Tensor::new([c, h2, w2], out)?, Op::Upsample2(input)))
    }

    /// Concatenates rank-3 values along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| contract!("concat_channels of nothing"))?;
        let (_, h, w) = self.value(first).dims3()?;
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (c, ph, pw) = self.value(p).dims3()?;
            if (ph, pw) != (h, w) {
                return Err(contract!("concat_channels: spatial {ph}x{pw} differs from {h}x{w}"));
            }
            channels += c;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::new([channels, h, w], data)?, Op::ConcatChannels(parts.to_vec())))
    }

    /// Row `index` of a rank-2 value, as a `[1×k]` matrix.
    pub fn row(&mut self, input: Var, index: usize) -> Result<Var> {
        let (r, k) = self.dims2(input)?;
        if index >= r {
            return Err(contract!("row {index} out of range for {r} rows"));
        }
        let data = self.value(input).data()[index * k..(index + 1) * k].to_vec();
        Ok(self.push(Tensor::new([1, k], data)?, Op::Row { input, index }))
    }

    /// Stacks rank-2 values with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| contract!("concat_rows of nothing"))?;
        let (_, k) = self.dims2(first)?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, pk) = self.dims2(p)?;
            if pk != k {
                return Err(contract!("concat_rows: {pk} columns vs {k}"));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::new([rows, k], data)?, Op::ConcatRows(parts.to_vec())))
    }

    /// Sum of all elements, as a rank-0 value.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(a)))
    }

    /// Mean over pixels of `-log softmax(logits)[label]`.
    ///
    /// `logits` is `[c×h×w]`, `labels` holds `h·w` class ids in row-major order.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let (c, h, w) = self.value(logits).dims3()?;
        let np = h * w;
        if labels.len() != np {
            return Err(contract!("cross_entropy: {} labels for a {h}x{w} map", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
            return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
        }
        let x = self.value(logits);
        x.ensure_finite("cross_entropy logits")?;
        let x = x.data();
        let mut probs = vec![T::zero(); c * np];
        let mut total = T::zero();
        for p in 0..np {
            let mut max = T::neg_infinity();
            for k in 0..c {
                max = max.max(x[k * np + p]);
            }
            let mut z = T::zero();
            for k in 0..c {
                let e = (x[k * np + p] - max).exp();
                probs[k * np + p] = e;
                z += e;
            }
            for k in 0..c {
                probs[k * np + p] /= z;
            }
            let l = labels[p] as usize;
            total += max + z.ln() - x[l * np + p];
        }
        let loss = total / T::of(np as f64);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }))
    }

    // ----------------------------------------------------------- backward

    /// Propagates adjoints from a single-element `loss` to every reachable
    /// value that requires a gradient. Gradients accumulate into existing ones.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(contract!("backward needs a scalar loss, got shape {:?}", self.shape(loss)));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            let node = &mut self.nodes[i];
            match node.grad.as_mut() {
                Some(existing) => {
                    for (e, v) in existing.data_mut().iter_mut().zip(&g) {
                        *e += *v;
                    }
                }
                None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| nodes[v.0].value.data();
        macro_rules! slot {
            ($v:expr) => {
                grad_slot(grads, nodes, $v)
            };
        }

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = nodes[a.0].value.dims2().expect("checked in forward");
                let n = g.len() / m;
                if wants(*a) {
                    kernels::gemm_nt(m, n, k, g, val(*b), slot!(*a));
                }
                if wants(*b) {
                    kernels::gemm_tn(k, m, n, val(*a), g, slot!(*b));
                }
            }
            Op::Transpose(a) => {
                if wants(*a) {
                    let (r, c) = nodes[a.0].value.dims2().expect("checked in forward");
                    let ga = slot!(*a);
                    for x in 0..r {
                        for y in 0..c {
                            ga[x * c + y] += g[y * r + x];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if wants(*a) {
                    add_into(slot!(*a), g);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    add_into(slot!(*a), g);
                }
                if wants(*b) {
                    add_into(slot!(*b), g);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = val(*b);
                    for ((o, &gv), &y) in slot!(*a).iter_mut().zip(g).zip(bv) {
                        *o += gv * y;
                    }
                }
                if wants(*b) {
                    let av = val(*a);
                    for ((o, &gv), &x) in slot!(*b).iter_mut().zip(g).zip(av) {
                        *o += gv * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    for (o, &gv) in slot!(*a).iter_mut().zip(g) {
                        *o += gv * *s;
                    }
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let out = nodes[i].value.data();
                    for ((o, &gv), &y) in slot!(*a).iter_mut().zip(g).zip(out) {
                        if y > T::zero() {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if wants(*a) {
                    softmax_adjoint(nodes[i].value.data(), g, slot!(*a));
                }
            }
            Op::RowSoftmax(a) => {
                if wants(*a) {
                    let (_, c) = nodes[i].value.dims2().expect("rank 2");
                    let y = nodes[i].value.data();
                    let ga = slot!(*a);
                    for ((yr, gr), out) in y.chunks(c).zip(g.chunks(c)).zip(ga.chunks_mut(c)) {
                        softmax_adjoint(yr, gr, out);
                    }
                }
            }
            Op::Gap(a) => {
                if wants(*a) {
                    let (_, c) = nodes[a.0].value.dims2().expect("rank 2");
                    let inv = T::one() / T::of(c as f64);
                    for (row, &gv) in slot!(*a).chunks_mut(c).zip(g) {
                        for o in row {
                            *o += gv * inv;
                        }
                    }
                }
            }
            Op::ChannelScale { weights, input } => {
                let w = val(*weights);
                let stride = g.len() / w.len();
                if wants(*weights) {
                    let x = val(*input);
                    let gw = slot!(*weights);
                    for (k, o) in gw.iter_mut().enumerate() {
                        let r = k * stride..(k + 1) * stride;
                        *o += g[r.clone()].iter().zip(&x[r]).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
                if wants(*input) {
                    let gx = slot!(*input);
                    for ((row, grow), &s) in gx.chunks_mut(stride).zip(g.chunks(stride)).zip(w) {
                        for (o, &gv) in row.iter_mut().zip(grow) {
                            *o += gv * s;
                        }
                    }
                }
            }
            Op::Conv2d { input, kernel, geom, cols } => {
                let cout = nodes[kernel.0].value.shape()[0];
                if wants(*kernel) {
                    let cols = cols.as_ref().expect("columns kept when the kernel is trainable");
                    kernels::gemm_nt(cout, geom.cols(), geom.rows(), g, cols, slot!(*kernel));
                }
                if wants(*input) {
                    let mut dcols = vec![T::zero(); geom.rows() * geom.cols()];
                    kernels::gemm_tn(geom.rows(), cout, geom.cols(), val(*kernel), g, &mut dcols);
                    kernels::col2im(geom, &dcols, slot!(*input));
                }
            }
            Op::BiasAdd { input, bias } => {
                if wants(*input) {
                    add_into(slot!(*input), g);
                }
                if wants(*bias) {
                    let gb = slot!(*bias);
                    let stride = g.len() / gb.len();
                    for (o, chunk) in gb.iter_mut().zip(g.chunks(stride)) {
                        *o += chunk.iter().copied().sum::<T>();
                    }
                }
            }
            Op::Upsample2(a) => {
                if wants(*a) {
                    let (c, h, w) = nodes[a.0].value.dims3().expect("rank 3");
                    let w2 = 2 * w;
                    let ga = slot!(*a);
                    for ch in 0..c {
                        for y in 0..2 * h {
                            let grow = &g[ch * 4 * h * w + y * w2..ch * 4 * h * w + (y + 1) * w2];
                            let orow = &mut ga[ch * h * w + (y / 2) * w..ch * h * w + (y / 2 + 1) * w];
                            for (x, &gv) in grow.iter().enumerate() {
                                orow[x / 2] += gv;
                            }
                        }
                    }
                }
            }
            Op::ConcatChannels(parts) | Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = nodes[p.0].value.len();
                    if wants(p) {
                        add_into(slot!(p), &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Row { input, index } => {
                if wants(*input) {
                    let k = g.len();
                    add_into(&mut slot!(*input)[index * k..(index + 1) * k], g);
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    for o in slot!(*a) {
                        *o += g[0];
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if wants(*logits) {
                    let np = labels.len();
                    let scale = g[0] / T::of(np as f64);
                    let gl = slot!(*logits);
                    for (idx, (o, &p)) in gl.iter_mut().zip(probs).enumerate() {
                        let (k, px) = (idx / np, idx % np);
                        let target = if labels[px] as usize == k { T::one() } else { T::zero() };
                        *o += scale * (p - target);
                    }
                }
            }
        }
    }
}

fn grad_slot<'a, T: Scalar>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> &'a mut [T] {
    let n = nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n]).as_mut_slice()
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn softmax_adjoint<T: Scalar>(y: &[T], g: &[T], out: &mut [T]) {
    let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
    for ((o, &yi), &gi) in out.iter_mut().zip(y).zip(g) {
        *o += yi * (gi - dot);
    }
}
