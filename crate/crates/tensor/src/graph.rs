//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive applied to its variables in execution
//! order, which is also a topological order. [`Graph::backward`] walks the tape
//! once in reverse from a scalar output. Nodes that do not depend on any
//! `requires_grad` leaf are never visited, and [`Graph::stop_gradient`] cuts
//! the dependency explicitly.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::{numel, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub pad: usize,
}

/// Per-channel statistics of one batch-norm application in training mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
    /// Number of values reduced per channel.
    pub count: usize,
}

pub enum BnMode<'a, T> {
    /// Normalize with batch statistics.
    Train { eps: T },
    /// Normalize with fixed running statistics.
    Eval { mean: &'a [T], var: &'a [T], eps: T },
}

enum Op<T> {
    Leaf,
    StopGradient,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    BiasAdd(Var, Var),
    Relu(Var),
    MeanPool(Var),
    Softmax {
        x: Var,
        split: (usize, usize, usize),
    },
    LogSoftmax(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    L2Normalize {
        x: Var,
        split: (usize, usize, usize),
        denom: Vec<T>,
        clamped: Vec<bool>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Gather {
        x: Var,
        indices: Vec<usize>,
    },
    Concat(Vec<Var>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn channel_layout(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match shape.len() {
        2 => Some((shape[0], shape[1], 1)),
        4 => Some((shape[0], shape[1], shape[2] * shape[3])),
        _ => None,
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::StopGradient, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| e * c).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| e + c).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::AddScalar(x), rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(TensorError::shape("transpose", format!("rank {}", s.len())));
        }
        let data = kernels::transpose2d(self.value(x).data(), s[0], s[1]);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![s[1], s[0]], data)?, Op::Transpose(x), rg))
    }

    /// `x: [N, C, H, W]`, `w: [O, C, KH, KW]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, p: ConvParams) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(TensorError::shape("conv2d", format!("input {:?}, weight {:?}", sx, sw)));
        }
        if p.stride == 0 {
            return Err(TensorError::shape("conv2d", "stride must be positive"));
        }
        if sx[2] + 2 * p.pad < sw[2] || sx[3] + 2 * p.pad < sw[3] {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel {:?} larger than padded input {:?}", &sw[2..], &sx[2..]),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(TensorError::shape(
                    "conv2d",
                    format!("bias {:?} for {} output channels", self.shape(b), sw[0]),
                ));
            }
        }
        let geom = ConvGeometry {
            batch: sx[0],
            in_channels: sx[1],
            height: sx[2],
            width: sx[3],
            out_channels: sw[0],
            kernel_h: sw[2],
            kernel_w: sw[3],
            stride: p.stride,
            pad: p.pad,
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let shape = vec![geom.batch, geom.out_channels, geom.out_h(), geom.out_w()];
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(shape, out)?, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Adds a per-channel bias to `[N, C]` or `[N, C, H, W]`.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (_, c, inner) = channel_layout(&s)
            .ok_or_else(|| TensorError::shape("bias_add", format!("input rank {}", s.len())))?;
        if self.shape(b) != [c] {
            return Err(TensorError::shape(
                "bias_add",
                format!("bias {:?} for {} channels", self.shape(b), c),
            ));
        }
        let mut data = self.value(x).data().to_vec();
        let bias = self.value(b).data();
        if inner > 0 {
            for (k, chunk) in data.chunks_mut(inner).enumerate() {
                let add = bias[k % c];
                chunk.iter_mut().for_each(|v| *v = *v + add);
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::new(s, data)?, Op::BiasAdd(x, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| if e > T::zero() { e } else { T::zero() }).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Spatial mean `[N, C, H, W] -> [N, C]`.
    pub fn mean_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(TensorError::shape("mean_pool", format!("input {:?}", s)));
        }
        let plane = s[2] * s[3];
        let inv = T::one() / T::from_f64(plane as f64);
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![s[0], s[1]], data)?, Op::MeanPool(x), rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(TensorError::shape("softmax", format!("axis {} of {:?}", axis, s)));
        }
        let split = kernels::axis_split(&s, axis);
        let data = kernels::softmax_forward(self.value(x).data(), split.0, split.1, split.2);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(s, data)?, Op::Softmax { x, split }, rg))
    }

    /// Log-softmax over the last axis of a rank-2 tensor.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[1] == 0 {
            return Err(TensorError::shape("log_softmax", format!("input {:?}", s)));
        }
        let data = kernels::log_softmax_rows(self.value(x).data(), s[1]);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(s, data)?, Op::LogSoftmax(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).numel() {
            return Err(TensorError::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(x), shape),
            ));
        }
        let value = Tensor::new(shape.to_vec(), self.value(x).data().to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let total = v.data().iter().copied().sum::<T>() / T::from_f64(v.numel().max(1) as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Mean(x), rg)
    }

    /// `x / max(||x||_2, eps)` with the norm taken along `axis`.
    pub fn l2_normalize(&mut self, x: Var, axis: usize, eps: T) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(TensorError::shape("l2_normalize", format!("axis {} of {:?}", axis, s)));
        }
        let split = kernels::axis_split(&s, axis);
        let (outer, len, inner) = split;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); src.len()];
        let mut denom = Vec::with_capacity(outer * inner);
        let mut clamped = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let norm = (0..len).map(|j| src[at(j)] * src[at(j)]).sum::<T>().sqrt();
                let d = if norm > eps { norm } else { eps };
                for j in 0..len {
                    data[at(j)] = src[at(j)] / d;
                }
                denom.push(d);
                clamped.push(norm <= eps);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(s, data)?,
            Op::L2Normalize {
                x,
                split,
                denom,
                clamped,
            },
            rg,
        ))
    }

    /// Per-channel normalization over `[N, C]` or `[N, C, H, W]` followed by
    /// the affine `gamma * xhat + beta`. Training mode also reports the batch
    /// statistics it used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BnStats<T>>)> {
        let s = self.shape(x).to_vec();
        let (n, c, inner) = channel_layout(&s)
            .ok_or_else(|| TensorError::shape("batch_norm", format!("input rank {}", s.len())))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(TensorError::shape(
                "batch_norm",
                format!("affine shapes {:?}/{:?} for {} channels", self.shape(gamma), self.shape(beta), c),
            ));
        }
        let count = n * inner;
        let src = self.value(x).data();
        let (mean, var, eps, train) = match mode {
            BnMode::Train { eps } => {
                if count < 2 {
                    return Err(TensorError::Contract(
                        "batch_norm in training mode needs at least 2 values per channel".into(),
                    ));
                }
                let inv_count = T::one() / T::from_f64(count as f64);
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut acc = T::zero();
                    for i in 0..n {
                        let at = (i * c + ch) * inner;
                        acc = acc + src[at..at + inner].iter().copied().sum::<T>();
                    }
                    let m = acc * inv_count;
                    let mut sq = T::zero();
                    for i in 0..n {
                        let at = (i * c + ch) * inner;
                        sq = sq + src[at..at + inner].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                    }
                    mean[ch] = m;
                    var[ch] = sq * inv_count;
                }
                (mean, var, eps, true)
            }
            BnMode::Eval { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(TensorError::shape("batch_norm", "running statistics length"));
                }
                (mean.to_vec(), var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); src.len()];
        let mut out = vec![T::zero(); src.len()];
        for i in 0..n {
            for ch in 0..c {
                let at = (i * c + ch) * inner;
                for k in at..at + inner {
                    let h = (src[k] - mean[ch]) * inv_std[ch];
                    xhat[k] = h;
                    out[k] = g[ch] * h + b[ch];
                }
            }
        }
        let stats = train.then_some(BnStats {
            mean,
            var,
            count,
        });
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let var_out = self.push(
            Tensor::new(s, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        );
        Ok((var_out, stats))
    }

    /// Picks flat elements of `x` into a tensor of `shape`.
    pub fn gather(&mut self, x: Var, indices: Vec<usize>, shape: &[usize]) -> Result<Var> {
        if numel(shape) != indices.len() {
            return Err(TensorError::shape(
                "gather",
                format!("{} indices for shape {:?}", indices.len(), shape),
            ));
        }
        let src = self.value(x).data();
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(TensorError::shape(
                "gather",
                format!("index {} out of {} elements", bad, src.len()),
            ));
        }
        let data = indices.iter().map(|&i| src[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape.to_vec(), data)?, Op::Gather { x, indices }, rg))
    }

    /// Rows `start..end` of a rank-2 tensor.
    pub fn rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start > end || end > s[0] {
            return Err(TensorError::shape("rows", format!("{}..{} of {:?}", start, end, s)));
        }
        let cols = s[1];
        let indices = (start * cols..end * cols).collect();
        self.gather(x, indices, &[end - start, cols])
    }

    /// Concatenation along axis 0.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::shape("concat", "no inputs"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(TensorError::shape("concat", format!("{:?} vs trailing {:?}", s, tail)));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Reverse pass from a scalar. Every `requires_grad` leaf receives a
    /// gradient, zero when the output does not depend on it.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = &self.nodes[output.0];
        if out.value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![T::one()]);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                    return None;
                }
                let data = g.unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                Some(Tensor::new(node.value.shape().to_vec(), data).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.iter_mut().zip(delta) {
                    *e = *e + d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d = g.iter().zip(val(*b)).map(|(&g, &y)| g * y).collect();
                    self.accumulate(grads, *a, d);
                }
                if self.rg(*b) {
                    let d = g.iter().zip(val(*a)).map(|(&g, &x)| g * x).collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, g.iter().map(|&v| v * *c).collect());
            }
            Op::AddScalar(x) | Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    // dA = G [m, n] * B^T
                    let mut d = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g, n as isize, 1, val(*b), 1, n as isize, T::zero(), &mut d, k as isize, 1);
                    self.accumulate(grads, *a, d);
                }
                if self.rg(*b) {
                    // dB = A^T * G
                    let mut d = vec![T::zero(); k * n];
                    T::gemm(k, m, n, val(*a), 1, k as isize, g, n as isize, 1, T::zero(), &mut d, n as isize, 1);
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Transpose(x) => {
                let s = self.shape(*x);
                // g has shape [s1, s0]
                self.accumulate(grads, *x, kernels::transpose2d(g, s[1], s[0]));
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    geom,
                    val(*x),
                    val(*w),
                    g,
                    self.rg(*x),
                    self.rg(*w),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::BiasAdd(x, b) => {
                self.accumulate(grads, *x, g.to_vec());
                if self.rg(*b) {
                    let (n, c, inner) = channel_layout(self.shape(*x)).expect("checked");
                    let mut d = vec![T::zero(); c];
                    for i in 0..n {
                        for (ch, acc) in d.iter_mut().enumerate() {
                            let at = (i * c + ch) * inner;
                            *acc = *acc + g[at..at + inner].iter().copied().sum::<T>();
                        }
                    }
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Relu(x) => {
                let d = g
                    .iter()
                    .zip(val(*x))
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::MeanPool(x) => {
                let s = self.shape(*x);
                let plane = s[2] * s[3];
                let inv = T::one() / T::from_f64(plane as f64);
                let mut d = Vec::with_capacity(plane * g.len());
                for &gv in g {
                    d.extend(std::iter::repeat_n(gv * inv, plane));
                }
                self.accumulate(grads, *x, d);
            }
            Op::Softmax { x, split } => {
                let (outer, len, inner) = *split;
                let y = node.value.data();
                let mut d = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot = (0..len).map(|j| g[at(j)] * y[at(j)]).sum::<T>();
                        for j in 0..len {
                            d[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::LogSoftmax(x) => {
                let cols = self.shape(*x)[1];
                let y = node.value.data();
                let mut d = vec![T::zero(); y.len()];
                for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                    let total = gr.iter().copied().sum::<T>();
                    for j in 0..cols {
                        dr[j] = gr[j] - yr[j].exp() * total;
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                let v = g[0] / T::from_f64(n.max(1) as f64);
                self.accumulate(grads, *x, vec![v; n]);
            }
            Op::L2Normalize {
                x,
                split,
                denom,
                clamped,
            } => {
                let (outer, len, inner) = *split;
                let y = node.value.data();
                let mut d = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let r = o * inner + i;
                        let at = |j: usize| (o * len + j) * inner + i;
                        if clamped[r] {
                            for j in 0..len {
                                d[at(j)] = g[at(j)] / denom[r];
                            }
                        } else {
                            let dot = (0..len).map(|j| g[at(j)] * y[at(j)]).sum::<T>();
                            for j in 0..len {
                                d[at(j)] = (g[at(j)] - y[at(j)] * dot) / denom[r];
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, c, inner) = channel_layout(self.shape(*x)).expect("checked");
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let at = (i * c + ch) * inner;
                        for k in at..at + inner {
                            sum_g[ch] = sum_g[ch] + g[k];
                            sum_gx[ch] = sum_gx[ch] + g[k] * xhat[k];
                        }
                    }
                }
                if self.rg(*x) {
                    let gam = val(*gamma);
                    let count = T::from_f64((n * inner) as f64);
                    let mut d = vec![T::zero(); g.len()];
                    for i in 0..n {
                        for ch in 0..c {
                            let at = (i * c + ch) * inner;
                            let scale = gam[ch] * inv_std[ch];
                            for k in at..at + inner {
                                d[k] = if *train {
                                    scale * (g[k] - sum_g[ch] / count - xhat[k] * sum_gx[ch] / count)
                                } else {
                                    scale * g[k]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *x, d);
                }
                self.accumulate(grads, *gamma, sum_gx);
                self.accumulate(grads, *beta, sum_g);
            }
            Op::Gather { x, indices } => {
                if self.rg(*x) {
                    let mut d = vec![T::zero(); self.nodes[x.0].value.numel()];
                    for (&i, &gv) in indices.iter().zip(g) {
                        d[i] = d[i] + gv;
                    }
                    self.accumulate(grads, *x, d);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.numel();
                    self.accumulate(grads, p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
        }
    }
}
