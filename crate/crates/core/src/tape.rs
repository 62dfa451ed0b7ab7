//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Operations execute eagerly and append one node each; [`Tape::backward`]
//! walks the nodes in reverse, accumulating adjoints only through nodes that
//! can reach a gradient-bearing leaf. Parameters live outside the tape as
//! [`Tensor`]s; their gradients are read back with [`Tape::grad`] after the
//! backward pass.

use crate::kernels::batchnorm::{
    batchnorm_eval_backward, batchnorm_eval_forward, batchnorm_train_backward,
    batchnorm_train_forward, BnCache,
};
use crate::kernels::conv3d::{
    conv3d_forward, conv3d_grad_bias, conv3d_grad_input, conv3d_grad_kernel, convt3d_forward,
    convt3d_grad_bias, convt3d_grad_input, convt3d_grad_kernel, ConvGeom,
};
use crate::kernels::matmul::{matmul, matmul_grad_a, matmul_grad_b};
use crate::kernels::reduce::{reduce_backward, reduce_forward, ReduceOp, ReducePlan};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

/// Handle to one recorded value. Only valid for the tape that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

/// How a node was produced, holding whatever its backward rule needs.
enum Op<T: Scalar> {
    Leaf,
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    AddScalar(ValueId),
    Scale(ValueId, T),
    Clamp { x: ValueId, lo: T, hi: T },
    Ln(ValueId),
    Relu(ValueId),
    LeakyRelu { x: ValueId, slope: T },
    Sigmoid(ValueId),
    Matmul { a: ValueId, b: ValueId },
    AddBias { x: ValueId, bias: ValueId },
    Reduce { x: ValueId, op: ReduceOp, plan: ReducePlan },
    Reshape(ValueId),
    Conv3d { input: ValueId, kernel: ValueId, bias: ValueId, geom: ConvGeom },
    ConvT3d { input: ValueId, kernel: ValueId, bias: ValueId, geom: ConvGeom },
    BnTrain { x: ValueId, gamma: ValueId, beta: ValueId, channels: usize, plane: usize, cache: BnCache<T> },
    BnEval { x: ValueId, gamma: ValueId, beta: ValueId, channels: usize, plane: usize, mean: Vec<T>, var: Vec<T>, eps: T },
    CrossEntropyLogits { logits: ValueId, labels: Vec<usize>, probs: Vec<T> },
}

struct Node<T: Scalar> {
    op: Op<T>,
    shape: Vec<usize>,
    data: Vec<T>,
    needs_grad: bool,
}

/// Arena of recorded values plus, after [`Tape::backward`], their adjoints.
#[derive(Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

/// Overflow-safe logistic function.
fn logistic<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>, data: Vec<T>, needs_grad: bool) -> ValueId {
        self.nodes.push(Node { op, shape, data, needs_grad });
        ValueId(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: ValueId, op: Op<T>, f: impl Fn(T) -> T) -> ValueId {
        let node = &self.nodes[x.0];
        let data = node.data.iter().map(|&v| f(v)).collect();
        let (shape, needs) = (node.shape.clone(), node.needs_grad);
        self.push(op, shape, data, needs)
    }

    fn binary(
        &mut self,
        a: ValueId,
        b: ValueId,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<ValueId, TensorError> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if na.shape != nb.shape {
            return Err(TensorError::ShapeMismatch {
                lhs: na.shape.clone(),
                rhs: nb.shape.clone(),
            });
        }
        let data = na.data.iter().zip(&nb.data).map(|(&x, &y)| f(x, y)).collect();
        let (shape, needs) = (na.shape.clone(), na.needs_grad || nb.needs_grad);
        Ok(self.push(op, shape, data, needs))
    }

    // ── Entry points ──

    /// Records a tensor as a leaf; it tracks gradients iff the tensor does.
    pub fn leaf(&mut self, t: &Tensor<T>) -> ValueId {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Records a raw buffer as a non-differentiable leaf.
    pub fn constant(&mut self, shape: &[usize], data: &[T]) -> Result<ValueId, TensorError> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::LengthMismatch { len: data.len(), shape: shape.to_vec() });
        }
        Ok(self.push(Op::Leaf, shape.to_vec(), data.to_vec(), false))
    }

    // ── Accessors ──

    pub fn value(&self, id: ValueId) -> &[T] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Adjoint of `id` from the last backward pass, if one reached it.
    pub fn grad(&self, id: ValueId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Copies a value out as a tensor detached from gradient tracking.
    pub fn detach(&self, id: ValueId) -> Tensor<T> {
        let node = &self.nodes[id.0];
        Tensor::new(node.shape.clone(), node.data.clone()).expect("node shape matches its data")
    }

    // ── Elementwise ──

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn add_scalar(&mut self, x: ValueId, k: T) -> ValueId {
        self.unary(x, Op::AddScalar(x), |v| v + k)
    }

    pub fn scale(&mut self, x: ValueId, k: T) -> ValueId {
        self.unary(x, Op::Scale(x, k), |v| v * k)
    }

    pub fn clamp(&mut self, x: ValueId, lo: T, hi: T) -> ValueId {
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.max(lo).min(hi))
    }

    /// Natural log; feed it clamped-positive values.
    pub fn ln(&mut self, x: ValueId) -> ValueId {
        self.unary(x, Op::Ln(x), |v| v.ln())
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        self.unary(x, Op::Relu(x), |v| v.max(T::zero()))
    }

    pub fn leaky_relu(&mut self, x: ValueId, slope: T) -> ValueId {
        self.unary(
            x,
            Op::LeakyRelu { x, slope },
            |v| if v > T::zero() { v } else { slope * v },
        )
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        self.unary(x, Op::Sigmoid(x), logistic)
    }

    // ── Linear algebra ──

    /// `[m,k] × [k,p] → [m,p]`.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if na.shape.len() != 2 {
            return Err(TensorError::RankMismatch { expected: 2, shape: na.shape.clone() });
        }
        if nb.shape.len() != 2 {
            return Err(TensorError::RankMismatch { expected: 2, shape: nb.shape.clone() });
        }
        let (m, k, k_rhs, p) = (na.shape[0], na.shape[1], nb.shape[0], nb.shape[1]);
        if k != k_rhs {
            return Err(TensorError::InnerDimMismatch { m, k, k_rhs, p });
        }
        let mut out = vec![T::zero(); m * p];
        matmul(m, k, p, &na.data, &nb.data, &mut out);
        let needs = na.needs_grad || nb.needs_grad;
        Ok(self.push(Op::Matmul { a, b }, vec![m, p], out, needs))
    }

    /// Adds a `[p]` bias to every row of a `[m,p]` matrix.
    pub fn add_bias(&mut self, x: ValueId, bias: ValueId) -> Result<ValueId, TensorError> {
        let (nx, nb) = (&self.nodes[x.0], &self.nodes[bias.0]);
        let fits = nx.shape.len() == 2 && nb.shape.len() == 1 && nb.shape[0] == nx.shape[1];
        if !fits {
            return Err(TensorError::ShapeMismatch {
                lhs: nx.shape.clone(),
                rhs: nb.shape.clone(),
            });
        }
        let p = nb.shape[0];
        let data = nx
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v + nb.data[i % p])
            .collect();
        let (shape, needs) = (nx.shape.clone(), nx.needs_grad || nb.needs_grad);
        Ok(self.push(Op::AddBias { x, bias }, shape, data, needs))
    }

    // ── Shape ──

    /// Sum or mean over `axes` (`None` = all; reduced axes are dropped).
    pub fn reduce(
        &mut self,
        x: ValueId,
        op: ReduceOp,
        axes: Option<&[usize]>,
    ) -> Result<ValueId, TensorError> {
        let node = &self.nodes[x.0];
        let plan = ReducePlan::new(&node.shape, axes)?;
        let data = reduce_forward(op, &node.shape, &plan, &node.data);
        let (shape, needs) = (plan.out_shape.clone(), node.needs_grad);
        Ok(self.push(Op::Reduce { x, op, plan }, shape, data, needs))
    }

    /// Mean over every element, yielding a scalar-shaped `[1]` value.
    pub fn mean_all(&mut self, x: ValueId) -> ValueId {
        self.reduce(x, ReduceOp::Mean, None).expect("reducing all axes cannot fail")
    }

    pub fn reshape(&mut self, x: ValueId, new_shape: &[usize]) -> Result<ValueId, TensorError> {
        let node = &self.nodes[x.0];
        let to_len: usize = new_shape.iter().product();
        if to_len != node.data.len() {
            return Err(TensorError::BadReshape {
                from: node.shape.clone(),
                from_len: node.data.len(),
                to: new_shape.to_vec(),
                to_len,
            });
        }
        let (data, needs) = (node.data.clone(), node.needs_grad);
        Ok(self.push(Op::Reshape(x), new_shape.to_vec(), data, needs))
    }

    // ── Convolution ──

    /// Strided 3-D correlation of `[N,Ci,T,H,W]` with `[Co,Ci,kT,kH,kW]`.
    pub fn conv3d(
        &mut self,
        input: ValueId,
        kernel: ValueId,
        bias: ValueId,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<ValueId, TensorError> {
        let geom = ConvGeom::conv(
            &self.nodes[input.0].shape,
            &self.nodes[kernel.0].shape,
            stride,
            padding,
        )?;
        self.push_conv(input, kernel, bias, geom, false)
    }

    /// Transposed 3-D convolution of `[N,Ci,T,H,W]` with `[Ci,Co,kT,kH,kW]`.
    pub fn conv3d_transpose(
        &mut self,
        input: ValueId,
        kernel: ValueId,
        bias: ValueId,
        stride: [usize; 3],
        padding: [usize; 3],
        output_padding: [usize; 3],
    ) -> Result<ValueId, TensorError> {
        let geom = ConvGeom::conv_transpose(
            &self.nodes[input.0].shape,
            &self.nodes[kernel.0].shape,
            stride,
            padding,
            output_padding,
        )?;
        self.push_conv(input, kernel, bias, geom, true)
    }

    fn push_conv(
        &mut self,
        input: ValueId,
        kernel: ValueId,
        bias: ValueId,
        geom: ConvGeom,
        transpose: bool,
    ) -> Result<ValueId, TensorError> {
        let nb = &self.nodes[bias.0];
        if nb.data.len() != geom.c_out {
            return Err(TensorError::ShapeMismatch {
                lhs: nb.shape.clone(),
                rhs: vec![geom.c_out],
            });
        }
        let mut out = vec![T::zero(); geom.out_len()];
        let (inp, ker, bias_data) = (
            &self.nodes[input.0].data,
            &self.nodes[kernel.0].data,
            &self.nodes[bias.0].data,
        );
        if transpose {
            convt3d_forward(&geom, inp, ker, bias_data, &mut out);
        } else {
            conv3d_forward(&geom, inp, ker, bias_data, &mut out);
        }
        let shape = geom.out_shape();
        let needs = self.nodes[input.0].needs_grad
            || self.nodes[kernel.0].needs_grad
            || self.nodes[bias.0].needs_grad;
        let op = if transpose {
            Op::ConvT3d { input, kernel, bias, geom }
        } else {
            Op::Conv3d { input, kernel, bias, geom }
        };
        Ok(self.push(op, shape, out, needs))
    }

    // ── Normalization ──

    /// Batch normalization over axis 1 of an `[N,C,...]` value using batch
    /// statistics; updates the running statistics in place.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm_train(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        running_mean: &mut [T],
        running_var: &mut [T],
        eps: T,
        momentum: T,
    ) -> Result<ValueId, TensorError> {
        let (channels, plane) = self.bn_dims(x, gamma, beta)?;
        let mut out = vec![T::zero(); self.nodes[x.0].data.len()];
        let cache = batchnorm_train_forward(
            channels,
            plane,
            &self.nodes[x.0].data,
            &self.nodes[gamma.0].data,
            &self.nodes[beta.0].data,
            running_mean,
            running_var,
            eps,
            momentum,
            &mut out,
        )?;
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.nodes[x.0].needs_grad
            || self.nodes[gamma.0].needs_grad
            || self.nodes[beta.0].needs_grad;
        let op = Op::BnTrain { x, gamma, beta, channels, plane, cache };
        Ok(self.push(op, shape, out, needs))
    }

    /// Batch normalization with frozen statistics (inference mode).
    pub fn batchnorm_eval(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<ValueId, TensorError> {
        let (channels, plane) = self.bn_dims(x, gamma, beta)?;
        let mut out = vec![T::zero(); self.nodes[x.0].data.len()];
        batchnorm_eval_forward(
            channels,
            plane,
            &self.nodes[x.0].data,
            &self.nodes[gamma.0].data,
            &self.nodes[beta.0].data,
            running_mean,
            running_var,
            eps,
            &mut out,
        );
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.nodes[x.0].needs_grad
            || self.nodes[gamma.0].needs_grad
            || self.nodes[beta.0].needs_grad;
        let op = Op::BnEval {
            x,
            gamma,
            beta,
            channels,
            plane,
            mean: running_mean.to_vec(),
            var: running_var.to_vec(),
            eps,
        };
        Ok(self.push(op, shape, out, needs))
    }

    fn bn_dims(
        &self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
    ) -> Result<(usize, usize), TensorError> {
        let shape = &self.nodes[x.0].shape;
        if shape.len() < 2 {
            return Err(TensorError::RankMismatch { expected: 2, shape: shape.clone() });
        }
        let channels = shape[1];
        let plane: usize = shape[2..].iter().product();
        for id in [gamma, beta] {
            let n = &self.nodes[id.0];
            if n.data.len() != channels {
                return Err(TensorError::ShapeMismatch {
                    lhs: n.shape.clone(),
                    rhs: vec![channels],
                });
            }
        }
        Ok((channels, plane))
    }

    // ── Classification loss ──

    /// Mean softmax cross-entropy of `[N,K]` logits against class labels,
    /// computed through log-sum-exp so large logits stay finite.
    pub fn cross_entropy_logits(
        &mut self,
        logits: ValueId,
        labels: &[usize],
    ) -> Result<ValueId, TensorError> {
        let node = &self.nodes[logits.0];
        if node.shape.len() != 2 {
            return Err(TensorError::RankMismatch { expected: 2, shape: node.shape.clone() });
        }
        let (rows, classes) = (node.shape[0], node.shape[1]);
        if labels.len() != rows {
            return Err(TensorError::LengthMismatch {
                len: labels.len(),
                shape: node.shape.clone(),
            });
        }
        if rows == 0 {
            return Err(TensorError::DegenerateBatch { count: 0 });
        }
        for &label in labels {
            if label >= classes {
                return Err(TensorError::ClassOutOfRange { index: label, classes });
            }
        }
        let mut probs = vec![T::zero(); rows * classes];
        let mut total = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &node.data[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(row[0], T::max);
            let mut denom = T::zero();
            for &v in row {
                denom += (v - max).exp();
            }
            let lse = max + denom.ln();
            total += lse - row[label];
            for (c, &v) in row.iter().enumerate() {
                probs[r * classes + c] = (v - lse).exp();
            }
        }
        let mean = total / T::from_usize(rows).unwrap();
        let needs = node.needs_grad;
        let op = Op::CrossEntropyLogits { logits, labels: labels.to_vec(), probs };
        Ok(self.push(op, vec![1], vec![mean], needs))
    }

    // ── Backward ──

    /// Seeds `loss` (which must hold exactly one element) with adjoint 1 and
    /// propagates adjoints back to every gradient-tracking node.
    pub fn backward(&mut self, loss: ValueId) -> Result<(), TensorError> {
        let n = self.nodes.len();
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        self.grads = (0..n).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        let Tape { nodes, grads } = self;
        for i in (0..=loss.0).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            step_back(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

/// Gradient buffer of `id`, allocated on first touch; `None` when the node
/// does not track gradients.
fn gbuf<'g, T: Scalar>(
    nodes: &[Node<T>],
    grads: &'g mut [Option<Vec<T>>],
    id: ValueId,
) -> Option<&'g mut Vec<T>> {
    if !nodes[id.0].needs_grad {
        return None;
    }
    let len = nodes[id.0].data.len();
    Some(grads[id.0].get_or_insert_with(|| vec![T::zero(); len]))
}

/// Takes a gradient buffer out for a fused multi-output backward kernel,
/// handing non-tracking nodes a scratch buffer instead.
fn take_buf<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    id: ValueId,
) -> Vec<T> {
    grads[id.0]
        .take()
        .unwrap_or_else(|| vec![T::zero(); nodes[id.0].data.len()])
}

/// Counterpart of [`take_buf`]: stores the buffer back, dropping scratch.
fn put_buf<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    id: ValueId,
    buf: Vec<T>,
) {
    if nodes[id.0].needs_grad {
        grads[id.0] = Some(buf);
    }
}

/// Applies one node's backward rule, accumulating into its inputs' buffers.
fn step_back<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], i: usize, g: &[T]) {
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if let Some(ga) = gbuf(nodes, grads, *a) {
                for (d, &gv) in ga.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            if let Some(gb) = gbuf(nodes, grads, *b) {
                for (d, &gv) in gb.iter_mut().zip(g) {
                    *d += gv;
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = gbuf(nodes, grads, *a) {
                for (d, &gv) in ga.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            if let Some(gb) = gbuf(nodes, grads, *b) {
                for (d, &gv) in gb.iter_mut().zip(g) {
                    *d -= gv;
                }
            }
        }
        Op::Mul(a, b) => {
            let (bv, av) = (b.0, a.0);
            if let Some(ga) = gbuf(nodes, grads, *a) {
                for ((d, &gv), &other) in ga.iter_mut().zip(g).zip(&nodes[bv].data) {
                    *d = *d + gv * other;
                }
            }
            if let Some(gb) = gbuf(nodes, grads, *b) {
                for ((d, &gv), &other) in gb.iter_mut().zip(g).zip(&nodes[av].data) {
                    *d = *d + gv * other;
                }
            }
        }
        Op::AddScalar(x) | Op::Reshape(x) => {
            if let Some(gx) = gbuf(nodes, grads, *x) {
                for (d, &gv) in gx.iter_mut().zip(g) {
                    *d += gv;
                }
            }
        }
        Op::Scale(x, k) => {
            let k = *k;
            if let Some(gx) = gbuf(nodes, grads, *x) {
                for (d, &gv) in gx.iter_mut().zip(g) {
                    *d = *d + gv * k;
                }
            }
        }
        Op::Clamp { x, lo, hi } => {
            let (xv, lo, hi) = (x.0, *lo, *hi);
            if let Some(gx) = gbuf(nodes, grads, *x) {
                for ((d, &gv), &v) in gx.iter_mut().zip(g).zip(&nodes[xv].data) {
                    if v >= lo && v <= hi {
                        *d += gv;
                    }
                }
            }
        }
        Op::Ln(x) => {
            let xv = x.0;
            if let Some(gx) = gbuf(nodes, grads, *x) {
                for ((d, &gv), &v) in gx.iter_mut().zip(g).zip(&nodes[xv].data) {
                    *d = *d + gv / v;
                }
            }
        }
        Op::Relu(x) => {
            let xv = x.0;
            if let Some(gx) = gbuf(nodes, grads, *x) {
                for ((d, &gv), &v) in gx.iter_mut().zip(g).zip(&nodes[xv].data) {
                    if v > T::zero() {
                        *d += gv;
                    }
                }
            }
        }
        Op::LeakyRelu { x, slope } => {
            let (xv, slope) = (x.0, *slope);
            if let Some(gx) = gbuf(nodes, grads, *x) {
                for ((d, &gv), &v) in gx.iter_mut().zip(g).zip(&nodes[xv].data) {
                    let dv = if v > T::zero() { gv } else { gv * slope };
                    *d += dv;
                }
            }
        }
        Op::Sigmoid(x) => {
            let out = &nodes[i].data;
            if let Some(gx) = gbuf(nodes, grads, *x) {
                for ((d, &gv), &s) in gx.iter_mut().zip(g).zip(out) {
                    *d = *d + gv * s * (T::one() - s);
                }
            }
        }
        Op::Matmul { a, b } => {
            let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let p = nodes[b.0].shape[1];
            if let Some(ga) = gbuf(nodes, grads, *a) {
                matmul_grad_a(m, k, p, g, &nodes[b.0].data, ga);
            }
            if let Some(gb) = gbuf(nodes, grads, *b) {
                matmul_grad_b(m, k, p, &nodes[a.0].data, g, gb);
            }
        }
        Op::AddBias { x, bias } => {
            if let Some(gx) = gbuf(nodes, grads, *x) {
                for (d, &gv) in gx.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            if let Some(gb) = gbuf(nodes, grads, *bias) {
                let p = gb.len();
                for (j, &gv) in g.iter().enumerate() {
                    gb[j % p] += gv;
                }
            }
        }
        Op::Reduce { x, op, plan } => {
            let shape = &nodes[x.0].shape;
            if let Some(gx) = gbuf(nodes, grads, *x) {
                reduce_backward(*op, shape, plan, g, gx);
            }
        }
        Op::Conv3d { input, kernel, bias, geom } => {
            if let Some(gi) = gbuf(nodes, grads, *input) {
                conv3d_grad_input(geom, g, &nodes[kernel.0].data, gi);
            }
            if let Some(gk) = gbuf(nodes, grads, *kernel) {
                conv3d_grad_kernel(geom, &nodes[input.0].data, g, gk);
            }
            if let Some(gb) = gbuf(nodes, grads, *bias) {
                conv3d_grad_bias(geom, g, gb);
            }
        }
        Op::ConvT3d { input, kernel, bias, geom } => {
            if let Some(gi) = gbuf(nodes, grads, *input) {
                convt3d_grad_input(geom, g, &nodes[kernel.0].data, gi);
            }
            if let Some(gk) = gbuf(nodes, grads, *kernel) {
                convt3d_grad_kernel(geom, &nodes[input.0].data, g, gk);
            }
            if let Some(gb) = gbuf(nodes, grads, *bias) {
                convt3d_grad_bias(geom, g, gb);
            }
        }
        Op::BnTrain { x, gamma, beta, channels, plane, cache } => {
            let mut gx = take_buf(nodes, grads, *x);
            let mut gg = take_buf(nodes, grads, *gamma);
            let mut gb = take_buf(nodes, grads, *beta);
            batchnorm_train_backward(
                *channels,
                *plane,
                g,
                &nodes[gamma.0].data,
                cache,
                &mut gx,
                &mut gg,
                &mut gb,
            );
            put_buf(nodes, grads, *x, gx);
            put_buf(nodes, grads, *gamma, gg);
            put_buf(nodes, grads, *beta, gb);
        }
        Op::BnEval { x, gamma, beta, channels, plane, mean, var, eps } => {
            let mut gx = take_buf(nodes, grads, *x);
            let mut gg = take_buf(nodes, grads, *gamma);
            let mut gb = take_buf(nodes, grads, *beta);
            batchnorm_eval_backward(
                *channels,
                *plane,
                &nodes[x.0].data,
                g,
                &nodes[gamma.0].data,
                mean,
                var,
                *eps,
                &mut gx,
                &mut gg,
                &mut gb,
            );
            put_buf(nodes, grads, *x, gx);
            put_buf(nodes, grads, *gamma, gg);
            put_buf(nodes, grads, *beta, gb);
        }
        Op::CrossEntropyLogits { logits, labels, probs } => {
            let classes = nodes[logits.0].shape[1];
            if let Some(gl) = gbuf(nodes, grads, *logits) {
                let scale = g[0] / T::from_usize(labels.len()).unwrap();
                for (r, &label) in labels.iter().enumerate() {
                    for c in 0..classes {
                        let idx = r * classes + c;
                        let target = if c == label { T::one() } else { T::zero() };
                        gl[idx] = gl[idx] + scale * (probs[idx] - target);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf32(tape: &mut Tape<f32>, shape: &[usize], data: &[f32]) -> ValueId {
        let t = Tensor::new(shape.to_vec(), data.to_vec()).unwrap().with_grad();
        tape.leaf(&t)
    }

    #[test]
    fn product_mean_splits_gradient() {
        let mut tape = Tape::new();
        let x = leaf32(&mut tape, &[2], &[2.0, 3.0]);
        let y = leaf32(&mut tape, &[2], &[4.0, 5.0]);
        let prod = tape.mul(x, y).unwrap();
        let loss = tape.mean_all(prod);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.5]);
        assert_eq!(tape.grad(y).unwrap(), &[1.0, 1.5]);
    }

    #[test]
    fn squaring_doubles_the_operand_gradient() {
        let mut tape = Tape::new();
        let x = leaf32(&mut tape, &[3], &[1.0, -2.0, 0.5]);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.reduce(sq, ReduceOp::Sum, None).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn relu_and_clamp_mask_out_of_range_inputs() {
        let mut tape = Tape::new();
        let x = leaf32(&mut tape, &[3], &[-1.0, 2.0, 0.5]);
        let r = tape.relu(x);
        let loss = tape.reduce(r, ReduceOp::Sum, None).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = leaf32(&mut tape, &[3], &[-2.0, 0.5, 3.0]);
        let c = tape.clamp(x, 0.0, 1.0);
        let loss = tape.reduce(c, ReduceOp::Sum, None).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn constant_branches_carry_no_gradient() {
        let mut tape = Tape::new();
        let x = leaf32(&mut tape, &[2], &[1.0, 2.0]);
        let c = tape.constant(&[2], &[10.0, 20.0]).unwrap();
        let sum = tape.add(x, c).unwrap();
        let loss = tape.mean_all(sum);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.5, 0.5]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn vector_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = leaf32(&mut tape, &[2], &[1.0, 2.0]);
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_k() {
        let mut tape = Tape::new();
        let logits = leaf32(&mut tape, &[2, 4], &[0.0; 8]);
        let loss = tape.cross_entropy_logits(logits, &[1, 3]).unwrap();
        assert!((tape.value(loss)[0] - 4.0f32.ln()).abs() < 1e-6);
        tape.backward(loss).unwrap();
        let g = tape.grad(logits).unwrap();
        // every class sits at p=1/4; the labeled entries lose 1, all /2 rows
        for (i, &gv) in g.iter().enumerate() {
            let want = if i == 1 || i == 7 { (0.25 - 1.0) / 2.0 } else { 0.25 / 2.0 };
            assert!((gv - want).abs() < 1e-6);
        }
        let row_sum: f32 = g[..4].iter().sum();
        assert!(row_sum.abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let mut tape = Tape::new();
        let logits = leaf32(&mut tape, &[2, 3], &[0.0; 6]);
        let err = tape.cross_entropy_logits(logits, &[0, 3]).unwrap_err();
        assert!(matches!(err, TensorError::ClassOutOfRange { index: 3, classes: 3 }));
        let err = tape.cross_entropy_logits(logits, &[0]).unwrap_err();
        assert!(matches!(err, TensorError::LengthMismatch { .. }));
    }

    #[test]
    fn matmul_rejects_inner_dim_mismatch() {
        let mut tape = Tape::new();
        let a = leaf32(&mut tape, &[2, 3], &[0.0; 6]);
        let b = leaf32(&mut tape, &[4, 2], &[0.0; 8]);
        let err = tape.matmul(a, b).unwrap_err();
        assert!(matches!(err, TensorError::InnerDimMismatch { k: 3, k_rhs: 4, .. }));
    }

    #[test]
    fn reshape_routes_gradients_straight_through() {
        let mut tape = Tape::new();
        let x = leaf32(&mut tape, &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let flat = tape.reshape(x, &[4]).unwrap();
        let loss = tape.reduce(flat, ReduceOp::Sum, None).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);
        let err = tape.reshape(x, &[3]).unwrap_err();
        assert!(matches!(err, TensorError::BadReshape { .. }));
    }

    #[test]
    fn sigmoid_stays_finite_at_extreme_inputs() {
        let mut tape = Tape::new();
        let x = leaf32(&mut tape, &[2], &[100.0, -100.0]);
        let s = tape.sigmoid(x);
        assert!(tape.value(s).iter().all(|v| v.is_finite()));
        assert!((tape.value(s)[0] - 1.0).abs() < 1e-6);
        assert!(tape.value(s)[1] < 1e-6);
        let loss = tape.mean_all(s);
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn detach_copies_the_value_without_tracking() {
        let mut tape = Tape::new();
        let x = leaf32(&mut tape, &[2], &[1.5, -2.5]);
        let s = tape.scale(x, 2.0);
        let t = tape.detach(s);
        assert_eq!(t.shape(), &[2]);
        assert_eq!(t.data(), &[3.0, -5.0]);
        assert!(!t.requires_grad());
    }

    #[test]
    fn add_bias_broadcasts_rows_and_sums_columns() {
        let mut tape = Tape::new();
        let x = leaf32(&mut tape, &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = leaf32(&mut tape, &[2], &[10.0, 20.0]);
        let y = tape.add_bias(x, b).unwrap();
        assert_eq!(tape.value(y), &[11.0, 22.0, 13.0, 24.0]);
        let loss = tape.reduce(y, ReduceOp::Sum, None).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);
        assert_eq!(tape.grad(b).unwrap(), &[2.0, 2.0]);
    }
}
