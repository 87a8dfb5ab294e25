//! Define-by-run compute graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so insertion order is a valid
//! topological order and backward is a single reverse sweep.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::kernels::{self, ConvGeom};
use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probabilities are floored here before taking logs in cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Activation kinds exposed through [`Graph::activation`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
    Softmax,
}

/// Default negative-side slope of leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug)]
enum Op<T> {
    Input,
    Param,
    Dense { x: NodeId, w: NodeId, b: NodeId },
    Conv { x: NodeId, k: NodeId, b: Option<NodeId>, geom: ConvGeom },
    PixelShuffle { x: NodeId },
    LeakyRelu { x: NodeId, slope: T },
    Tanh { x: NodeId },
    Softmax { x: NodeId },
    Mask { x: NodeId, mask: Vec<T> },
    GradReverse { x: NodeId, lambda: T },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Concat { a: NodeId, b: NodeId, a_width: usize, b_width: usize },
    Reshape { x: NodeId },
    CrossEntropy { probs: NodeId, targets: Vec<T> },
    MeanAbsError { a: NodeId, b: NodeId },
    MeanSqError { a: NodeId, b: NodeId },
    Sum { x: NodeId },
    Combine { terms: Vec<(NodeId, T)> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Dense { .. } => "dense",
            Op::Conv { .. } => "conv2d",
            Op::PixelShuffle { .. } => "pixel_shuffle",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Tanh { .. } => "tanh",
            Op::Softmax { .. } => "softmax",
            Op::Mask { .. } => "dropout",
            Op::GradReverse { .. } => "gradient_reversal",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Concat { .. } => "concat",
            Op::Reshape { .. } => "reshape",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::MeanAbsError { .. } => "mean_abs_error",
            Op::MeanSqError { .. } => "mean_sq_error",
            Op::Sum { .. } => "sum",
            Op::Combine { .. } => "combine",
        }
    }
}

enum Value<'p, T> {
    Owned(Tensor<T>),
    Borrowed(&'p Tensor<T>),
}

struct Node<'p, T> {
    value: Value<'p, T>,
    op: Op<T>,
}

/// A recorded forward computation over a borrowed parameter store.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<'p, T>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    node_grads: Vec<Option<Vec<T>>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to any node, if the loss depends on it.
    pub fn wrt(&self, node: NodeId) -> Option<&[T]> {
        self.node_grads.get(node.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.param_nodes.get(&id).and_then(|&n| self.wrt(n))
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Vec<T>>, delta: &[T]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, &d)| *a += d),
        None => *slot = Some(delta.to_vec()),
    }
}

fn add_scaled_into<T: Scalar>(slot: &mut Option<Vec<T>>, delta: &[T], scale: T) {
    match slot {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, &d)| *a += d * scale),
        None => *slot = Some(delta.iter().map(|&d| d * scale).collect()),
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    /// Reads a single-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).data()[0].as_f64()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value: Value::Owned(value), op });
        Ok(id)
    }

    /// A constant leaf. Gradients still flow to it, which is how input gradients are checked.
    pub fn input(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.push(value, Op::Input)
    }

    /// The graph node for a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let node = NodeId(self.nodes.len());
        self.nodes.push(Node { value: Value::Borrowed(self.params.tensor(id)), op: Op::Param });
        self.param_nodes.insert(id, node);
        node
    }

    /// Copies a node's value into a fresh leaf so no gradient flows back through it.
    pub fn detach(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).clone();
        self.input(v)
    }

    /// `y = x W + b` for `x: [batch, in]`, `W: [in, out]`, `b: [out]`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || bs[0] != ws[1] {
            return Err(Error::dim(
                "dense",
                format!("input {xs:?} incompatible with weight {ws:?} and bias {bs:?}"),
            ));
        }
        let (batch, inp, out) = (xs[0], ws[0], ws[1]);
        let mut y = Vec::with_capacity(batch * out);
        for _ in 0..batch {
            y.extend_from_slice(self.value(b).data());
        }
        T::gemm(
            batch,
            inp,
            out,
            T::one(),
            self.value(x).data(),
            inp as isize,
            1,
            self.value(w).data(),
            out as isize,
            1,
            T::one(),
            &mut y,
            out as isize,
            1,
        );
        self.push(Tensor::new([batch, out], y)?, Op::Dense { x, w, b })
    }

    /// "Same"-padded convolution over NHWC input with a `[kh, kw, cin, cout]` kernel.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        k: NodeId,
        b: Option<NodeId>,
        stride: usize,
        dilation: usize,
    ) -> Result<NodeId> {
        if stride == 0 || dilation == 0 {
            return Err(Error::Config(format!(
                "conv2d stride ({stride}) and dilation ({dilation}) must be at least 1"
            )));
        }
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::dim("conv2d", format!("input {xs:?} / kernel {ks:?} must be rank 4")));
        }
        if xs[3] != ks[2] {
            return Err(Error::dim(
                "conv2d",
                format!("input {xs:?} has {} channels but kernel {ks:?} expects {}", xs[3], ks[2]),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [ks[3]] {
                return Err(Error::dim(
                    "conv2d",
                    format!("bias {:?} does not match kernel {ks:?}", self.shape(b)),
                ));
            }
        }
        let geom = ConvGeom::same(xs[0], xs[1], xs[2], xs[3], ks[0], ks[1], ks[3], stride, dilation);
        let y = kernels::conv_forward(
            self.value(x).data(),
            self.value(k).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let shape = [geom.batch, geom.out_h, geom.out_w, geom.out_c];
        self.push(Tensor::new(shape, y)?, Op::Conv { x, k, b, geom })
    }

    /// Depth-to-space upsampling by 2: `[b, h, w, 4c] -> [b, 2h, 2w, c]`.
    pub fn pixel_shuffle(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[3] % 4 != 0 {
            return Err(Error::dim(
                "pixel_shuffle",
                format!("input {xs:?} needs rank 4 and channels divisible by 4"),
            ));
        }
        let c = xs[3] / 4;
        let y = kernels::depth_to_space(self.value(x).data(), xs[0], xs[1], xs[2], c);
        self.push(Tensor::new([xs[0], 2 * xs[1], 2 * xs[2], c], y)?, Op::PixelShuffle { x })
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> Result<NodeId> {
        match kind {
            Activation::LeakyRelu(slope) => self.leaky_relu(x, slope),
            Activation::Tanh => self.tanh(x),
            Activation::Softmax => self.softmax(x),
        }
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        let slope = T::from_f64_lossy(slope);
        let v = self.value(x);
        let data = v.data().iter().map(|&a| if a > T::zero() { a } else { a * slope }).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        self.push(t, Op::LeakyRelu { x, slope })
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a.tanh()).collect())?;
        self.push(t, Op::Tanh { x })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let width = *v.shape().last().unwrap_or(&1);
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(width) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                total += *e;
            }
            row.iter_mut().for_each(|e| *e /= total);
        }
        let t = Tensor::new(v.shape().to_vec(), out)?;
        self.push(t, Op::Softmax { x })
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, rate: f64, training: bool, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let v = self.value(x);
        let mask: Vec<T> = (0..v.len())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        self.push(t, Op::Mask { x, mask })
    }

    /// Identity forward; backward multiplies the incoming gradient by `-lambda`.
    pub fn gradient_reversal(&mut self, x: NodeId, lambda: f64) -> Result<NodeId> {
        let t = self.value(x).clone();
        self.push(t, Op::GradReverse { x, lambda: T::from_f64_lossy(lambda) })
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("operands {:?} and {:?} differ", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x - y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Sub { a, b })
    }

    /// Concatenation along the last axis; all leading dimensions must agree.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let rank = sa.len();
        if rank != sb.len() || sa[..rank - 1] != sb[..rank - 1] {
            return Err(Error::dim("concat", format!("cannot join {sa:?} and {sb:?} on the last axis")));
        }
        let (wa, wb) = (sa[rank - 1], sb[rank - 1]);
        let rows = self.value(a).len() / wa;
        let mut data = Vec::with_capacity(rows * (wa + wb));
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for r in 0..rows {
            data.extend_from_slice(&da[r * wa..(r + 1) * wa]);
            data.extend_from_slice(&db[r * wb..(r + 1) * wb]);
        }
        let mut shape = sa;
        shape[rank - 1] = wa + wb;
        self.push(Tensor::new(shape, data)?, Op::Concat { a, b, a_width: wa, b_width: wb })
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(t, Op::Reshape { x })
    }

    /// `-(1/N) sum_n sum_i t_ni log(max(p_ni, LOG_CLAMP))` for `probs, targets: [N, C]`.
    pub fn cross_entropy(&mut self, probs: NodeId, targets: &Tensor<T>) -> Result<NodeId> {
        let ps = self.shape(probs);
        if ps.len() != 2 || ps != targets.shape() {
            return Err(Error::dim(
                "cross_entropy",
                format!("probabilities {ps:?} vs targets {:?}", targets.shape()),
            ));
        }
        let n = T::from_usize(ps[0]).unwrap_or_else(T::one);
        let floor = T::from_f64_lossy(LOG_CLAMP);
        let total: T = self
            .value(probs)
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&p, &t)| if t == T::zero() { T::zero() } else { t * p.max(floor).ln() })
            .sum();
        let loss = -total / n;
        self.push(Tensor::scalar(loss), Op::CrossEntropy { probs, targets: targets.data().to_vec() })
    }

    /// Mean of `|a - b|` over every element.
    pub fn mean_abs_error(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mean_abs_error", a, b)?;
        let n = T::from_usize(self.value(a).len()).unwrap_or_else(T::one);
        let total: T = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| (x - y).abs()).sum();
        self.push(Tensor::scalar(total / n), Op::MeanAbsError { a, b })
    }

    /// Mean of `(a - b)^2` over every element.
    pub fn mean_sq_error(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mean_sq_error", a, b)?;
        let n = T::from_usize(self.value(a).len()).unwrap_or_else(T::one);
        let total: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        self.push(Tensor::scalar(total / n), Op::MeanSqError { a, b })
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum { x })
    }

    /// Weighted sum of single-element nodes.
    pub fn combine(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut total = T::zero();
        let mut typed = Vec::with_capacity(terms.len());
        for &(node, w) in terms {
            if self.value(node).len() != 1 {
                return Err(Error::dim("combine", format!("term {:?} is not a scalar", self.shape(node))));
            }
            let w = T::from_f64_lossy(w);
            total += w * self.value(node).data()[0];
            typed.push((node, w));
        }
        self.push(Tensor::scalar(total), Op::Combine { terms: typed })
    }

    /// Which side of its kink every non-smooth point sits on: leaky ReLU
    /// inputs and absolute-error residuals. Finite differences are only
    /// meaningful between two evaluations with equal patterns.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut bits = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::LeakyRelu { x, .. } => bits.extend(self.value(x).data().iter().map(|&v| v > T::zero())),
                Op::MeanAbsError { a, b } => bits.extend(
                    self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| p > q),
                ),
                _ => {}
            }
        }
        bits
    }

    /// Reverse sweep from a single-element loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            if dy.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
            self.propagate(idx, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }
        Ok(Gradients { node_grads: grads, param_nodes: self.param_nodes.clone() })
    }

    fn propagate(&self, idx: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = self.value(NodeId(idx));
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (batch, inp, outw) = (xv.shape()[0], wv.shape()[0], wv.shape()[1]);
                let mut dx = vec![T::zero(); batch * inp];
                T::gemm(batch, outw, inp, T::one(), dy, outw as isize, 1, wv.data(), 1, outw as isize, T::zero(), &mut dx, inp as isize, 1);
                let mut dw = vec![T::zero(); inp * outw];
                T::gemm(inp, batch, outw, T::one(), xv.data(), 1, inp as isize, dy, outw as isize, 1, T::zero(), &mut dw, outw as isize, 1);
                let mut db = vec![T::zero(); outw];
                for row in dy.chunks(outw) {
                    db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                }
                add_into(&mut grads[x.0], &dx);
                add_into(&mut grads[w.0], &dw);
                add_into(&mut grads[b.0], &db);
            }
            Op::Conv { x, k, b, geom } => {
                let (dx, dk, db) = kernels::conv_backward(self.value(*x).data(), self.value(*k).data(), dy, geom);
                add_into(&mut grads[x.0], &dx);
                add_into(&mut grads[k.0], &dk);
                if let Some(b) = b {
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::PixelShuffle { x } => {
                let s = self.shape(*x);
                let dx = kernels::space_to_depth(dy, s[0], s[1], s[2], s[3] / 4);
                add_into(&mut grads[x.0], &dx);
            }
            Op::LeakyRelu { x, slope } => {
                let dx: Vec<T> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&a, &g)| if a > T::zero() { g } else { g * *slope })
                    .collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Tanh { x } => {
                let dx: Vec<T> = out.data().iter().zip(dy).map(|(&y, &g)| g * (T::one() - y * y)).collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Softmax { x } => {
                let width = *out.shape().last().unwrap_or(&1);
                let mut dx = Vec::with_capacity(dy.len());
                for (yr, gr) in out.data().chunks(width).zip(dy.chunks(width)) {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&y, &g)| y * (g - dot)));
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::Mask { x, mask } => {
                let dx: Vec<T> = dy.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::GradReverse { x, lambda } => {
                add_scaled_into(&mut grads[x.0], dy, -*lambda);
            }
            Op::Add { a, b } => {
                add_into(&mut grads[a.0], dy);
                add_into(&mut grads[b.0], dy);
            }
            Op::Sub { a, b } => {
                add_into(&mut grads[a.0], dy);
                add_scaled_into(&mut grads[b.0], dy, -T::one());
            }
            Op::Concat { a, b, a_width, b_width } => {
                let w = a_width + b_width;
                let rows = dy.len() / w;
                let mut da = Vec::with_capacity(rows * a_width);
                let mut db = Vec::with_capacity(rows * b_width);
                for row in dy.chunks(w) {
                    da.extend_from_slice(&row[..*a_width]);
                    db.extend_from_slice(&row[*a_width..]);
                }
                add_into(&mut grads[a.0], &da);
                add_into(&mut grads[b.0], &db);
            }
            Op::Reshape { x } => add_into(&mut grads[x.0], dy),
            Op::CrossEntropy { probs, targets } => {
                let p = self.value(*probs);
                let n = T::from_usize(p.shape()[0]).unwrap_or_else(T::one);
                let floor = T::from_f64_lossy(LOG_CLAMP);
                let up = dy[0];
                let dp: Vec<T> = p
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&pv, &t)| if pv > floor { -up * t / (n * pv) } else { T::zero() })
                    .collect();
                add_into(&mut grads[probs.0], &dp);
            }
            Op::MeanAbsError { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let scale = dy[0] / T::from_usize(av.len()).unwrap_or_else(T::one);
                let da: Vec<T> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&x, &y)| {
                        let d = x - y;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                add_into(&mut grads[a.0], &da);
                add_scaled_into(&mut grads[b.0], &da, -T::one());
            }
            Op::MeanSqError { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let two = T::one() + T::one();
                let scale = two * dy[0] / T::from_usize(av.len()).unwrap_or_else(T::one);
                let da: Vec<T> = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y) * scale).collect();
                add_into(&mut grads[a.0], &da);
                add_scaled_into(&mut grads[b.0], &da, -T::one());
            }
            Op::Sum { x } => {
                let dx = vec![dy[0]; self.value(*x).len()];
                add_into(&mut grads[x.0], &dx);
            }
            Op::Combine { terms } => {
                for &(node, w) in terms {
                    add_into(&mut grads[node.0], &[dy[0] * w]);
                }
            }
        }
        Ok(())
    }
}
