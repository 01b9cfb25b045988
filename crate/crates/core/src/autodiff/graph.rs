//! Computation graph: node arena, shape inference, and gradient construction.
//!
//! Nodes are appended to an arena and refer only to earlier nodes, so node id
//! order is a topological order. `grad` appends adjoint nodes built from the
//! same primitive set, which keeps every gradient differentiable in turn.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

pub type NodeId = usize;

/// Primitive operations. The mask primitives (`StepAbove`, `Sign`) carry a
/// defined derivative of zero everywhere, which makes ReLU-style kinks total
/// under repeated differentiation.
#[derive(Clone, Debug)]
pub enum Op {
    Constant(Arc<Tensor>),
    Input,
    Parameter,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    ScalarMul(f64, NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Conv2d {
        image: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
    },
    /// Adjoint of `Conv2d` with respect to its image; a first-class primitive
    /// so that conv gradients stay differentiable.
    ConvInputGrad {
        out_grad: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
        in_h: usize,
        in_w: usize,
    },
    /// Adjoint of `Conv2d` with respect to its kernel.
    ConvKernelGrad {
        image: NodeId,
        out_grad: NodeId,
        stride: usize,
        pad: usize,
        k_h: usize,
        k_w: usize,
    },
    Relu(NodeId),
    /// 1.0 where input > threshold, else 0.0; derivative defined as zero.
    StepAbove(NodeId, f64),
    /// -1/0/+1 by sign; derivative defined as zero.
    Sign(NodeId),
    Abs(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    MaxConst(NodeId, f64),
    /// Target shape is the node's own shape.
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Broadcast a scalar to the node's own shape.
    ExpandScalar(NodeId),
    InnerProduct(NodeId, NodeId),
    L2Norm(NodeId),
    Softmax(NodeId),
    SoftmaxCrossEntropy { logits: NodeId, label: usize },
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

fn is_scalar_shape(shape: &[usize]) -> bool {
    shape.is_empty() || shape == [1]
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn op_of(&self, id: NodeId) -> &Op {
        &self.nodes[id].op
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        self.nodes.len() - 1
    }

    fn check_same_shape(&self, what: &str, a: NodeId, b: NodeId) -> Result<()> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::shape(
                format!("{what}(node {a}, node {b})"),
                &self.nodes[a].shape,
                &self.nodes[b].shape,
            ));
        }
        Ok(())
    }

    // ---- leaves ---------------------------------------------------------

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant(Arc::new(value)), shape)
    }

    pub fn constant_shared(&mut self, value: Arc<Tensor>) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant(value), shape)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    pub fn input(&mut self, shape: &[usize]) -> NodeId {
        self.push(Op::Input, shape.to_vec())
    }

    pub fn parameter(&mut self, shape: &[usize]) -> NodeId {
        self.push(Op::Parameter, shape.to_vec())
    }

    /// True for nodes that require a binding at evaluation time.
    pub fn is_root(&self, id: NodeId) -> bool {
        matches!(self.nodes[id].op, Op::Input | Op::Parameter)
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let shape = self.nodes[a].shape.clone();
        Ok(self.push(Op::Add(a, b), shape))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        let shape = self.nodes[a].shape.clone();
        Ok(self.push(Op::Sub(a, b), shape))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let shape = self.nodes[a].shape.clone();
        Ok(self.push(Op::Mul(a, b), shape))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("div", a, b)?;
        let shape = self.nodes[a].shape.clone();
        Ok(self.push(Op::Div(a, b), shape))
    }

    pub fn scalar_mul(&mut self, factor: f64, a: NodeId) -> NodeId {
        let shape = self.nodes[a].shape.clone();
        self.push(Op::ScalarMul(factor, a), shape)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a].shape.clone();
        self.push(Op::Relu(a), shape)
    }

    pub fn step_above(&mut self, a: NodeId, threshold: f64) -> NodeId {
        let shape = self.nodes[a].shape.clone();
        self.push(Op::StepAbove(a, threshold), shape)
    }

    pub fn sign(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a].shape.clone();
        self.push(Op::Sign(a), shape)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a].shape.clone();
        self.push(Op::Abs(a), shape)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a].shape.clone();
        self.push(Op::Square(a), shape)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a].shape.clone();
        self.push(Op::Sqrt(a), shape)
    }

    pub fn max_const(&mut self, a: NodeId, floor: f64) -> NodeId {
        let shape = self.nodes[a].shape.clone();
        self.push(Op::MaxConst(a, floor), shape)
    }

    // ---- structure ------------------------------------------------------

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if numel(&self.nodes[a].shape) != numel(shape) {
            return Err(Error::shape(
                format!("reshape(node {a})"),
                shape,
                &self.nodes[a].shape,
            ));
        }
        Ok(self.push(Op::Reshape(a), shape.to_vec()))
    }

    pub fn expand_scalar(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if !is_scalar_shape(&self.nodes[a].shape) {
            return Err(Error::invalid_shape(
                format!("expand_scalar(node {a})"),
                format!("expected scalar input, got {:?}", self.nodes[a].shape),
            ));
        }
        Ok(self.push(Op::ExpandScalar(a), shape.to_vec()))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = &self.nodes[a].shape;
        if s.len() != 2 {
            return Err(Error::invalid_shape(
                format!("transpose(node {a})"),
                format!("expected rank-2 input, got {s:?}"),
            ));
        }
        let shape = vec![s[1], s[0]];
        Ok(self.push(Op::Transpose(a), shape))
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), Vec::new())
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a), Vec::new())
    }

    pub fn inner_product(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("inner_product", a, b)?;
        Ok(self.push(Op::InnerProduct(a, b), Vec::new()))
    }

    pub fn l2_norm(&mut self, a: NodeId) -> NodeId {
        self.push(Op::L2Norm(a), Vec::new())
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (&self.nodes[a].shape, &self.nodes[b].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::invalid_shape(
                format!("matmul(node {a}, node {b})"),
                format!("incompatible shapes {sa:?} x {sb:?}"),
            ));
        }
        let shape = vec![sa[0], sb[1]];
        Ok(self.push(Op::Matmul(a, b), shape))
    }

    pub fn conv2d(&mut self, image: NodeId, kernel: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let (sx, sw) = (&self.nodes[image].shape, &self.nodes[kernel].shape);
        if sx.len() != 3 || sw.len() != 4 {
            return Err(Error::invalid_shape(
                format!("conv2d(node {image}, node {kernel})"),
                format!("expected [C,H,W] image and [O,C,KH,KW] kernel, got {sx:?} and {sw:?}"),
            ));
        }
        if sx[0] != sw[1] {
            return Err(Error::shape(
                format!("conv2d(node {image}, node {kernel}) channel count"),
                &[sw[1]],
                &[sx[0]],
            ));
        }
        if stride == 0 {
            return Err(Error::invalid_shape("conv2d", "stride must be >= 1"));
        }
        let (h, w) = (sx[1], sx[2]);
        let (kh, kw) = (sw[2], sw[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::invalid_shape(
                format!("conv2d(node {image}, node {kernel})"),
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad),
            ));
        }
        let out_h = (h + 2 * pad - kh) / stride + 1;
        let out_w = (w + 2 * pad - kw) / stride + 1;
        let shape = vec![sw[0], out_h, out_w];
        Ok(self.push(Op::Conv2d { image, kernel, stride, pad }, shape))
    }

    fn conv_input_grad(
        &mut self,
        out_grad: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
        in_h: usize,
        in_w: usize,
    ) -> NodeId {
        let in_c = self.nodes[kernel].shape[1];
        self.push(
            Op::ConvInputGrad { out_grad, kernel, stride, pad, in_h, in_w },
            vec![in_c, in_h, in_w],
        )
    }

    fn conv_kernel_grad(
        &mut self,
        image: NodeId,
        out_grad: NodeId,
        stride: usize,
        pad: usize,
        k_h: usize,
        k_w: usize,
    ) -> NodeId {
        let out_c = self.nodes[out_grad].shape[0];
        let in_c = self.nodes[image].shape[0];
        self.push(
            Op::ConvKernelGrad { image, out_grad, stride, pad, k_h, k_w },
            vec![out_c, in_c, k_h, k_w],
        )
    }

    // ---- classification -------------------------------------------------

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let s = &self.nodes[a].shape;
        if s.len() != 1 {
            return Err(Error::invalid_shape(
                format!("softmax(node {a})"),
                format!("expected rank-1 logits, got {s:?}"),
            ));
        }
        let shape = s.clone();
        Ok(self.push(Op::Softmax(a), shape))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let s = &self.nodes[logits].shape;
        if s.len() != 1 {
            return Err(Error::invalid_shape(
                format!("softmax_cross_entropy(node {logits})"),
                format!("expected rank-1 logits, got {s:?}"),
            ));
        }
        if label >= s[0] {
            return Err(Error::LabelOutOfRange { label, classes: s[0] });
        }
        Ok(self.push(Op::SoftmaxCrossEntropy { logits, label }, Vec::new()))
    }

    // ---- differentiation ------------------------------------------------

    /// Build nodes computing d`output`/d`wrt[i]` for each requested node.
    ///
    /// The returned nodes are ordinary graph nodes, so they can feed further
    /// expressions and be differentiated again. Nodes unreachable from the
    /// output get a zero-constant gradient. Adjoint contributions are merged
    /// in descending node-id order, which pins the floating-point
    /// accumulation order and keeps results bit-reproducible.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        if !is_scalar_shape(&self.nodes[output].shape) {
            return Err(Error::NonScalarOutput {
                shape: self.nodes[output].shape.clone(),
            });
        }
        let n_before = self.nodes.len();
        let mut adjoint: Vec<Option<NodeId>> = vec![None; n_before];
        let seed_shape = self.nodes[output].shape.clone();
        let seed = self.constant(Tensor::filled(&seed_shape, 1.0));
        adjoint[output] = Some(seed);

        for id in (0..=output).rev() {
            let Some(g) = adjoint[id] else { continue };
            let contributions = self.vjp(id, g)?;
            for (input, contribution) in contributions {
                adjoint[input] = Some(match adjoint[input] {
                    None => contribution,
                    Some(prev) => self.add(prev, contribution)?,
                });
            }
        }

        wrt.iter()
            .map(|&w| {
                Ok(match adjoint.get(w).copied().flatten() {
                    Some(node) => node,
                    None => {
                        let shape = self.nodes[w].shape.clone();
                        self.constant(Tensor::zeros(&shape))
                    }
                })
            })
            .collect()
    }

    /// Vector-Jacobian product of node `id` given upstream adjoint `g`,
    /// expressed as new graph nodes. Returns (input, contribution) pairs.
    fn vjp(&mut self, id: NodeId, g: NodeId) -> Result<Vec<(NodeId, NodeId)>> {
        let op = self.nodes[id].op.clone();
        let out = match op {
            Op::Constant(_) | Op::Input | Op::Parameter => vec![],
            // Masks have a defined derivative of zero: no contributions.
            Op::StepAbove(..) | Op::Sign(_) => vec![],
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => {
                let neg = self.scalar_mul(-1.0, g);
                vec![(a, g), (b, neg)]
            }
            Op::Mul(a, b) => {
                let mut da = self.mul(g, b)?;
                let db = self.mul(g, a)?;
                if crate::faults::vjp_sign_fault() {
                    da = self.scalar_mul(-1.0, da);
                }
                vec![(a, da), (b, db)]
            }
            Op::Div(a, b) => {
                let da = self.div(g, b)?;
                let ga = self.mul(g, a)?;
                let b2 = self.square(b);
                let q = self.div(ga, b2)?;
                let db = self.scalar_mul(-1.0, q);
                vec![(a, da), (b, db)]
            }
            Op::ScalarMul(c, a) => vec![(a, self.scalar_mul(c, g))],
            Op::Matmul(a, b) => {
                let bt = self.transpose(b)?;
                let da = self.matmul(g, bt)?;
                let at = self.transpose(a)?;
                let db = self.matmul(at, g)?;
                vec![(a, da), (b, db)]
            }
            Op::Transpose(a) => vec![(a, self.transpose(g)?)],
            Op::Conv2d { image, kernel, stride, pad } => {
                let (in_h, in_w) = (self.nodes[image].shape[1], self.nodes[image].shape[2]);
                let (k_h, k_w) = (self.nodes[kernel].shape[2], self.nodes[kernel].shape[3]);
                let dx = self.conv_input_grad(g, kernel, stride, pad, in_h, in_w);
                let dw = self.conv_kernel_grad(image, g, stride, pad, k_h, k_w);
                vec![(image, dx), (kernel, dw)]
            }
            // conv2d, its input adjoint and its kernel adjoint are the three
            // contractions of one trilinear form, so each one's VJPs are the
            // other two.
            Op::ConvInputGrad { out_grad, kernel, stride, pad, .. } => {
                let (k_h, k_w) = (self.nodes[kernel].shape[2], self.nodes[kernel].shape[3]);
                let d_out = self.conv2d(g, kernel, stride, pad)?;
                let d_kernel = self.conv_kernel_grad(g, out_grad, stride, pad, k_h, k_w);
                vec![(out_grad, d_out), (kernel, d_kernel)]
            }
            Op::ConvKernelGrad { image, out_grad, stride, pad, .. } => {
                let (in_h, in_w) = (self.nodes[image].shape[1], self.nodes[image].shape[2]);
                let d_image = self.conv_input_grad(out_grad, g, stride, pad, in_h, in_w);
                let d_out = self.conv2d(image, g, stride, pad)?;
                vec![(image, d_image), (out_grad, d_out)]
            }
            Op::Relu(a) => {
                let mask = self.step_above(a, 0.0);
                vec![(a, self.mul(g, mask)?)]
            }
            Op::Abs(a) => {
                let s = self.sign(a);
                vec![(a, self.mul(g, s)?)]
            }
            Op::Square(a) => {
                let two_a = self.scalar_mul(2.0, a);
                vec![(a, self.mul(g, two_a)?)]
            }
            Op::Sqrt(a) => {
                // d sqrt(a) = g / (2 * sqrt(a)); `id` is the sqrt node itself.
                let denom = self.scalar_mul(2.0, id);
                vec![(a, self.div(g, denom)?)]
            }
            Op::MaxConst(a, floor) => {
                let mask = self.step_above(a, floor);
                vec![(a, self.mul(g, mask)?)]
            }
            Op::Reshape(a) => {
                let shape = self.nodes[a].shape.clone();
                vec![(a, self.reshape(g, &shape)?)]
            }
            Op::Sum(a) => {
                let shape = self.nodes[a].shape.clone();
                vec![(a, self.expand_scalar(g, &shape)?)]
            }
            Op::Mean(a) => {
                let shape = self.nodes[a].shape.clone();
                let scaled = self.scalar_mul(1.0 / numel(&shape) as f64, g);
                vec![(a, self.expand_scalar(scaled, &shape)?)]
            }
            Op::ExpandScalar(a) => vec![(a, self.sum(g))],
            Op::InnerProduct(a, b) => {
                let shape = self.nodes[a].shape.clone();
                let ge = self.expand_scalar(g, &shape)?;
                let da = self.mul(ge, b)?;
                let db = self.mul(ge, a)?;
                vec![(a, da), (b, db)]
            }
            Op::L2Norm(a) => {
                // d ||a|| = g * a / ||a||; `id` is the norm node itself.
                let shape = self.nodes[a].shape.clone();
                let ratio = self.div(g, id)?;
                let re = self.expand_scalar(ratio, &shape)?;
                vec![(a, self.mul(re, a)?)]
            }
            Op::Softmax(a) => {
                // dx = y * (g - <g, y>), with y this softmax node.
                let shape = self.nodes[a].shape.clone();
                let dot = self.inner_product(g, id)?;
                let de = self.expand_scalar(dot, &shape)?;
                let centered = self.sub(g, de)?;
                vec![(a, self.mul(id, centered)?)]
            }
            Op::SoftmaxCrossEntropy { logits, label } => {
                // dlogits = g * (softmax(logits) - onehot(label)).
                let shape = self.nodes[logits].shape.clone();
                let p = self.softmax(logits)?;
                let mut onehot = Tensor::zeros(&shape);
                onehot.data_mut()[label] = 1.0;
                let y = self.constant(onehot);
                let diff = self.sub(p, y)?;
                let ge = self.expand_scalar(g, &shape)?;
                vec![(logits, self.mul(ge, diff)?)]
            }
        };
        Ok(out)
    }
}
