//! Graph evaluation: forward values for all nodes or a requested subset.
//!
//! Evaluation walks nodes in ascending id order (a topological order by
//! construction), so repeated runs over identical bindings are bit-identical.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{idx3, idx4, Tensor};

use super::graph::{Graph, NodeId, Op};

/// Values for input/parameter nodes, keyed by node id.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    map: HashMap<NodeId, Arc<Tensor>>,
}

impl Bindings {
    pub fn new() -> Self {
        Bindings::default()
    }

    pub fn bind(&mut self, node: NodeId, value: impl Into<Arc<Tensor>>) -> &mut Self {
        self.map.insert(node, value.into());
        self
    }

    pub fn get(&self, node: NodeId) -> Option<&Arc<Tensor>> {
        self.map.get(&node)
    }
}

/// Per-node values produced by evaluation. Nodes outside the requested
/// subgraph hold `None`.
#[derive(Clone, Debug)]
pub struct Values {
    vals: Vec<Option<Arc<Tensor>>>,
}

impl Values {
    pub fn get(&self, node: NodeId) -> &Tensor {
        self.vals[node]
            .as_deref()
            .expect("node was not part of the evaluated subgraph")
    }

    pub fn get_shared(&self, node: NodeId) -> Arc<Tensor> {
        Arc::clone(self.vals[node].as_ref().expect("node was not evaluated"))
    }

    pub fn try_get(&self, node: NodeId) -> Option<&Tensor> {
        self.vals.get(node).and_then(|v| v.as_deref())
    }
}

impl Graph {
    /// Evaluate every node in the graph. All input/parameter nodes must be
    /// bound with their declared shapes.
    pub fn forward(&self, bindings: &Bindings) -> Result<Values> {
        let all: Vec<NodeId> = (0..self.len()).collect();
        self.eval(bindings, &all)
    }

    /// Evaluate the ancestors of `outputs` only.
    pub fn eval(&self, bindings: &Bindings, outputs: &[NodeId]) -> Result<Values> {
        let mut needed = vec![false; self.len()];
        let mut stack: Vec<NodeId> = outputs.to_vec();
        while let Some(id) = stack.pop() {
            if needed[id] {
                continue;
            }
            needed[id] = true;
            for input in op_inputs(&self.nodes[id].op) {
                if !needed[input] {
                    stack.push(input);
                }
            }
        }

        let mut vals: Vec<Option<Arc<Tensor>>> = vec![None; self.len()];
        for id in 0..self.len() {
            if !needed[id] {
                continue;
            }
            let value = self.compute(id, bindings, &vals)?;
            vals[id] = Some(value);
        }
        Ok(Values { vals })
    }

    fn compute(&self, id: NodeId, bindings: &Bindings, vals: &[Option<Arc<Tensor>>]) -> Result<Arc<Tensor>> {
        let node = &self.nodes[id];
        let val = |n: NodeId| -> &Tensor { vals[n].as_deref().expect("inputs precede outputs") };
        let out = match &node.op {
            Op::Constant(t) => return Ok(Arc::clone(t)),
            Op::Input | Op::Parameter => {
                let bound = bindings.get(id).ok_or(Error::UnboundInput { node: id })?;
                if bound.shape() != node.shape {
                    return Err(Error::shape(
                        format!("binding for node {id}"),
                        &node.shape,
                        bound.shape(),
                    ));
                }
                return Ok(Arc::clone(bound));
            }
            Op::Add(a, b) => zip_elementwise(val(*a), val(*b), |x, y| x + y),
            Op::Sub(a, b) => zip_elementwise(val(*a), val(*b), |x, y| x - y),
            Op::Mul(a, b) => zip_elementwise(val(*a), val(*b), |x, y| x * y),
            Op::Div(a, b) => zip_elementwise(val(*a), val(*b), |x, y| x / y),
            Op::ScalarMul(c, a) => map_elementwise(val(*a), |x| c * x),
            Op::Matmul(a, b) => matmul(val(*a), val(*b)),
            Op::Transpose(a) => transpose(val(*a)),
            Op::Conv2d { image, kernel, stride, pad } => conv2d(val(*image), val(*kernel), *stride, *pad),
            Op::ConvInputGrad { out_grad, kernel, stride, pad, in_h, in_w } => {
                conv_input_grad(val(*out_grad), val(*kernel), *stride, *pad, *in_h, *in_w)
            }
            Op::ConvKernelGrad { image, out_grad, stride, pad, k_h, k_w } => {
                conv_kernel_grad(val(*image), val(*out_grad), *stride, *pad, *k_h, *k_w)
            }
            Op::Relu(a) => map_elementwise(val(*a), |x| if x > 0.0 { x } else { 0.0 }),
            Op::StepAbove(a, c) => {
                let c = *c;
                map_elementwise(val(*a), move |x| if x > c { 1.0 } else { 0.0 })
            }
            Op::Sign(a) => map_elementwise(val(*a), |x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::Abs(a) => map_elementwise(val(*a), f64::abs),
            Op::Square(a) => map_elementwise(val(*a), |x| x * x),
            Op::Sqrt(a) => map_elementwise(val(*a), f64::sqrt),
            Op::MaxConst(a, c) => {
                let c = *c;
                map_elementwise(val(*a), move |x| if x > c { x } else { c })
            }
            Op::Reshape(a) => Tensor::new(node.shape.clone(), val(*a).data().to_vec())?,
            Op::Sum(a) => Tensor::scalar(val(*a).data().iter().sum()),
            Op::Mean(a) => {
                let t = val(*a);
                Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64)
            }
            Op::ExpandScalar(a) => Tensor::filled(&node.shape, val(*a).item()),
            Op::InnerProduct(a, b) => {
                let (x, y) = (val(*a).data(), val(*b).data());
                Tensor::scalar(x.iter().zip(y).map(|(p, q)| p * q).sum())
            }
            Op::L2Norm(a) => Tensor::scalar(val(*a).data().iter().map(|x| x * x).sum::<f64>().sqrt()),
            Op::Softmax(a) => softmax(val(*a)),
            Op::SoftmaxCrossEntropy { logits, label } => softmax_cross_entropy(val(*logits), *label),
        };
        Ok(Arc::new(out))
    }
}

fn op_inputs(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Constant(_) | Op::Input | Op::Parameter => vec![],
        Op::ScalarMul(_, a)
        | Op::Transpose(a)
        | Op::Relu(a)
        | Op::StepAbove(a, _)
        | Op::Sign(a)
        | Op::Abs(a)
        | Op::Square(a)
        | Op::Sqrt(a)
        | Op::MaxConst(a, _)
        | Op::Reshape(a)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::ExpandScalar(a)
        | Op::L2Norm(a)
        | Op::Softmax(a) => vec![*a],
        Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::Matmul(a, b)
        | Op::InnerProduct(a, b) => vec![*a, *b],
        Op::Conv2d { image, kernel, .. } => vec![*image, *kernel],
        Op::ConvInputGrad { out_grad, kernel, .. } => vec![*out_grad, *kernel],
        Op::ConvKernelGrad { image, out_grad, .. } => vec![*image, *out_grad],
    }
}

fn map_elementwise(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn zip_elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        for kk in 0..k {
            let aik = ad[i * k + kk];
            let row = &bd[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aik * row[j];
            }
        }
    }
    Tensor::new(vec![m, n], out).expect("sized above")
}

fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let ad = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out).expect("sized above")
}

fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, k_h, k_w) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let out_h = (h + 2 * pad - k_h) / stride + 1;
    let out_w = (wd + 2 * pad - k_w) / stride + 1;
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![0.0; c_out * out_h * out_w];
    for o in 0..c_out {
        for i in 0..out_h {
            for j in 0..out_w {
                let mut acc = 0.0;
                for c in 0..c_in {
                    for a in 0..k_h {
                        let hi = (i * stride + a) as isize - pad as isize;
                        if hi < 0 || hi >= h as isize {
                            continue;
                        }
                        for b in 0..k_w {
                            let wi = (j * stride + b) as isize - pad as isize;
                            if wi < 0 || wi >= wd as isize {
                                continue;
                            }
                            acc += xd[idx3(c, hi as usize, wi as usize, h, wd)]
                                * wdat[idx4(o, c, a, b, c_in, k_h, k_w)];
                        }
                    }
                }
                out[idx3(o, i, j, out_h, out_w)] = acc;
            }
        }
    }
    Tensor::new(vec![c_out, out_h, out_w], out).expect("sized above")
}

fn conv_input_grad(gy: &Tensor, w: &Tensor, stride: usize, pad: usize, in_h: usize, in_w: usize) -> Tensor {
    let (c_out, out_h, out_w) = (gy.shape()[0], gy.shape()[1], gy.shape()[2]);
    let (c_in, k_h, k_w) = (w.shape()[1], w.shape()[2], w.shape()[3]);
    let (gd, wdat) = (gy.data(), w.data());
    let mut gx = vec![0.0; c_in * in_h * in_w];
    for o in 0..c_out {
        for i in 0..out_h {
            for j in 0..out_w {
                let g = gd[idx3(o, i, j, out_h, out_w)];
                for c in 0..c_in {
                    for a in 0..k_h {
                        let hi = (i * stride + a) as isize - pad as isize;
                        if hi < 0 || hi >= in_h as isize {
                            continue;
                        }
                        for b in 0..k_w {
                            let wi = (j * stride + b) as isize - pad as isize;
                            if wi < 0 || wi >= in_w as isize {
                                continue;
                            }
                            gx[idx3(c, hi as usize, wi as usize, in_h, in_w)] +=
                                g * wdat[idx4(o, c, a, b, c_in, k_h, k_w)];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_in, in_h, in_w], gx).expect("sized above")
}

fn conv_kernel_grad(x: &Tensor, gy: &Tensor, stride: usize, pad: usize, k_h: usize, k_w: usize) -> Tensor {
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, out_h, out_w) = (gy.shape()[0], gy.shape()[1], gy.shape()[2]);
    let (xd, gd) = (x.data(), gy.data());
    let mut gw = vec![0.0; c_out * c_in * k_h * k_w];
    for o in 0..c_out {
        for i in 0..out_h {
            for j in 0..out_w {
                let g = gd[idx3(o, i, j, out_h, out_w)];
                for c in 0..c_in {
                    for a in 0..k_h {
                        let hi = (i * stride + a) as isize - pad as isize;
                        if hi < 0 || hi >= h as isize {
                            continue;
                        }
                        for b in 0..k_w {
                            let wi = (j * stride + b) as isize - pad as isize;
                            if wi < 0 || wi >= wd as isize {
                                continue;
                            }
                            gw[idx4(o, c, a, b, c_in, k_h, k_w)] +=
                                g * xd[idx3(c, hi as usize, wi as usize, h, wd)];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, c_in, k_h, k_w], gw).expect("sized above")
}

fn softmax(logits: &Tensor) -> Tensor {
    let d = logits.data();
    let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = d.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::new(logits.shape().to_vec(), exps.into_iter().map(|e| e / total).collect()).expect("same shape")
}

fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Tensor {
    let d = logits.data();
    let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = d.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    Tensor::scalar(log_sum + max - d[label])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_single(g: &Graph, b: &Bindings, id: NodeId) -> Tensor {
        g.eval(b, &[id]).unwrap().get(id).clone()
    }

    #[test]
    fn square_of_scalar() {
        let mut g = Graph::new();
        let x = g.input(&[]);
        let y = g.mul(x, x).unwrap();
        let mut b = Bindings::new();
        b.bind(x, Tensor::scalar(3.0));
        assert_eq!(eval_single(&g, &b, y).item(), 9.0);
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.input(&[3]);
        let y = g.relu(x);
        let mut b = Bindings::new();
        b.bind(x, Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        assert_eq!(eval_single(&g, &b, y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn conv2d_direct_arithmetic() {
        // 2x2 input against identity-diagonal 2x2 kernel, stride 1, no pad.
        let mut g = Graph::new();
        let x = g.input(&[1, 2, 2]);
        let w = g.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = g.conv2d(x, w, 1, 0).unwrap();
        let mut b = Bindings::new();
        b.bind(x, Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = eval_single(&g, &b, y);
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn softmax_cross_entropy_values() {
        let mut g = Graph::new();
        let x = g.input(&[4]);
        let l = g.softmax_cross_entropy(x, 2).unwrap();
        let mut b = Bindings::new();
        b.bind(x, Tensor::from_vec(vec![0.5, 0.5, 0.5, 0.5]));
        let v = eval_single(&g, &b, l).item();
        assert!((v - 4.0f64.ln()).abs() < 1e-12);

        // Saturated case stays finite and close to zero.
        let mut g = Graph::new();
        let x = g.input(&[2]);
        let l = g.softmax_cross_entropy(x, 0).unwrap();
        let mut b = Bindings::new();
        b.bind(x, Tensor::from_vec(vec![30.0, -30.0]));
        let v = eval_single(&g, &b, l).item();
        assert!(v.abs() < 1e-12);

        // -log(e^1 / (e^1 + e^2)) by direct arithmetic.
        let mut g = Graph::new();
        let x = g.input(&[2]);
        let l = g.softmax_cross_entropy(x, 0).unwrap();
        let mut b = Bindings::new();
        b.bind(x, Tensor::from_vec(vec![1.0, 2.0]));
        let v = eval_single(&g, &b, l).item();
        let expected = -(1.0f64.exp() / (1.0f64.exp() + 2.0f64.exp())).ln();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 1.313262).abs() < 1e-6);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(&[3]);
        assert!(matches!(
            g.softmax_cross_entropy(x, 3),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn first_derivative_of_square() {
        let mut g = Graph::new();
        let x = g.input(&[]);
        let y = g.mul(x, x).unwrap();
        let dx = g.grad(y, &[x]).unwrap()[0];
        let mut b = Bindings::new();
        b.bind(x, Tensor::scalar(3.0));
        assert_eq!(eval_single(&g, &b, dx).item(), 6.0);
    }

    #[test]
    fn second_derivative_of_cube() {
        let mut g = Graph::new();
        let x = g.input(&[]);
        let x2 = g.square(x);
        let y = g.mul(x2, x).unwrap();
        let dy = g.grad(y, &[x]).unwrap()[0];
        let d2y = g.grad(dy, &[x]).unwrap()[0];
        let mut b = Bindings::new();
        b.bind(x, Tensor::scalar(2.0));
        assert_eq!(eval_single(&g, &b, dy).item(), 12.0); // 3x^2
        assert_eq!(eval_single(&g, &b, d2y).item(), 12.0); // 6x
    }

    #[test]
    fn cross_entropy_gradient_uniform_softmax() {
        let mut g = Graph::new();
        let x = g.input(&[3]);
        let l = g.softmax_cross_entropy(x, 1).unwrap();
        let dx = g.grad(l, &[x]).unwrap()[0];
        let mut b = Bindings::new();
        b.bind(x, Tensor::from_vec(vec![0.0, 0.0, 0.0]));
        let got = eval_single(&g, &b, dx);
        let expected = [1.0 / 3.0, -2.0 / 3.0, 1.0 / 3.0];
        for (a, e) in got.data().iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn unreachable_node_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.input(&[]);
        let z = g.input(&[2]);
        let y = g.square(x);
        let grads = g.grad(y, &[x, z]).unwrap();
        let mut b = Bindings::new();
        b.bind(x, Tensor::scalar(1.5));
        b.bind(z, Tensor::from_vec(vec![9.0, 9.0]));
        assert_eq!(eval_single(&g, &b, grads[1]).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut g = Graph::new();
        let x = g.input(&[2]);
        let y = g.relu(x);
        assert!(matches!(g.grad(y, &[x]), Err(Error::NonScalarOutput { .. })));
    }

    #[test]
    fn forward_requires_bindings_with_declared_shape() {
        let mut g = Graph::new();
        let x = g.input(&[2, 2]);
        let _ = g.relu(x);
        let mut b = Bindings::new();
        b.bind(x, Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        assert!(matches!(g.forward(&b), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(g.forward(&Bindings::new()), Err(Error::UnboundInput { .. })));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut g = Graph::new();
        let x = g.input(&[2, 3]);
        let w = g.constant(Tensor::new(vec![3, 2], (0..6).map(|i| 0.3 * i as f64).collect()).unwrap());
        let m = g.matmul(x, w).unwrap();
        let s = g.sum(m);
        let _ = g.grad(s, &[x]).unwrap();
        let mut b = Bindings::new();
        b.bind(
            x,
            Tensor::new(vec![2, 3], vec![0.1, -0.7, 3.3, 0.25, -1.5, 2.0]).unwrap(),
        );
        let v1 = g.forward(&b).unwrap();
        let v2 = g.forward(&b).unwrap();
        for id in 0..g.len() {
            let (a, c) = (v1.get(id), v2.get(id));
            assert_eq!(a.shape(), c.shape());
            for (p, q) in a.data().iter().zip(c.data()) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }
}
