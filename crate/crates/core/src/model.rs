//! Small image classifiers built on the autodiff graph, exposing per-layer
//! activation traces and flattened parameter gradients.

use std::sync::Arc;

use rand::Rng as _;

use crate::autodiff::{Bindings, Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    Flatten,
    Linear {
        out_features: usize,
    },
}

/// Architecture description. Input is `[channels, height, width]`; the final
/// layer must produce exactly `classes` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

impl ModelSpec {
    /// Default desk-scale ConvNet on 1x16x16 inputs: two 3x3 conv/ReLU stages
    /// (the second at stride 2) followed by a linear head.
    pub fn convnet_s(classes: usize) -> Self {
        ModelSpec {
            input: [1, 16, 16],
            layers: vec![
                LayerSpec::Conv { out_channels: 8, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::Relu,
                LayerSpec::Conv { out_channels: 8, kernel: 3, stride: 2, pad: 1 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Linear { out_features: classes },
            ],
            classes,
        }
    }

    /// Shape after each layer; errors name the first offending layer.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::ModelBuild { layer: 0, message: "empty layer list".into() });
        }
        if self.classes == 0 {
            return Err(Error::ModelBuild { layer: 0, message: "class count must be positive".into() });
        }
        let mut shape: Vec<usize> = self.input.to_vec();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::ModelBuild { layer: 0, message: format!("invalid input shape {shape:?}") });
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                LayerSpec::Conv { out_channels, kernel, stride, pad } => {
                    if shape.len() != 3 {
                        return Err(Error::ModelBuild {
                            layer: i,
                            message: format!("conv expects [C,H,W] input, got {shape:?}"),
                        });
                    }
                    if *out_channels == 0 || *kernel == 0 || *stride == 0 {
                        return Err(Error::ModelBuild {
                            layer: i,
                            message: "conv sizes must be positive".into(),
                        });
                    }
                    let (h, w) = (shape[1], shape[2]);
                    if h + 2 * pad < *kernel || w + 2 * pad < *kernel {
                        return Err(Error::ModelBuild {
                            layer: i,
                            message: format!("kernel {kernel} exceeds padded input {h}x{w}"),
                        });
                    }
                    let oh = (h + 2 * pad - kernel) / stride + 1;
                    let ow = (w + 2 * pad - kernel) / stride + 1;
                    vec![*out_channels, oh, ow]
                }
                LayerSpec::Relu => shape,
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Linear { out_features } => {
                    if shape.len() != 1 {
                        return Err(Error::ModelBuild {
                            layer: i,
                            message: format!("linear expects flattened input, got {shape:?}"),
                        });
                    }
                    if *out_features == 0 {
                        return Err(Error::ModelBuild {
                            layer: i,
                            message: "linear out_features must be positive".into(),
                        });
                    }
                    vec![*out_features]
                }
            };
            shapes.push(shape.clone());
        }
        if shape != [self.classes] {
            return Err(Error::ModelBuild {
                layer: self.layers.len() - 1,
                message: format!("final output shape {shape:?} does not match {} classes", self.classes),
            });
        }
        Ok(shapes)
    }

    /// Canonical single form of the spec; also the on-disk config syntax.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("input = {}x{}x{}\n", self.input[0], self.input[1], self.input[2]));
        out.push_str(&format!("classes = {}\n", self.classes));
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv { out_channels, kernel, stride, pad } => out.push_str(&format!(
                    "layer = conv out={out_channels} kernel={kernel} stride={stride} pad={pad}\n"
                )),
                LayerSpec::Relu => out.push_str("layer = relu\n"),
                LayerSpec::Flatten => out.push_str("layer = flatten\n"),
                LayerSpec::Linear { out_features } => {
                    out.push_str(&format!("layer = linear out={out_features}\n"))
                }
            }
        }
        out
    }

    /// 64-bit FNV-1a over the canonical text.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(self.canonical_text().as_bytes())
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Clone, Debug)]
pub struct ParamInfo {
    pub name: String,
    pub layer: usize,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

/// Declaration-order parameter layout with a stable flattening order.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub params: Vec<ParamInfo>,
    offsets: Vec<usize>,
    total: usize,
}

impl ParamLayout {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let shapes = spec.layer_shapes()?;
        let mut params = Vec::new();
        let mut in_shape: Vec<usize> = spec.input.to_vec();
        for (i, layer) in spec.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv { out_channels, kernel, .. } => {
                    let fan_in = in_shape[0] * kernel * kernel;
                    params.push(ParamInfo {
                        name: format!("layer{i}.conv.weight"),
                        layer: i,
                        kind: ParamKind::Weight,
                        shape: vec![*out_channels, in_shape[0], *kernel, *kernel],
                        fan_in,
                    });
                    params.push(ParamInfo {
                        name: format!("layer{i}.conv.bias"),
                        layer: i,
                        kind: ParamKind::Bias,
                        shape: vec![*out_channels],
                        fan_in,
                    });
                }
                LayerSpec::Linear { out_features } => {
                    let fan_in = in_shape[0];
                    params.push(ParamInfo {
                        name: format!("layer{i}.linear.weight"),
                        layer: i,
                        kind: ParamKind::Weight,
                        shape: vec![*out_features, in_shape[0]],
                        fan_in,
                    });
                    params.push(ParamInfo {
                        name: format!("layer{i}.linear.bias"),
                        layer: i,
                        kind: ParamKind::Bias,
                        shape: vec![*out_features],
                        fan_in,
                    });
                }
                LayerSpec::Relu | LayerSpec::Flatten => {}
            }
            in_shape = shapes[i].clone();
        }
        let mut offsets = Vec::with_capacity(params.len());
        let mut total = 0;
        for p in &params {
            offsets.push(total);
            total += crate::tensor::numel(&p.shape);
        }
        Ok(ParamLayout { params, offsets, total })
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn offset(&self, index: usize) -> usize {
        self.offsets[index]
    }

    /// Slice a flat gradient into the tensor for parameter `index`.
    pub fn slice<'a>(&self, flat: &'a [f64], index: usize) -> &'a [f64] {
        let start = self.offsets[index];
        let len = crate::tensor::numel(&self.params[index].shape);
        &flat[start..start + len]
    }
}

/// Named parameter tensors in declaration order.
#[derive(Clone, Debug)]
pub struct ParamStore {
    layout: ParamLayout,
    tensors: Vec<Arc<Tensor>>,
}

impl ParamStore {
    /// Deterministic initialization: weights uniform in
    /// (-1/sqrt(fan_in), +1/sqrt(fan_in)) from a per-parameter xoshiro256++
    /// stream, biases zero.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let layout = ParamLayout::from_spec(spec)?;
        let base = rng::derive(seed, stream::PARAM_INIT);
        let tensors = layout
            .params
            .iter()
            .enumerate()
            .map(|(i, info)| {
                let n = crate::tensor::numel(&info.shape);
                let data = match info.kind {
                    ParamKind::Bias => vec![0.0; n],
                    ParamKind::Weight => {
                        let bound = 1.0 / (info.fan_in as f64).sqrt();
                        let mut r = rng::rng_from(rng::derive(base, i as u64));
                        (0..n).map(|_| r.gen::<f64>() * 2.0 * bound - bound).collect()
                    }
                };
                Arc::new(Tensor::new(info.shape.clone(), data).expect("layout shapes are valid"))
            })
            .collect();
        Ok(ParamStore { layout, tensors })
    }

    pub fn from_tensors(layout: ParamLayout, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != layout.params.len() {
            return Err(Error::Invalid(format!(
                "expected {} parameter tensors, got {}",
                layout.params.len(),
                tensors.len()
            )));
        }
        for (info, t) in layout.params.iter().zip(&tensors) {
            if t.shape() != info.shape {
                return Err(Error::shape(format!("parameter {}", info.name), &info.shape, t.shape()));
            }
        }
        Ok(ParamStore {
            layout,
            tensors: tensors.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn tensors(&self) -> &[Arc<Tensor>] {
        &self.tensors
    }

    /// Flatten all parameters into one vector in declaration order; the
    /// round trip through `from_flat` is bit-exact.
    pub fn flatten(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.layout.total);
        for t in &self.tensors {
            data.extend_from_slice(t.data());
        }
        Tensor::from_vec(data)
    }

    pub fn from_flat(layout: ParamLayout, flat: &Tensor) -> Result<Self> {
        if flat.numel() != layout.total {
            return Err(Error::GradientLength { expected: layout.total, actual: flat.numel() });
        }
        let tensors = layout
            .params
            .iter()
            .enumerate()
            .map(|(i, info)| {
                let data = layout.slice(flat.data(), i).to_vec();
                Arc::new(Tensor::new(info.shape.clone(), data).expect("layout shapes are valid"))
            })
            .collect();
        Ok(ParamStore { layout, tensors })
    }
}

/// Where a trace entry came from: the layer whose output the ReLU gates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceSource {
    Conv,
    Linear,
    Other,
}

#[derive(Clone, Debug)]
pub struct TraceSlot {
    pub node: NodeId,
    /// Model layer index of the ReLU producing this entry.
    pub layer: usize,
    pub source: TraceSource,
    pub shape: Vec<usize>,
}

/// Post-ReLU activations captured during a forward pass, in layer order.
#[derive(Clone, Debug)]
pub struct ActivationTrace {
    pub entries: Vec<Arc<Tensor>>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Append the model's forward computation to `g`, reading the image from
/// `input` and parameters from `params` (layout order). Returns the logits
/// node and the trace slots for every post-ReLU activation.
pub(crate) fn build_forward(
    g: &mut Graph,
    spec: &ModelSpec,
    input: NodeId,
    params: &[NodeId],
) -> Result<(NodeId, Vec<TraceSlot>)> {
    let shapes = spec.layer_shapes()?;
    let mut cur = input;
    let mut cur_shape: Vec<usize> = spec.input.to_vec();
    let mut param_ix = 0;
    let mut trace = Vec::new();
    let mut prev_kind = TraceSource::Other;
    for (i, layer) in spec.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv { stride, pad, .. } => {
                let w = params[param_ix];
                let b = params[param_ix + 1];
                param_ix += 2;
                let conv = g.conv2d(cur, w, *stride, *pad)?;
                let out_shape = &shapes[i];
                let (oc, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
                // Broadcast the [oc] bias over the spatial grid.
                let b_col = g.reshape(b, &[oc, 1])?;
                let ones = g.constant(Tensor::filled(&[1, oh * ow], 1.0));
                let b_mat = g.matmul(b_col, ones)?;
                let b_img = g.reshape(b_mat, &[oc, oh, ow])?;
                cur = g.add(conv, b_img)?;
                prev_kind = TraceSource::Conv;
            }
            LayerSpec::Relu => {
                cur = g.relu(cur);
                trace.push(TraceSlot {
                    node: cur,
                    layer: i,
                    source: prev_kind,
                    shape: shapes[i].clone(),
                });
            }
            LayerSpec::Flatten => {
                cur = g.reshape(cur, &shapes[i])?;
                prev_kind = TraceSource::Other;
            }
            LayerSpec::Linear { out_features } => {
                let w = params[param_ix];
                let b = params[param_ix + 1];
                param_ix += 2;
                let x_col = g.reshape(cur, &[cur_shape[0], 1])?;
                let wx = g.matmul(w, x_col)?;
                let v = g.reshape(wx, &[*out_features])?;
                cur = g.add(v, b)?;
                prev_kind = TraceSource::Linear;
            }
        }
        cur_shape = shapes[i].clone();
    }
    Ok((cur, trace))
}

/// A built model: the forward graph plus handles for binding and reading.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    graph: Graph,
    input: NodeId,
    param_nodes: Vec<NodeId>,
    logits: NodeId,
    trace_slots: Vec<TraceSlot>,
}

/// Build the forward graph and a deterministically initialized store.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<(Model, ParamStore)> {
    let model = Model::build(spec)?;
    let store = ParamStore::init(spec, seed)?;
    Ok((model, store))
}

impl Model {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        let layout = ParamLayout::from_spec(spec)?;
        let mut graph = Graph::new();
        let input = graph.input(&spec.input);
        let param_nodes: Vec<NodeId> = layout.params.iter().map(|p| graph.parameter(&p.shape)).collect();
        let (logits, trace_slots) = build_forward(&mut graph, spec, input, &param_nodes)?;
        Ok(Model { spec: spec.clone(), graph, input, param_nodes, logits, trace_slots })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn trace_slots(&self) -> &[TraceSlot] {
        &self.trace_slots
    }

    fn bindings(&self, store: &ParamStore, x: &Tensor) -> Result<Bindings> {
        if x.shape() != self.spec.input {
            return Err(Error::shape("model input", &self.spec.input, x.shape()));
        }
        let mut b = Bindings::new();
        b.bind(self.input, x.clone());
        for (node, tensor) in self.param_nodes.iter().zip(store.tensors()) {
            b.bind(*node, Arc::clone(tensor));
        }
        Ok(b)
    }

    /// Logits plus every post-ReLU activation; a pure function of its inputs.
    pub fn forward_with_trace(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, ActivationTrace)> {
        let b = self.bindings(store, x)?;
        let mut outputs: Vec<NodeId> = vec![self.logits];
        outputs.extend(self.trace_slots.iter().map(|slot| slot.node));
        let values = self.graph.eval(&b, &outputs)?;
        let logits = values.get(self.logits).clone();
        let entries = self.trace_slots.iter().map(|slot| values.get_shared(slot.node)).collect();
        Ok((logits, ActivationTrace { entries }))
    }

    pub fn logits(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_trace(store, x)?.0)
    }

    /// Cross-entropy loss and its gradient for every parameter, reusable
    /// across bindings (params and input are rebindable leaves).
    pub fn grad_fn(&self, label: usize) -> Result<GradFn> {
        let mut graph = self.graph.clone();
        let loss = graph.softmax_cross_entropy(self.logits, label)?;
        let grads = graph.grad(loss, &self.param_nodes)?;
        Ok(GradFn {
            graph,
            input: self.input,
            param_nodes: self.param_nodes.clone(),
            input_shape: self.spec.input.to_vec(),
            loss,
            grads,
        })
    }
}

/// Evaluates the per-sample cross-entropy loss and parameter gradient.
pub struct GradFn {
    graph: Graph,
    input: NodeId,
    param_nodes: Vec<NodeId>,
    input_shape: Vec<usize>,
    loss: NodeId,
    grads: Vec<NodeId>,
}

impl GradFn {
    pub fn eval(&self, store: &ParamStore, x: &Tensor) -> Result<(f64, Vec<Arc<Tensor>>)> {
        if x.shape() != self.input_shape {
            return Err(Error::shape("model input", &self.input_shape, x.shape()));
        }
        let mut b = Bindings::new();
        b.bind(self.input, x.clone());
        for (node, tensor) in self.param_nodes.iter().zip(store.tensors()) {
            b.bind(*node, Arc::clone(tensor));
        }
        let mut outputs = vec![self.loss];
        outputs.extend_from_slice(&self.grads);
        let values = self.graph.eval(&b, &outputs)?;
        let loss = values.get(self.loss).item();
        let grads = self.grads.iter().map(|&gid| values.get_shared(gid)).collect();
        Ok((loss, grads))
    }

    pub fn flat(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let (_, grads) = self.eval(store, x)?;
        let mut data = Vec::new();
        for g in grads {
            data.extend_from_slice(g.data());
        }
        Ok(Tensor::from_vec(data))
    }
}

/// Flattened gradient of the single-sample cross-entropy loss with respect to
/// all parameters, in `ParamStore` flattening order.
pub fn param_gradient(model: &Model, store: &ParamStore, x: &Tensor, label: usize) -> Result<Tensor> {
    model.grad_fn(label)?.flat(store, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_arithmetic() {
        // conv 1->4 k3 s1 p1 on 1x8x8, relu, flatten, linear 256->3.
        let spec = ModelSpec {
            input: [1, 8, 8],
            layers: vec![
                LayerSpec::Conv { out_channels: 4, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Linear { out_features: 3 },
            ],
            classes: 3,
        };
        let layout = ParamLayout::from_spec(&spec).unwrap();
        assert_eq!(layout.total_len(), 4 * 1 * 9 + 4 + 256 * 3 + 3);
        assert_eq!(layout.total_len(), 811);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = ModelSpec::convnet_s(4);
        let a = ParamStore::init(&spec, 99).unwrap();
        let b = ParamStore::init(&spec, 99).unwrap();
        let (fa, fb) = (a.flatten(), b.flatten());
        assert!(fa.data().iter().zip(fb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = ParamStore::init(&spec, 100).unwrap();
        assert_ne!(fa.data(), c.flatten().data());
    }

    #[test]
    fn empty_layer_list_is_rejected() {
        let spec = ModelSpec { input: [1, 4, 4], layers: vec![], classes: 2 };
        assert!(matches!(spec.layer_shapes(), Err(Error::ModelBuild { .. })));
    }

    #[test]
    fn miscomposed_layers_name_the_offender() {
        let spec = ModelSpec {
            input: [1, 4, 4],
            layers: vec![LayerSpec::Linear { out_features: 2 }],
            classes: 2,
        };
        match spec.layer_shapes() {
            Err(Error::ModelBuild { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("expected ModelBuild error, got {other:?}"),
        }
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let spec = ModelSpec::convnet_s(3);
        let store = ParamStore::init(&spec, 7).unwrap();
        let flat = store.flatten();
        let back = ParamStore::from_flat(store.layout().clone(), &flat).unwrap();
        for (a, b) in store.tensors().iter().zip(back.tensors()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn flatten_order_follows_declaration() {
        let spec = ModelSpec::convnet_s(3);
        let layout = ParamLayout::from_spec(&spec).unwrap();
        let names: Vec<&str> = layout.params.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "layer0.conv.weight",
                "layer0.conv.bias",
                "layer2.conv.weight",
                "layer2.conv.bias",
                "layer5.linear.weight",
                "layer5.linear.bias"
            ]
        );
        // Distinct marker values land at the layout offsets.
        let mut tensors: Vec<Tensor> = layout
            .params
            .iter()
            .map(|p| Tensor::zeros(&p.shape))
            .collect();
        for (i, t) in tensors.iter_mut().enumerate() {
            t.data_mut()[0] = (i + 1) as f64;
        }
        let store = ParamStore::from_tensors(layout.clone(), tensors).unwrap();
        let flat = store.flatten();
        for i in 0..layout.params.len() {
            assert_eq!(flat.data()[layout.offset(i)], (i + 1) as f64);
        }
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let spec = ModelSpec::convnet_s(4);
        let layout = ParamLayout::from_spec(&spec).unwrap();
        let zeros = layout.params.iter().map(|p| Tensor::zeros(&p.shape)).collect();
        let store = ParamStore::from_tensors(layout, zeros).unwrap();
        let model = Model::build(&spec).unwrap();
        let x = Tensor::filled(&[1, 16, 16], 0.5);
        let logits = model.logits(&store, &x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trace_is_nonnegative_and_pure() {
        let spec = ModelSpec::convnet_s(4);
        let (model, store) = build_model(&spec, 3).unwrap();
        let x = Tensor::filled(&[1, 16, 16], 0.25);
        let (_, t1) = model.forward_with_trace(&store, &x).unwrap();
        let (_, t2) = model.forward_with_trace(&store, &x).unwrap();
        assert_eq!(t1.len(), 2);
        for (a, b) in t1.entries.iter().zip(&t2.entries) {
            assert!(a.data().iter().all(|&v| v >= 0.0));
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn single_linear_layer_matches_matrix_vector_product() {
        let spec = ModelSpec {
            input: [2, 1, 1],
            layers: vec![LayerSpec::Flatten, LayerSpec::Linear { out_features: 3 }],
            classes: 3,
        };
        let layout = ParamLayout::from_spec(&spec).unwrap();
        let w = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[3]);
        let store = ParamStore::from_tensors(layout, vec![w, b]).unwrap();
        let model = Model::build(&spec).unwrap();
        let x = Tensor::new(vec![2, 1, 1], vec![1.0, 2.0]).unwrap();
        let logits = model.logits(&store, &x).unwrap();
        assert_eq!(logits.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn doubling_the_loss_doubles_the_gradient() {
        let spec = ModelSpec::convnet_s(3);
        let (model, store) = build_model(&spec, 11).unwrap();
        let x = Tensor::filled(&[1, 16, 16], 0.3);

        let g1 = param_gradient(&model, &store, &x, 1).unwrap();

        // Same graph with the loss explicitly scaled by two.
        let mut graph = model.graph.clone();
        let loss = graph.softmax_cross_entropy(model.logits, 1).unwrap();
        let scaled = graph.scalar_mul(2.0, loss);
        let grads = graph.grad(scaled, &model.param_nodes).unwrap();
        let mut b = Bindings::new();
        b.bind(model.input, x.clone());
        for (node, tensor) in model.param_nodes.iter().zip(store.tensors()) {
            b.bind(*node, Arc::clone(tensor));
        }
        let values = graph.eval(&b, &grads).unwrap();
        let mut doubled = Vec::new();
        for &gid in &grads {
            doubled.extend_from_slice(values.get(gid).data());
        }
        for (a, d) in g1.data().iter().zip(&doubled) {
            assert!((2.0 * a - d).abs() <= 1e-12 * d.abs().max(1.0));
        }
    }
}
