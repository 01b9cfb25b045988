//! The reconstruction loss and its ingredients: gradient cosine matching,
//! total variation, activation matching, and Gram-matrix style matching.
//!
//! Each ingredient exists twice: as a plain function over tensors, and as a
//! graph assembly (`ReconLoss`) whose value is differentiable with respect to
//! the candidate image, including through the captured-gradient match (which
//! requires differentiating a gradient).

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::autodiff::{Bindings, Graph, NodeId};
use crate::error::{Error, Result};
use crate::model::{build_forward, ActivationTrace, ModelSpec, ParamLayout, ParamStore, TraceSlot, TraceSource};
use crate::tensor::{numel, Tensor};

/// Candidate-gradient norms at or below this are treated as zero for the
/// cosine denominator; the loss is then 1 by the orthogonality convention.
const ZERO_NORM_GUARD: f64 = 1e-60;

/// Which activation-trace entries contribute to the style term.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StyleLayers {
    /// All trace entries gated by a convolution output (the default).
    ConvOutputs,
    All,
    Selected(Vec<usize>),
}

/// Scaling coefficients for the combined reconstruction loss
/// `L_r = s_g * (l_g + alpha_tv * TV) + s_a * l_a + s_s * l_s`.
#[derive(Clone, Debug)]
pub struct LossWeights {
    pub s_g: f64,
    pub s_a: f64,
    pub s_s: f64,
    pub alpha_tv: f64,
    /// Per-trace-entry weights for the activation term; absent entries
    /// default to 1.
    pub layer_weights: BTreeMap<usize, f64>,
    pub style_layers: StyleLayers,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            s_a: 1.0,
            s_g: 10.0,
            s_s: 10_000.0,
            alpha_tv: 1e-6,
            layer_weights: BTreeMap::new(),
            style_layers: StyleLayers::ConvOutputs,
        }
    }
}

impl LossWeights {
    /// The plain gradient-matching attack: cosine loss plus TV only.
    pub fn gradient_only() -> Self {
        LossWeights {
            s_g: 1.0,
            s_a: 0.0,
            s_s: 0.0,
            alpha_tv: 1e-6,
            layer_weights: BTreeMap::new(),
            style_layers: StyleLayers::ConvOutputs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("s_g", self.s_g),
            ("s_a", self.s_a),
            ("s_s", self.s_s),
            ("alpha_tv", self.alpha_tv),
        ];
        for (name, v) in scalars {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Invalid(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        for (&k, &v) in &self.layer_weights {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Invalid(format!("layer weight {k} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn layer_weight(&self, trace_index: usize) -> f64 {
        self.layer_weights.get(&trace_index).copied().unwrap_or(1.0)
    }

    pub fn uses_prior(&self) -> bool {
        self.s_a > 0.0 || self.s_s > 0.0
    }

    /// Trace indices the style term runs over, validated against the model.
    pub fn resolve_style_layers(&self, slots: &[TraceSlot]) -> Result<Vec<usize>> {
        match &self.style_layers {
            StyleLayers::ConvOutputs => Ok(slots
                .iter()
                .enumerate()
                .filter(|(_, s)| s.source == TraceSource::Conv)
                .map(|(i, _)| i)
                .collect()),
            StyleLayers::All => Ok((0..slots.len()).collect()),
            StyleLayers::Selected(ixs) => {
                for &i in ixs {
                    if i >= slots.len() {
                        return Err(Error::Invalid(format!(
                            "style layer {i} does not exist (trace has {} entries)",
                            slots.len()
                        )));
                    }
                }
                Ok(ixs.clone())
            }
        }
    }
}

/// The victim's serialized gradient plus metadata; the attack's sole
/// mandatory input.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCapture {
    pub flat: Tensor,
    pub fingerprint: u64,
    pub label: Option<usize>,
    pub train_steps: u32,
}

// ---- plain (host-side) loss functions ------------------------------------

/// `1 - <g, g'> / (|g| |g'|)`, clamped into [0, 2]. A zero candidate norm
/// yields loss 1 and a raised flag; a zero target norm is an error.
pub fn gradient_cosine_loss(target: &Tensor, candidate: &Tensor) -> Result<(f64, bool)> {
    if target.numel() != candidate.numel() {
        return Err(Error::shape("gradient_cosine_loss", target.shape(), candidate.shape()));
    }
    let (t, c) = (target.data(), candidate.data());
    let tn = t.iter().map(|x| x * x).sum::<f64>().sqrt();
    if tn == 0.0 {
        return Err(Error::Invalid("target gradient has zero norm".into()));
    }
    let cn = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    if cn == 0.0 {
        return Ok((1.0, true));
    }
    let ip: f64 = t.iter().zip(c).map(|(a, b)| a * b).sum();
    Ok(((1.0 - ip / (tn * cn)).clamp(0.0, 2.0), false))
}

/// Anisotropic total variation over a `[C, H, W]` image.
pub fn total_variation(image: &Tensor) -> Result<f64> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::invalid_shape("total_variation", format!("expected [C,H,W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let d = image.data();
    let mut tv = 0.0;
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for i in 0..h.saturating_sub(1) {
            for j in 0..w {
                tv += (plane[(i + 1) * w + j] - plane[i * w + j]).abs();
            }
        }
        for i in 0..h {
            for j in 0..w.saturating_sub(1) {
                tv += (plane[i * w + j + 1] - plane[i * w + j]).abs();
            }
        }
    }
    Ok(tv)
}

/// Weighted sum over trace entries of the per-element-normalized L1
/// difference: `sum_j w_j / N_j * |a_j(x') - a_j(x)|_1`.
pub fn activation_match_loss(
    candidate: &ActivationTrace,
    prior: &ActivationTrace,
    weights: &LossWeights,
) -> Result<f64> {
    if candidate.len() != prior.len() {
        return Err(Error::Invalid(format!(
            "trace lengths differ: {} vs {}",
            candidate.len(),
            prior.len()
        )));
    }
    let mut total = 0.0;
    for (j, (a, b)) in candidate.entries.iter().zip(&prior.entries).enumerate() {
        if a.shape() != b.shape() {
            return Err(Error::shape(format!("activation trace layer {j}"), a.shape(), b.shape()));
        }
        let w = weights.layer_weight(j);
        if w == 0.0 {
            continue;
        }
        let l1: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
        total += w * l1 / a.numel() as f64;
    }
    Ok(total)
}

/// Channel Gram matrix `G[c,c'] = 1/(C*H*W) * sum_hw a[c,h,w] a[c',h,w]`.
/// Rank-1 activations are treated as `[N, 1, 1]`.
pub fn gram_matrix(activation: &Tensor) -> Result<Tensor> {
    let s = activation.shape();
    let (c, hw) = match s.len() {
        3 => (s[0], s[1] * s[2]),
        1 => (s[0], 1),
        _ => {
            return Err(Error::invalid_shape(
                "gram_matrix",
                format!("expected [C,H,W] or [N], got {s:?}"),
            ))
        }
    };
    let d = activation.data();
    let norm = 1.0 / (c * hw) as f64;
    let mut out = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let (a, b) = (&d[i * hw..(i + 1) * hw], &d[j * hw..(j + 1) * hw]);
            out[i * c + j] = norm * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        }
    }
    Tensor::new(vec![c, c], out)
}

/// Squared Frobenius norm of the Gram difference, summed over the selected
/// trace entries.
pub fn style_loss(candidate: &ActivationTrace, prior: &ActivationTrace, style_layers: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &j in style_layers {
        if j >= candidate.len() || j >= prior.len() {
            return Err(Error::Invalid(format!("style layer {j} does not exist")));
        }
        if candidate.entries[j].shape() != prior.entries[j].shape() {
            return Err(Error::shape(
                format!("style trace layer {j}"),
                candidate.entries[j].shape(),
                prior.entries[j].shape(),
            ));
        }
        let gc = gram_matrix(&candidate.entries[j])?;
        let gp = gram_matrix(&prior.entries[j])?;
        total += gc
            .data()
            .iter()
            .zip(gp.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total)
}

// ---- differentiable assembly ----------------------------------------------

#[derive(Clone, Copy, Debug, Default)]
pub struct LossComponents {
    pub l_g: f64,
    pub tv: f64,
    pub l_a: f64,
    pub l_s: f64,
    /// Candidate gradient had exactly zero norm (cosine fell back to 1).
    pub zero_candidate_grad: bool,
}

impl LossComponents {
    /// Recombine raw components under the given weights.
    pub fn combine(&self, w: &LossWeights) -> f64 {
        w.s_g * (self.l_g + w.alpha_tv * self.tv) + w.s_a * self.l_a + w.s_s * self.l_s
    }
}

pub struct LossEval {
    pub l_r: f64,
    pub components: LossComponents,
    pub grad_x: Option<Tensor>,
}

/// The full reconstruction loss as a graph over the candidate image, with an
/// optional gradient node for the optimizer. Parameters and the captured
/// gradient enter as constants; only the image is rebound per evaluation.
pub struct ReconLoss {
    graph: Graph,
    x: NodeId,
    input_shape: Vec<usize>,
    loss: NodeId,
    l_g: NodeId,
    tv: NodeId,
    l_a: NodeId,
    l_s: NodeId,
    cand_sumsq: NodeId,
    grad_x: Option<NodeId>,
}

impl ReconLoss {
    pub fn build(
        spec: &ModelSpec,
        store: &ParamStore,
        capture: &GradientCapture,
        label: usize,
        prior_trace: Option<&ActivationTrace>,
        weights: &LossWeights,
        with_grad: bool,
    ) -> Result<Self> {
        weights.validate()?;
        let layout = ParamLayout::from_spec(spec)?;
        if capture.flat.numel() != layout.total_len() {
            return Err(Error::GradientLength {
                expected: layout.total_len(),
                actual: capture.flat.numel(),
            });
        }
        if weights.uses_prior() && prior_trace.is_none() {
            return Err(Error::EmptyPriors);
        }

        let mut g = Graph::new();
        let x = g.input(&spec.input);
        let param_nodes: Vec<NodeId> = store
            .tensors()
            .iter()
            .map(|t| g.constant_shared(Arc::clone(t)))
            .collect();
        let (logits, slots) = build_forward(&mut g, spec, x, &param_nodes)?;
        let ce = g.softmax_cross_entropy(logits, label)?;
        let cand_grads = g.grad(ce, &param_nodes)?;

        // Gradient cosine term, assembled per parameter so the flat capture
        // never needs concatenating inside the graph. The target norm is
        // accumulated with the same per-piece association.
        let mut ip: Option<NodeId> = None;
        let mut sumsq: Option<NodeId> = None;
        let mut target_sumsq_host = 0.0;
        for (i, info) in layout.params.iter().enumerate() {
            let piece = Tensor::new(info.shape.clone(), layout.slice(capture.flat.data(), i).to_vec())
                .expect("layout slice matches shape");
            target_sumsq_host += piece.data().iter().map(|v| v * v).sum::<f64>();
            let t = g.constant(piece);
            let ip_i = g.inner_product(t, cand_grads[i])?;
            ip = Some(match ip {
                None => ip_i,
                Some(prev) => g.add(prev, ip_i)?,
            });
            let sq = g.square(cand_grads[i]);
            let ss_i = g.sum(sq);
            sumsq = Some(match sumsq {
                None => ss_i,
                Some(prev) => g.add(prev, ss_i)?,
            });
        }
        let ip = ip.expect("at least one parameter");
        let cand_sumsq = sumsq.expect("at least one parameter");
        let target_norm = target_sumsq_host.sqrt();
        if target_norm == 0.0 {
            return Err(Error::Invalid("captured gradient has zero norm".into()));
        }
        let guarded = g.max_const(cand_sumsq, ZERO_NORM_GUARD);
        let cand_norm = g.sqrt(guarded);
        let denom = g.scalar_mul(target_norm, cand_norm);
        let frac = g.div(ip, denom)?;
        let one = g.scalar(1.0);
        let raw = g.sub(one, frac)?;
        let l_g = g.max_const(raw, 0.0);

        let tv = build_tv(&mut g, x, spec.input)?;

        let (l_a, l_s) = match prior_trace {
            None => (g.scalar(0.0), g.scalar(0.0)),
            Some(prior) => {
                let l_a = build_activation_match(&mut g, &slots, prior, weights)?;
                let style_ixs = weights.resolve_style_layers(&slots)?;
                let l_s = build_style(&mut g, &slots, prior, &style_ixs)?;
                (l_a, l_s)
            }
        };

        // L_r = s_g*(l_g + alpha*tv) + s_a*l_a + s_s*l_s, in exactly this
        // association so logged components recombine bit-for-bit.
        let alpha_tv = g.scalar_mul(weights.alpha_tv, tv);
        let g_term = g.add(l_g, alpha_tv)?;
        let t1 = g.scalar_mul(weights.s_g, g_term);
        let t2 = g.scalar_mul(weights.s_a, l_a);
        let t3 = g.scalar_mul(weights.s_s, l_s);
        let t12 = g.add(t1, t2)?;
        let loss = g.add(t12, t3)?;

        let grad_x = if with_grad { Some(g.grad(loss, &[x])?[0]) } else { None };

        Ok(ReconLoss {
            graph: g,
            x,
            input_shape: spec.input.to_vec(),
            loss,
            l_g,
            tv,
            l_a,
            l_s,
            cand_sumsq,
            grad_x,
        })
    }

    pub fn eval(&self, x: &Tensor) -> Result<LossEval> {
        if x.shape() != self.input_shape {
            return Err(Error::shape("candidate image", &self.input_shape, x.shape()));
        }
        let mut b = Bindings::new();
        b.bind(self.x, x.clone());
        let mut outputs = vec![self.loss, self.l_g, self.tv, self.l_a, self.l_s, self.cand_sumsq];
        if let Some(gx) = self.grad_x {
            outputs.push(gx);
        }
        let values = self.graph.eval(&b, &outputs)?;
        let components = LossComponents {
            l_g: values.get(self.l_g).item(),
            tv: values.get(self.tv).item(),
            l_a: values.get(self.l_a).item(),
            l_s: values.get(self.l_s).item(),
            zero_candidate_grad: values.get(self.cand_sumsq).item() == 0.0,
        };
        Ok(LossEval {
            l_r: values.get(self.loss).item(),
            components,
            grad_x: self.grad_x.map(|gx| values.get(gx).clone()),
        })
    }
}

/// Anisotropic TV via constant difference matrices, which keeps the term
/// inside the differentiable primitive set.
fn build_tv(g: &mut Graph, x: NodeId, input: [usize; 3]) -> Result<NodeId> {
    let (c, h, w) = (input[0], input[1], input[2]);
    let xr = g.reshape(x, &[c * h, w])?;
    let mut terms: Vec<NodeId> = Vec::new();
    if h >= 2 {
        // Block-diagonal vertical difference operator: one block per channel.
        let rows = c * (h - 1);
        let cols = c * h;
        let mut dv = Tensor::zeros(&[rows, cols]);
        for ch in 0..c {
            for i in 0..h - 1 {
                let r = ch * (h - 1) + i;
                dv.data_mut()[r * cols + ch * h + i] = -1.0;
                dv.data_mut()[r * cols + ch * h + i + 1] = 1.0;
            }
        }
        let dv = g.constant(dv);
        let diffs = g.matmul(dv, xr)?;
        let a = g.abs(diffs);
        terms.push(g.sum(a));
    }
    if w >= 2 {
        // Horizontal differences via a right-multiplied operator.
        let mut dh = Tensor::zeros(&[w, w - 1]);
        for j in 0..w - 1 {
            dh.data_mut()[j * (w - 1) + j] = -1.0;
            dh.data_mut()[(j + 1) * (w - 1) + j] = 1.0;
        }
        let dh = g.constant(dh);
        let diffs = g.matmul(xr, dh)?;
        let a = g.abs(diffs);
        terms.push(g.sum(a));
    }
    match terms.as_slice() {
        [] => Ok(g.scalar(0.0)),
        [one] => Ok(*one),
        [first, second] => g.add(*first, *second),
        _ => unreachable!(),
    }
}

fn build_activation_match(
    g: &mut Graph,
    slots: &[TraceSlot],
    prior: &ActivationTrace,
    weights: &LossWeights,
) -> Result<NodeId> {
    if prior.len() != slots.len() {
        return Err(Error::Invalid(format!(
            "prior trace has {} entries, model produces {}",
            prior.len(),
            slots.len()
        )));
    }
    let mut acc: Option<NodeId> = None;
    for (j, slot) in slots.iter().enumerate() {
        let p = &prior.entries[j];
        if p.shape() != slot.shape {
            return Err(Error::shape(format!("activation trace layer {j}"), &slot.shape, p.shape()));
        }
        let w = weights.layer_weight(j);
        if w == 0.0 {
            continue;
        }
        let pc = g.constant_shared(Arc::clone(p));
        let diff = g.sub(slot.node, pc)?;
        let a = g.abs(diff);
        let s = g.sum(a);
        let term = g.scalar_mul(w / numel(&slot.shape) as f64, s);
        acc = Some(match acc {
            None => term,
            Some(prev) => g.add(prev, term)?,
        });
    }
    Ok(acc.unwrap_or_else(|| g.scalar(0.0)))
}

/// Gram matrix of a trace slot as graph nodes: `1/(C*H*W) * A A^T` with `A`
/// the `[C, H*W]` unfolding.
fn build_gram(g: &mut Graph, slot: &TraceSlot) -> Result<NodeId> {
    let (c, hw) = match slot.shape.len() {
        3 => (slot.shape[0], slot.shape[1] * slot.shape[2]),
        1 => (slot.shape[0], 1),
        _ => {
            return Err(Error::invalid_shape(
                "style layer",
                format!("expected [C,H,W] or [N] activation, got {:?}", slot.shape),
            ))
        }
    };
    let a = g.reshape(slot.node, &[c, hw])?;
    let at = g.transpose(a)?;
    let prod = g.matmul(a, at)?;
    Ok(g.scalar_mul(1.0 / (c * hw) as f64, prod))
}

fn build_style(
    g: &mut Graph,
    slots: &[TraceSlot],
    prior: &ActivationTrace,
    style_ixs: &[usize],
) -> Result<NodeId> {
    let mut acc: Option<NodeId> = None;
    for &j in style_ixs {
        if j >= prior.len() {
            return Err(Error::Invalid(format!("style layer {j} does not exist")));
        }
        let gram_prior = gram_matrix(&prior.entries[j])?;
        let gc = build_gram(g, &slots[j])?;
        let gp = g.constant(gram_prior);
        let diff = g.sub(gc, gp)?;
        let sq = g.square(diff);
        let term = g.sum(sq);
        acc = Some(match acc {
            None => term,
            Some(prev) => g.add(prev, term)?,
        });
    }
    Ok(acc.unwrap_or_else(|| g.scalar(0.0)))
}

/// One-shot evaluation of the combined loss and its components at a given
/// candidate image.
pub fn combined_loss(
    capture: &GradientCapture,
    spec: &ModelSpec,
    store: &ParamStore,
    x_cand: &Tensor,
    label: usize,
    prior_trace: Option<&ActivationTrace>,
    weights: &LossWeights,
) -> Result<(f64, LossComponents)> {
    let rl = ReconLoss::build(spec, store, capture, label, prior_trace, weights, false)?;
    let eval = rl.eval(x_cand)?;
    Ok((eval.l_r, eval.components))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, param_gradient};

    fn trace_of(tensors: Vec<Tensor>) -> ActivationTrace {
        ActivationTrace {
            entries: tensors.into_iter().map(Arc::new).collect(),
        }
    }

    #[test]
    fn cosine_identical_antiparallel_orthogonal() {
        let g = Tensor::from_vec(vec![1.0, 2.0, -3.0]);
        let (l, f) = gradient_cosine_loss(&g, &g).unwrap();
        assert!(l.abs() < 1e-12 && !f);

        let neg = Tensor::from_vec(vec![-1.0, -2.0, 3.0]);
        let (l, _) = gradient_cosine_loss(&g, &neg).unwrap();
        assert!((l - 2.0).abs() < 1e-12);

        let a = Tensor::from_vec(vec![1.0, 0.0]);
        let b = Tensor::from_vec(vec![0.0, 1.0]);
        let (l, _) = gradient_cosine_loss(&a, &b).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_cases() {
        let g = Tensor::from_vec(vec![1.0, 2.0]);
        let z = Tensor::from_vec(vec![0.0, 0.0]);
        let (l, flagged) = gradient_cosine_loss(&g, &z).unwrap();
        assert_eq!(l, 1.0);
        assert!(flagged);
        assert!(gradient_cosine_loss(&z, &g).is_err());
    }

    #[test]
    fn tv_examples() {
        assert_eq!(total_variation(&Tensor::filled(&[2, 4, 4], 0.7)).unwrap(), 0.0);
        let img = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(total_variation(&img).unwrap(), 2.0);
        // Shift invariance.
        let shifted = Tensor::new(vec![1, 2, 2], vec![5.0, 6.0, 5.0, 6.0]).unwrap();
        assert_eq!(total_variation(&img).unwrap(), total_variation(&shifted).unwrap());
    }

    #[test]
    fn activation_match_examples() {
        let w = LossWeights::default();
        let a = trace_of(vec![Tensor::from_vec(vec![1.0, 2.0])]);
        let b = trace_of(vec![Tensor::from_vec(vec![0.0, 0.0])]);
        assert_eq!(activation_match_loss(&a, &a, &w).unwrap(), 0.0);
        assert!((activation_match_loss(&a, &b, &w).unwrap() - 1.5).abs() < 1e-15);

        // Zero weight on deeper layers removes their influence.
        let mut w0 = LossWeights::default();
        w0.layer_weights.insert(1, 0.0);
        let c1 = trace_of(vec![Tensor::from_vec(vec![1.0]), Tensor::from_vec(vec![100.0])]);
        let c2 = trace_of(vec![Tensor::from_vec(vec![1.0]), Tensor::from_vec(vec![-55.0])]);
        let p = trace_of(vec![Tensor::from_vec(vec![0.0]), Tensor::from_vec(vec![1.0])]);
        assert_eq!(
            activation_match_loss(&c1, &p, &w0).unwrap(),
            activation_match_loss(&c2, &p, &w0).unwrap()
        );
    }

    #[test]
    fn activation_match_shape_mismatch_names_layer() {
        let w = LossWeights::default();
        let a = trace_of(vec![Tensor::from_vec(vec![1.0, 2.0])]);
        let b = trace_of(vec![Tensor::from_vec(vec![1.0, 2.0, 3.0])]);
        match activation_match_loss(&a, &b, &w) {
            Err(Error::ShapeMismatch { context, .. }) => assert!(context.contains("layer 0")),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn gram_matrix_examples() {
        // Constant ones: every entry (H*W)/(C*H*W) = 1/C.
        let ones = Tensor::filled(&[4, 3, 5], 1.0);
        let g = gram_matrix(&ones).unwrap();
        assert!(g.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        // C=2, H=1, W=2 with channels [1,2] and [3,4].
        let a = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = gram_matrix(&a).unwrap();
        assert_eq!(g.shape(), &[2, 2]);
        let expected = [1.25, 2.75, 2.75, 6.25];
        for (v, e) in g.data().iter().zip(expected) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn style_loss_examples() {
        let a = trace_of(vec![Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap()]);
        let b = trace_of(vec![Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap()]);
        assert_eq!(style_loss(&a, &a, &[0]).unwrap(), 0.0);
        assert_eq!(style_loss(&a, &b, &[0]).unwrap(), 9.0);

        // Scaling the activation by 2 scales the style term (vs zero prior) by 16.
        let z = trace_of(vec![Tensor::new(vec![1, 1, 1], vec![0.0]).unwrap()]);
        let d = trace_of(vec![Tensor::new(vec![1, 1, 1], vec![4.0]).unwrap()]);
        let base = style_loss(&a, &z, &[0]).unwrap();
        let scaled = style_loss(&d, &z, &[0]).unwrap();
        assert!((scaled - 16.0 * base).abs() < 1e-12);

        assert!(style_loss(&a, &b, &[3]).is_err());
    }

    #[test]
    fn combined_loss_selector_weights_reduce_to_cosine() {
        let spec = ModelSpec::convnet_s(3);
        let (model, store) = build_model(&spec, 5).unwrap();
        let victim = Tensor::filled(&[1, 16, 16], 0.4);
        let grad = param_gradient(&model, &store, &victim, 2).unwrap();
        let capture = GradientCapture {
            flat: grad,
            fingerprint: spec.fingerprint(),
            label: Some(2),
            train_steps: 0,
        };
        let weights = LossWeights {
            s_g: 1.0,
            s_a: 0.0,
            s_s: 0.0,
            alpha_tv: 0.0,
            ..LossWeights::default()
        };
        let mut cand = Tensor::filled(&[1, 16, 16], 0.5);
        cand.data_mut()[17] = 0.9;
        let (l_r, comps) = combined_loss(&capture, &spec, &store, &cand, 2, None, &weights).unwrap();
        let cand_grad = param_gradient(&model, &store, &cand, 2).unwrap();
        let (expected, _) = gradient_cosine_loss(&capture.flat, &cand_grad).unwrap();
        assert!((l_r - expected).abs() < 1e-9, "{l_r} vs {expected}");
        assert!((comps.l_g - expected).abs() < 1e-9);
    }

    #[test]
    fn combined_loss_at_ground_truth_is_zero() {
        let spec = ModelSpec::convnet_s(3);
        let (model, store) = build_model(&spec, 8).unwrap();
        let victim = Tensor::filled(&[1, 16, 16], 0.35);
        let grad = param_gradient(&model, &store, &victim, 1).unwrap();
        let capture = GradientCapture {
            flat: grad,
            fingerprint: spec.fingerprint(),
            label: Some(1),
            train_steps: 0,
        };
        let (_, prior_trace) = model.forward_with_trace(&store, &victim).unwrap();
        let weights = LossWeights {
            alpha_tv: 0.0,
            ..LossWeights::default()
        };
        let (l_r, comps) =
            combined_loss(&capture, &spec, &store, &victim, 1, Some(&prior_trace), &weights).unwrap();
        assert!(l_r.abs() <= 1e-10, "L_r = {l_r}");
        assert_eq!(comps.l_a, 0.0);
        assert_eq!(comps.l_s, 0.0);
    }

    #[test]
    fn components_recombine_exactly() {
        let spec = ModelSpec::convnet_s(4);
        let (model, store) = build_model(&spec, 21).unwrap();
        let victim = Tensor::filled(&[1, 16, 16], 0.6);
        let grad = param_gradient(&model, &store, &victim, 0).unwrap();
        let capture = GradientCapture {
            flat: grad,
            fingerprint: spec.fingerprint(),
            label: Some(0),
            train_steps: 0,
        };
        let mut prior_img = Tensor::filled(&[1, 16, 16], 0.3);
        for (i, v) in prior_img.data_mut().iter_mut().enumerate() {
            *v += 0.002 * (i % 7) as f64;
        }
        let (_, prior_trace) = model.forward_with_trace(&store, &prior_img).unwrap();
        let weights = LossWeights::default();
        let mut cand = Tensor::filled(&[1, 16, 16], 0.45);
        cand.data_mut()[100] = 0.1;
        let (l_r, comps) =
            combined_loss(&capture, &spec, &store, &cand, 0, Some(&prior_trace), &weights).unwrap();
        assert!((l_r - comps.combine(&weights)).abs() < 1e-12);
        assert!(comps.l_g >= 0.0 && comps.tv > 0.0 && comps.l_a > 0.0 && comps.l_s > 0.0);
    }

    #[test]
    fn graph_losses_agree_with_host_functions() {
        let spec = ModelSpec::convnet_s(3);
        let (model, store) = build_model(&spec, 13).unwrap();
        let victim = Tensor::filled(&[1, 16, 16], 0.52);
        let grad = param_gradient(&model, &store, &victim, 2).unwrap();
        let capture = GradientCapture {
            flat: grad.clone(),
            fingerprint: spec.fingerprint(),
            label: Some(2),
            train_steps: 0,
        };
        let mut prior_img = Tensor::filled(&[1, 16, 16], 0.5);
        for (i, v) in prior_img.data_mut().iter_mut().enumerate() {
            *v = 0.2 + 0.6 * ((i * 37 % 11) as f64 / 10.0);
        }
        let (_, prior_trace) = model.forward_with_trace(&store, &prior_img).unwrap();

        let mut cand = Tensor::filled(&[1, 16, 16], 0.48);
        for (i, v) in cand.data_mut().iter_mut().enumerate() {
            *v = 0.1 + 0.8 * ((i * 53 % 17) as f64 / 16.0);
        }

        let weights = LossWeights::default();
        let (_, comps) =
            combined_loss(&capture, &spec, &store, &cand, 2, Some(&prior_trace), &weights).unwrap();

        // Independent host-side recomputation of every component.
        let cand_grad = param_gradient(&model, &store, &cand, 2).unwrap();
        let (cos, _) = gradient_cosine_loss(&capture.flat, &cand_grad).unwrap();
        let (_, cand_trace) = model.forward_with_trace(&store, &cand).unwrap();
        let tv = total_variation(&cand).unwrap();
        let l_a = activation_match_loss(&cand_trace, &prior_trace, &weights).unwrap();
        let style_ixs = weights.resolve_style_layers(model.trace_slots()).unwrap();
        let l_s = style_loss(&cand_trace, &prior_trace, &style_ixs).unwrap();

        assert!((comps.l_g - cos).abs() < 1e-9, "{} vs {}", comps.l_g, cos);
        assert!((comps.tv - tv).abs() < 1e-9);
        assert!((comps.l_a - l_a).abs() < 1e-9);
        assert!((comps.l_s - l_s).abs() < 1e-9);
    }
}
