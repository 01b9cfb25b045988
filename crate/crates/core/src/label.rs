//! Ground-truth label recovery from a captured gradient.
//!
//! For single-sample cross-entropy the final-layer bias gradient is
//! `softmax(logits) - onehot(label)`: negative exactly at the true class,
//! positive everywhere else. The weight-row sums share the sign pattern
//! whenever the incoming features are nonnegative (post-ReLU), which gives a
//! fallback when the bias gradient is unavailable.

use crate::error::{Error, Result};
use crate::losses::GradientCapture;
use crate::model::{LayerSpec, ModelSpec, ParamLayout, ParamKind};

/// Recover the victim's label from the capture's final-layer gradient sign
/// pattern. Zero or multiple negative entries on both routes signal a
/// batch > 1 or non-cross-entropy capture and yield `AmbiguousLabel`.
pub fn restore_label(capture: &GradientCapture, spec: &ModelSpec) -> Result<usize> {
    let layout = ParamLayout::from_spec(spec)?;
    if capture.flat.numel() != layout.total_len() {
        return Err(Error::GradientLength {
            expected: layout.total_len(),
            actual: capture.flat.numel(),
        });
    }
    if spec.classes == 1 {
        return Ok(0);
    }
    let last_linear = spec
        .layers
        .iter()
        .rposition(|l| matches!(l, LayerSpec::Linear { .. }))
        .ok_or_else(|| Error::Invalid("model has no linear layer to restore a label from".into()))?;

    let flat = capture.flat.data();
    let bias_ix = layout
        .params
        .iter()
        .position(|p| p.layer == last_linear && p.kind == ParamKind::Bias);

    if let Some(ix) = bias_ix {
        let bias_grad = layout.slice(flat, ix);
        let negatives: Vec<usize> = bias_grad
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < 0.0)
            .map(|(i, _)| i)
            .collect();
        if negatives.len() == 1 {
            return Ok(negatives[0]);
        }
    }

    // Fallback: sign of the weight-row sums of the final linear layer.
    let weight_ix = layout
        .params
        .iter()
        .position(|p| p.layer == last_linear && p.kind == ParamKind::Weight)
        .expect("linear layer always declares a weight");
    let info = &layout.params[weight_ix];
    let (rows, cols) = (info.shape[0], info.shape[1]);
    let wgrad = layout.slice(flat, weight_ix);
    let row_sums: Vec<f64> = (0..rows)
        .map(|r| wgrad[r * cols..(r + 1) * cols].iter().sum())
        .collect();
    let negatives: Vec<usize> = row_sums
        .iter()
        .enumerate()
        .filter(|(_, &v)| v < 0.0)
        .map(|(i, _)| i)
        .collect();
    match negatives.as_slice() {
        [single] => Ok(*single),
        _ => Err(Error::AmbiguousLabel { candidates: negatives }),
    }
}
