//! Small differentiable primitives shared by the model and the losses.

/// Forward of the stop-gradient operator: the value passes through unchanged.
pub fn stop_gradient(x: &[f64]) -> Vec<f64> {
    x.to_vec()
}

/// Backward of the stop-gradient operator: nothing reaches the input.
pub fn stop_gradient_backward(grad_out: &[f64]) -> Vec<f64> {
    vec![0.0; grad_out.len()]
}

/// Backward of the straight-through estimator for `quantized = Q(raw)`:
/// the raw value receives the gradient of the quantized value unchanged.
pub fn straight_through_backward(grad_quantized: &[f64]) -> Vec<f64> {
    grad_quantized.to_vec()
}

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a − b‖₂` and its gradient with respect to `a` (the gradient with
/// respect to `b` is the negation). At `a = b` the gradient is zero.
pub fn l2_distance_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    debug_assert_eq!(a.len(), b.len());
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = l2_norm(&diff);
    if n == 0.0 {
        return (0.0, vec![0.0; a.len()]);
    }
    (n, diff.into_iter().map(|d| d / n).collect())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Gradient of `Σ_k softmax(l)_k · values_k` with respect to the logits.
pub fn softmax_expectation_backward(weights: &[f64], values: &[f64], grad_out: f64) -> Vec<f64> {
    let mean: f64 = weights.iter().zip(values).map(|(w, v)| w * v).sum();
    weights
        .iter()
        .zip(values)
        .map(|(w, v)| grad_out * w * (v - mean))
        .collect()
}
