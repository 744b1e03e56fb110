use ndarray::ArrayD;

use super::{no_grad, Tensor};

/// Compares analytic gradients against central finite differences.
///
/// `loss_fn` must rebuild the graph from `params` on every call and be
/// deterministic. Returns the worst discrepancy over all parameter elements,
/// measured as `|fd - ad| / max(1, |fd|, |ad|)`.
pub fn max_gradient_error<L>(params: &[Tensor<f64>], loss_fn: L, eps: f64) -> f64
where
    L: Fn() -> Tensor<f64>,
{
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn();
    loss.backward();
    let grads: Vec<ArrayD<f64>> = params
        .iter()
        .map(|p| {
            p.grad()
                .unwrap_or_else(|| ArrayD::zeros(p.value().raw_dim()))
        })
        .collect();

    let mut worst = 0.0f64;
    for (p, g) in params.iter().zip(&grads) {
        let flat = g.as_slice().expect("gradient layout").to_vec();
        for (idx, &analytic) in flat.iter().enumerate() {
            let nudge = |delta: f64| {
                p.with_value_mut(|v| v.as_slice_mut().expect("param layout")[idx] += delta)
            };
            nudge(eps);
            let plus = no_grad(|| loss_fn().item());
            nudge(-2.0 * eps);
            let minus = no_grad(|| loss_fn().item());
            nudge(eps);
            let fd = (plus - minus) / (2.0 * eps);
            let err = (fd - analytic).abs() / 1.0f64.max(fd.abs()).max(analytic.abs());
            worst = worst.max(err);
        }
    }
    worst
}
