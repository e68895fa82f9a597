//! Central finite-difference gradients, computed from the forward pass
//! alone, for checking the hand-written backward pass.

use super::params::MlmParams;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`; zero when
    /// both gradients vanish.
    pub relative_error: f64,
    pub analytic_norm: f64,
}

/// Numeric gradient of the summed target loss for every parameter.
pub fn numeric_gradient(params: &MlmParams, ids: &[u32], targets: &[(usize, u32)], step: f64) -> Result<MlmParams> {
    let mut probe = params.clone();
    let mut grad = params.zeros_like();
    let n_tensors = params.tensors().len();
    for ti in 0..n_tensors {
        let len = params.tensors()[ti].len();
        for i in 0..len {
            let original = probe.tensors()[ti][i];
            probe.tensors_mut()[ti][i] = original + step;
            let plus = probe.loss(ids, targets)?;
            probe.tensors_mut()[ti][i] = original - step;
            let minus = probe.loss(ids, targets)?;
            probe.tensors_mut()[ti][i] = original;
            grad.tensors_mut()[ti][i] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(grad)
}

/// Compares the backward pass against central differences tensor by tensor.
pub fn check_gradients(params: &MlmParams, ids: &[u32], targets: &[(usize, u32)], step: f64) -> Result<Vec<TensorCheck>> {
    let mut analytic = params.zeros_like();
    params.loss_and_grad(ids, targets, &mut analytic)?;
    let numeric = numeric_gradient(params, ids, targets, step)?;
    let names = params.tensor_names();
    Ok(analytic
        .tensors()
        .into_iter()
        .zip(numeric.tensors())
        .zip(names)
        .map(|((a, n), name)| {
            let diff = a.iter().zip(n.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
            let denom = na.max(nn);
            TensorCheck {
                name,
                relative_error: if denom == 0.0 { 0.0 } else { diff / denom },
                analytic_norm: na,
            }
        })
        .collect())
}
