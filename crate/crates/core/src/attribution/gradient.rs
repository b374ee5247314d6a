use ndarray::{Array2, ArrayView2};

use super::RelevanceMap;
use crate::error::{Error, Result};
use crate::models::GradientProvider;

/// `|dS_c/dx|` at `x`.
pub fn saliency(grad: &dyn GradientProvider, x: ArrayView2<'_, f64>, class: usize) -> Result<RelevanceMap> {
    Ok(grad.gradient(x, class)?.mapv_into(f64::abs))
}

/// Integrated gradients with a right-endpoint Riemann sum over `steps`
/// points of the straight path from `baseline` to `x`.
pub fn integrated_gradients(
    grad: &dyn GradientProvider,
    x: ArrayView2<'_, f64>,
    baseline: ArrayView2<'_, f64>,
    class: usize,
    steps: usize,
) -> Result<RelevanceMap> {
    if steps == 0 {
        return Err(Error::config("ig_steps", "must be positive"));
    }
    let diff = &x - &baseline;
    let mut total = Array2::<f64>::zeros(x.raw_dim());
    for k in 1..=steps {
        let alpha = k as f64 / steps as f64;
        let point = &baseline + &(&diff * alpha);
        total += &grad.gradient(point.view(), class)?;
    }
    Ok(diff * total / steps as f64)
}
