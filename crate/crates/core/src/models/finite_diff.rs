use ndarray::{Array2, Array3, ArrayView2, Axis};

use super::{score_batch, GradientProvider, Scorer};
use crate::error::{Error, Result};

/// Above this many input elements a finite-difference gradient is flagged as
/// expensive: it costs `2 * M * T` scorer evaluations per call.
pub const FD_COST_WARNING_ELEMENTS: usize = 10_000;

/// Central-difference gradients for scorers without analytic ones, with
/// step `h = 1e-3 (1 + |x_i|)`.
pub struct FiniteDifference<'a> {
    scorer: &'a dyn Scorer,
    chunk: usize,
}

impl<'a> FiniteDifference<'a> {
    pub fn new(scorer: &'a dyn Scorer) -> Self {
        let (m, t) = scorer.input_shape();
        if m * t > FD_COST_WARNING_ELEMENTS {
            log::warn!(
                "finite-difference gradients for {} need {} evaluations per call",
                scorer.id(),
                2 * m * t
            );
        }
        FiniteDifference { scorer, chunk: 512 }
    }

    pub fn step(x: f64) -> f64 {
        1e-3 * (1.0 + x.abs())
    }
}

impl GradientProvider for FiniteDifference<'_> {
    fn gradient(&self, x: ArrayView2<'_, f64>, class: usize) -> Result<Array2<f64>> {
        let (m, t) = x.dim();
        if class >= self.scorer.n_classes() {
            return Err(Error::shape("class", format!("< {}", self.scorer.n_classes()), class));
        }
        let d = m * t;
        let coords: Vec<(usize, usize)> = ndarray::indices((m, t)).into_iter().collect();
        let mut grad = Array2::zeros((m, t));
        for part in coords.chunks(self.chunk) {
            let mut batch = Array3::zeros((2 * part.len(), m, t));
            for (j, &(r, c)) in part.iter().enumerate() {
                let h = Self::step(x[[r, c]]);
                let mut plus = batch.index_axis_mut(Axis(0), 2 * j);
                plus.assign(&x);
                plus[[r, c]] += h;
                let mut minus = batch.index_axis_mut(Axis(0), 2 * j + 1);
                minus.assign(&x);
                minus[[r, c]] -= h;
            }
            let logits = score_batch(self.scorer, batch.view())?;
            for (j, &(r, c)) in part.iter().enumerate() {
                let h = Self::step(x[[r, c]]);
                grad[[r, c]] = (logits[[2 * j, class]] - logits[[2 * j + 1, class]]) / (2.0 * h);
            }
        }
        debug_assert_eq!(grad.len(), d);
        Ok(grad)
    }
}
