use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

/// What a single player of the coalition game is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Every `(m, t)` element is a player.
    #[default]
    Element,
    /// All `M` values of a time step form one player.
    TimeStep,
}

/// Maps players to the elements they switch on.
pub(crate) struct Players {
    granularity: Granularity,
    shape: (usize, usize),
}

impl Players {
    pub fn new(granularity: Granularity, shape: (usize, usize)) -> Self {
        Players { granularity, shape }
    }

    pub fn len(&self) -> usize {
        match self.granularity {
            Granularity::Element => self.shape.0 * self.shape.1,
            Granularity::TimeStep => self.shape.1,
        }
    }

    /// Copy player `p`'s elements from `x` into `out`.
    pub fn switch_on(&self, p: usize, x: ArrayView2<'_, f64>, mut out: ArrayViewMut2<'_, f64>) {
        match self.granularity {
            Granularity::Element => {
                let idx = (p / self.shape.1, p % self.shape.1);
                out[idx] = x[idx];
            }
            Granularity::TimeStep => {
                for m in 0..self.shape.0 {
                    out[[m, p]] = x[[m, p]];
                }
            }
        }
    }

    /// Per-element map from per-player values; a group's value is split
    /// evenly over its elements so the total is preserved.
    pub fn spread(&self, phi: &[f64]) -> Array2<f64> {
        debug_assert_eq!(phi.len(), self.len());
        match self.granularity {
            Granularity::Element => Array2::from_shape_vec(self.shape, phi.to_vec()).expect("one value per element"),
            Granularity::TimeStep => {
                let m = self.shape.0 as f64;
                Array2::from_shape_fn(self.shape, |(_, t)| phi[t] / m)
            }
        }
    }
}
