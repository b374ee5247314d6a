//! Black-box scoring contract and the built-in reference classifiers.

mod builtin;
pub mod external;
mod finite_diff;
mod train;

use ndarray::{Array1, Array2, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

pub use builtin::{BuiltinModel, ModelKind, Network};
pub use external::{Endpoint, ExternalScorer};
pub use finite_diff::FiniteDifference;
pub use train::{train, EpochStats, TrainConfig, Trained};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Anything that maps a batch `(B, M, T)` to pre-softmax scores `(B, K)`.
///
/// Implementations may assume the batch shape has already been validated
/// against [`Scorer::input_shape`]; use [`score_batch`] to call them.
pub trait Scorer: Send + Sync {
    fn n_classes(&self) -> usize;

    /// `(M, T)`.
    fn input_shape(&self) -> (usize, usize);

    fn id(&self) -> String;

    fn score(&self, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>>;

    /// Maximum number of concurrent callers, `None` for unbounded.
    fn max_concurrency(&self) -> Option<usize> {
        None
    }

    /// Analytic gradients, if the scorer has them.
    fn gradients(&self) -> Option<&dyn GradientProvider> {
        None
    }
}

/// Scorers that can differentiate a class score with respect to the input.
pub trait GradientProvider: Send + Sync {
    /// `dS_class / dx`, same shape as `x`.
    fn gradient(&self, x: ArrayView2<'_, f64>, class: usize) -> Result<Array2<f64>>;
}

/// Validate the batch shape and score it.
pub fn score_batch(scorer: &dyn Scorer, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
    let (b, m, t) = inputs.dim();
    if (m, t) != scorer.input_shape() {
        return Err(Error::shape("scorer input", format!("{:?}", scorer.input_shape()), format!("{:?}", (m, t))));
    }
    let k = scorer.n_classes();
    if b == 0 {
        return Ok(Array2::zeros((0, k)));
    }
    let logits = scorer.score(inputs)?;
    if logits.dim() != (b, k) {
        return Err(Error::shape("scorer output", format!("{:?}", (b, k)), format!("{:?}", logits.dim())));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::ExternalScorerFailure(format!("{} returned non-finite logits", scorer.id())));
    }
    Ok(logits)
}

/// Score a single `(M, T)` sample.
pub fn score_one(scorer: &dyn Scorer, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    let batch = x.insert_axis(Axis(0));
    Ok(score_batch(scorer, batch)?.index_axis_move(Axis(0), 0))
}

/// Score dataset samples in chunks of `chunk`.
pub fn score_indices(scorer: &dyn Scorer, dataset: &Dataset, indices: &[usize], chunk: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((indices.len(), scorer.n_classes()));
    for (c, part) in indices.chunks(chunk.max(1)).enumerate() {
        let batch = dataset.batch(part);
        let logits = score_batch(scorer, batch.view())?;
        let start = c * chunk.max(1);
        out.slice_mut(ndarray::s![start..start + part.len(), ..]).assign(&logits);
    }
    Ok(out)
}

pub fn softmax(logits: ndarray::ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Index of the largest logit; ties resolve to the lowest class.
pub fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn accuracy(scorer: &dyn Scorer, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let logits = score_indices(scorer, dataset, indices, 256)?;
    let correct = logits
        .axis_iter(Axis(0))
        .zip(indices)
        .filter(|(row, &i)| argmax(row.view()) == dataset.labels[i] as usize)
        .count();
    Ok(correct as f64 / indices.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectancyPolicy {
    /// Mean logit of each class over the split.
    PerClass,
    /// One number: mean over the split of each sample's own-label logit.
    Global,
}

/// Reference level `E[S(X)]` per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectancy {
    pub policy: ExpectancyPolicy,
    pub values: Vec<f64>,
}

impl Expectancy {
    pub fn compute(scorer: &dyn Scorer, dataset: &Dataset, indices: &[usize], policy: ExpectancyPolicy) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::config("expectancy", "split is empty"));
        }
        let logits = score_indices(scorer, dataset, indices, 256)?;
        Ok(Self::from_logits(logits.view(), dataset, indices, policy))
    }

    /// From logits already computed for `indices`, row for row.
    pub fn from_logits(logits: ndarray::ArrayView2<'_, f64>, dataset: &Dataset, indices: &[usize], policy: ExpectancyPolicy) -> Self {
        let n = logits.nrows().max(1) as f64;
        let values = match policy {
            ExpectancyPolicy::PerClass => logits.sum_axis(Axis(0)).mapv(|s| s / n).to_vec(),
            ExpectancyPolicy::Global => {
                let own: f64 = logits
                    .axis_iter(Axis(0))
                    .zip(indices)
                    .map(|(row, &i)| row[dataset.labels[i] as usize])
                    .sum();
                vec![own / n; logits.ncols()]
            }
        };
        Expectancy { policy, values }
    }

    pub fn for_class(&self, class: usize) -> f64 {
        self.values[class]
    }
}

/// Mean logit of `class` over `indices`.
pub fn expectancy(scorer: &dyn Scorer, dataset: &Dataset, indices: &[usize], class: usize) -> Result<f64> {
    Ok(Expectancy::compute(scorer, dataset, indices, ExpectancyPolicy::PerClass)?.for_class(class))
}

/// Batch `(B, M, T)` view of an owned stack of samples.
#[cfg(test)]
pub(crate) fn stack(samples: &[Array2<f64>], shape: (usize, usize)) -> ndarray::Array3<f64> {
    let mut out = ndarray::Array3::zeros((samples.len(), shape.0, shape.1));
    for (b, s) in samples.iter().enumerate() {
        out.index_axis_mut(Axis(0), b).assign(s);
    }
    out
}
