use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::attractor::{GenerationConfig, Variant};
use crate::error::{Error, Result};

/// Train/validation/test index sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub fractions: [f64; 3],
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            "all" => Ok(SplitName::All),
            other => Err(Error::config("split", format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub class_names: Vec<String>,
    pub variant: Option<Variant>,
    pub generation: Option<GenerationConfig>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub assumed_settings: Vec<String>,
    pub split: Option<SplitAssignment>,
}

/// `N` multivariate series of shape `(M, T)` with labels and optional
/// binary expert weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub values: Array3<f32>,
    pub labels: Vec<u8>,
    pub expert_weights: Option<Array3<u8>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(
        values: Array3<f32>,
        labels: Vec<u8>,
        expert_weights: Option<Array3<u8>>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let ds = Dataset {
            values,
            labels,
            expert_weights,
            meta,
        };
        ds.check()?;
        Ok(ds)
    }

    pub(crate) fn check(&self) -> Result<()> {
        let (n, m, t) = self.values.dim();
        if self.labels.len() != n {
            return Err(Error::shape("labels", n, self.labels.len()));
        }
        if let Some(w) = &self.expert_weights {
            if w.dim() != (n, m, t) {
                return Err(Error::shape("expert_weights", format!("{:?}", (n, m, t)), format!("{:?}", w.dim())));
            }
            if w.iter().any(|&v| v > 1) {
                return Err(Error::shape("expert_weights", "binary values", "value > 1"));
            }
        }
        let k = self.n_classes();
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::shape("labels", format!("< {k}"), bad));
        }
        if let Some(split) = &self.meta.split {
            for &i in split.train.iter().chain(&split.val).chain(&split.test) {
                if i >= n {
                    return Err(Error::shape("split index", format!("< {n}"), i));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(M, T)`.
    pub fn sample_shape(&self) -> (usize, usize) {
        let (_, m, t) = self.values.dim();
        (m, t)
    }

    pub fn n_classes(&self) -> usize {
        self.meta.class_names.len()
    }

    pub fn sample(&self, i: usize) -> Array2<f64> {
        self.values.index_axis(Axis(0), i).mapv(f64::from)
    }

    pub fn expert_weights_of(&self, i: usize) -> Option<ArrayView2<'_, u8>> {
        self.expert_weights.as_ref().map(|w| w.index_axis(Axis(0), i))
    }

    /// Gather samples into a float64 batch `(B, M, T)`.
    pub fn batch(&self, indices: &[usize]) -> Array3<f64> {
        let (m, t) = self.sample_shape();
        let mut out = Array3::zeros((indices.len(), m, t));
        for (b, &i) in indices.iter().enumerate() {
            out.index_axis_mut(Axis(0), b)
                .assign(&self.values.index_axis(Axis(0), i).mapv(f64::from));
        }
        out
    }

    /// Indices of a named split, or every index for [`SplitName::All`].
    pub fn split_indices(&self, name: SplitName) -> Result<Vec<usize>> {
        if name == SplitName::All {
            return Ok((0..self.len()).collect());
        }
        let split = self
            .meta
            .split
            .as_ref()
            .ok_or_else(|| Error::config("split", "dataset manifest carries no split assignment"))?;
        Ok(match name {
            SplitName::Train => split.train.clone(),
            SplitName::Val => split.val.clone(),
            SplitName::Test => split.test.clone(),
            SplitName::All => unreachable!(),
        })
    }
}
