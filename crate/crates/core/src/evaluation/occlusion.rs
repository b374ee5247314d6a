use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attractor::NOISE_STD;
use crate::error::Error;
use crate::rng::StreamRng;

/// How occluded elements get their new values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fill {
    /// i.i.d. `N(0, 1/12)`.
    #[serde(rename = "normal")]
    NormalSample,
    /// Shuffle the occluded values among the occluded positions.
    Permute,
}

impl Fill {
    pub fn name(self) -> &'static str {
        match self {
            Fill::NormalSample => "normal",
            Fill::Permute => "permute",
        }
    }
}

impl std::fmt::Display for Fill {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Fill {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "normal_sample" | "normalsample" => Ok(Fill::NormalSample),
            "permute" | "permutation" => Ok(Fill::Permute),
            other => Err(Error::config("occlusion", format!("unknown occlusion {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionMethod {
    NormalSample,
    Permute,
    /// Occlude a uniformly random set of the same size as the mask.
    RandomBaseline(Fill),
}

impl From<Fill> for OcclusionMethod {
    fn from(fill: Fill) -> Self {
        match fill {
            Fill::NormalSample => OcclusionMethod::NormalSample,
            Fill::Permute => OcclusionMethod::Permute,
        }
    }
}

fn fill_positions(out: &mut Array2<f64>, positions: &[(usize, usize)], fill: Fill, rng: &mut StreamRng) {
    match fill {
        Fill::NormalSample => {
            let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
            for &p in positions {
                out[p] = noise.sample(rng);
            }
        }
        Fill::Permute => {
            let mut values: Vec<f64> = positions.iter().map(|&p| out[p]).collect();
            values.shuffle(rng);
            for (&p, v) in positions.iter().zip(values) {
                out[p] = v;
            }
        }
    }
}

/// Uniformly random mask with as many set elements as `mask`.
pub fn random_mask_like(mask: ArrayView2<'_, bool>, rng: &mut StreamRng) -> Array2<bool> {
    let count = mask.iter().filter(|&&m| m).count();
    let t = mask.ncols();
    let mut out = Array2::from_elem(mask.raw_dim(), false);
    for i in sample_indices(rng, mask.len(), count).iter() {
        out[(i / t, i % t)] = true;
    }
    out
}

/// Copy of `x` with the masked elements (or, for the random baseline, an
/// equally sized random set drawn first from `rng`) replaced.
pub fn occlude(x: ArrayView2<'_, f64>, mask: ArrayView2<'_, bool>, method: OcclusionMethod, rng: &mut StreamRng) -> Array2<f64> {
    assert_eq!(x.dim(), mask.dim(), "mask shape must equal sample shape");
    let (fill, effective) = match method {
        OcclusionMethod::NormalSample => (Fill::NormalSample, mask.to_owned()),
        OcclusionMethod::Permute => (Fill::Permute, mask.to_owned()),
        OcclusionMethod::RandomBaseline(f) => (f, random_mask_like(mask, rng)),
    };
    let positions: Vec<(usize, usize)> = ndarray::indices(effective.raw_dim())
        .into_iter()
        .filter(|&p| effective[p])
        .collect();
    let mut out = x.to_owned();
    fill_positions(&mut out, &positions, fill, rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};
    use proptest::prelude::*;

    fn sorted(a: &Array2<f64>) -> Vec<f64> {
        let mut v = a.iter().copied().collect::<Vec<_>>();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn empty_mask_is_a_no_op() {
        let x = Array2::from_shape_fn((3, 9), |(m, t)| (m * 9 + t) as f64 * 0.37);
        let mask = Array2::from_elem((3, 9), false);
        for method in [
            OcclusionMethod::NormalSample,
            OcclusionMethod::Permute,
            OcclusionMethod::RandomBaseline(Fill::NormalSample),
        ] {
            let mut rng = substream(0, Purpose::Occlusion, &[0]);
            assert_eq!(occlude(x.view(), mask.view(), method, &mut rng), x);
        }
    }

    #[test]
    fn normal_fill_has_target_spread() {
        let x = Array2::zeros((1, 100_000));
        let mask = Array2::from_elem((1, 100_000), true);
        let mut rng = substream(1, Purpose::Occlusion, &[0]);
        let out = occlude(x.view(), mask.view(), OcclusionMethod::NormalSample, &mut rng);
        let mean = out.mean().unwrap();
        let std = out.mapv(|v| (v - mean).powi(2)).mean().unwrap().sqrt();
        assert!((std - 0.2887).abs() < 0.003, "{std}");
    }

    #[test]
    fn normal_fill_touches_only_the_mask() {
        let x = Array2::from_elem((2, 5), 9.0);
        let mask = Array2::from_shape_fn((2, 5), |(m, t)| m == 1 && t < 2);
        let mut rng = substream(2, Purpose::Occlusion, &[0]);
        let out = occlude(x.view(), mask.view(), OcclusionMethod::NormalSample, &mut rng);
        for (idx, &v) in out.indexed_iter() {
            assert_eq!(v == 9.0, !mask[idx]);
        }
    }

    #[test]
    fn random_baseline_matches_cardinality() {
        let x = Array2::from_elem((3, 50), 5.0);
        let mask = Array2::from_shape_fn((3, 50), |(m, t)| m == 0 && t < 17);
        let mut rng = substream(3, Purpose::RandomMask, &[0]);
        let out = occlude(x.view(), mask.view(), OcclusionMethod::RandomBaseline(Fill::NormalSample), &mut rng);
        assert_eq!(out.iter().filter(|&&v| v != 5.0).count(), 17);
    }

    #[test]
    fn fill_names_parse() {
        assert_eq!("normal".parse::<Fill>().unwrap(), Fill::NormalSample);
        assert_eq!("Permute".parse::<Fill>().unwrap(), Fill::Permute);
        assert!("zero".parse::<Fill>().is_err());
    }

    proptest! {
        #[test]
        fn permutation_preserves_the_multiset(
            values in proptest::collection::vec(-10.0..10.0f64, 1..60),
            bits in any::<u64>(),
            seed in any::<u64>(),
        ) {
            let n = values.len();
            let x = Array2::from_shape_vec((1, n), values).unwrap();
            let mask = Array2::from_shape_fn((1, n), |(_, t)| (bits >> (t % 64)) & 1 == 1);
            let mut rng = substream(seed, Purpose::Occlusion, &[0]);
            let out = occlude(x.view(), mask.view(), OcclusionMethod::Permute, &mut rng);
            prop_assert_eq!(sorted(&out), sorted(&x));
            for (idx, &v) in out.indexed_iter() {
                if !mask[idx] {
                    prop_assert_eq!(v, x[idx]);
                }
            }
            let mut rng = substream(seed, Purpose::RandomMask, &[0]);
            let out = occlude(x.view(), mask.view(), OcclusionMethod::RandomBaseline(Fill::Permute), &mut rng);
            prop_assert_eq!(sorted(&out), sorted(&x));
        }
    }
}
