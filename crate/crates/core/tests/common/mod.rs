//! Scorers and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use itb_core::models::{score_batch, BuiltinModel, Network, Scorer};
use itb_core::rng::{substream, Purpose};
use itb_core::Result;

/// `S_c(x) = sum_i w[c, i] x_i + sum_terms coef * prod_{i in term} x_i`.
/// The product terms are shared by every class.
pub struct Polynomial {
    pub w: Array2<f64>,
    pub terms: Vec<(f64, Vec<usize>)>,
    pub shape: (usize, usize),
}

impl Scorer for Polynomial {
    fn n_classes(&self) -> usize {
        self.w.nrows()
    }

    fn input_shape(&self) -> (usize, usize) {
        self.shape
    }

    fn id(&self) -> String {
        "test:polynomial".into()
    }

    fn score(&self, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
        let b = inputs.dim().0;
        let mut out = Array2::zeros((b, self.w.nrows()));
        for (k, x) in inputs.axis_iter(Axis(0)).enumerate() {
            let flat: Vec<f64> = x.iter().copied().collect();
            let shared: f64 = self
                .terms
                .iter()
                .map(|(c, idx)| c * idx.iter().map(|&i| flat[i]).product::<f64>())
                .sum();
            for c in 0..self.w.nrows() {
                out[[k, c]] = self.w.row(c).iter().zip(&flat).map(|(w, v)| w * v).sum::<f64>() + shared;
            }
        }
        Ok(out)
    }
}

pub fn normal_matrix(rows: usize, cols: usize, scale: f64, seed: u64, key: u64) -> Array2<f64> {
    let mut rng = substream(seed, Purpose::Training, &[key]);
    Array2::from_shape_fn((rows, cols), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_sample(shape: (usize, usize), seed: u64, key: u64) -> Array2<f64> {
    normal_matrix(shape.0, shape.1, 1.0, seed, key)
}

pub fn linear_model(k: usize, shape: (usize, usize), seed: u64) -> BuiltinModel {
    let d = shape.0 * shape.1;
    BuiltinModel::linear(normal_matrix(k, d, 1.0, seed, 1), Array1::zeros(k), shape)
}

pub fn linear_weights(model: &BuiltinModel) -> Array2<f64> {
    match &model.net {
        Network::LinearSoftmax { w, .. } => w.clone(),
        Network::Mlp { .. } => panic!("linear model expected"),
    }
}

pub fn random_mlp(k: usize, shape: (usize, usize), hidden: usize, seed: u64) -> BuiltinModel {
    let d = shape.0 * shape.1;
    let w1 = normal_matrix(hidden, d, 1.0 / (d as f64).sqrt(), seed, 1);
    let b1 = normal_matrix(1, hidden, 0.1, seed, 2).row(0).to_owned();
    let w2 = normal_matrix(k, hidden, 1.0 / (hidden as f64).sqrt(), seed, 3);
    let b2 = normal_matrix(1, k, 0.1, seed, 4).row(0).to_owned();
    BuiltinModel::mlp(w1, b1, w2, b2, shape)
}

/// Class-`class` value of every coalition: bit `i` of the index set means
/// element `i` (row-major) takes its value from `x`, otherwise from
/// `baseline`.
pub fn coalition_values(
    scorer: &dyn Scorer,
    x: ArrayView2<'_, f64>,
    baseline: ArrayView2<'_, f64>,
    class: usize,
) -> Vec<f64> {
    let (m, t) = x.dim();
    let d = m * t;
    assert!(d <= 20, "enumeration oracle only for small d");
    let xs: Vec<f64> = x.iter().copied().collect();
    let bs: Vec<f64> = baseline.iter().copied().collect();
    let n = 1usize << d;
    let mut batch = Array3::<f64>::zeros((n, m, t));
    for s in 0..n {
        for i in 0..d {
            batch[[s, i / t, i % t]] = if s >> i & 1 == 1 { xs[i] } else { bs[i] };
        }
    }
    let logits = score_batch(scorer, batch.view()).expect("oracle scoring");
    logits.column(class).to_vec()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Exact Shapley values from the subset formula.
pub fn exact_shapley_subsets(v: &[f64], d: usize) -> Vec<f64> {
    let weights: Vec<f64> = (0..d).map(|s| factorial(s) * factorial(d - s - 1) / factorial(d)).collect();
    let mut phi = vec![0.0; d];
    for s in 0..(1usize << d) {
        let size = s.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if s >> i & 1 == 0 {
                *p += weights[size] * (v[s | 1 << i] - v[s]);
            }
        }
    }
    phi
}

/// Exact Shapley values as the mean marginal contribution over all `d!`
/// orderings, visited with Heap's algorithm.
pub fn exact_shapley_permutations(v: &[f64], d: usize) -> Vec<f64> {
    let mut perm: Vec<usize> = (0..d).collect();
    let mut c = vec![0usize; d];
    let mut sums = vec![0.0; d];
    let mut count = 0u64;
    let mut visit = |perm: &[usize]| {
        let mut s = 0usize;
        for &i in perm {
            sums[i] += v[s | 1 << i] - v[s];
            s |= 1 << i;
        }
        count += 1;
    };
    visit(&perm);
    let mut i = 0;
    while i < d {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    sums.iter().map(|s| s / count as f64).collect()
}

pub fn max_abs_diff(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
