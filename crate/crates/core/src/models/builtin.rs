use ndarray::{Array1, Array2, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use super::{GradientProvider, Scorer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearSoftmax,
    Mlp,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "linear_softmax" => Ok(ModelKind::LinearSoftmax),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::config("kind", format!("unknown model kind {other:?}"))),
        }
    }
}

/// Weights act on the flattened `M * T` input, row-major over `(m, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Network {
    /// `logits = W x + b`, `W: (K, D)`.
    LinearSoftmax { w: Array2<f64>, b: Array1<f64> },
    /// `logits = W2 tanh(W1 x + b1) + b2`, `W1: (H, D)`, `W2: (K, H)`.
    Mlp {
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltinModel {
    pub m: usize,
    pub t: usize,
    pub n_classes: usize,
    pub net: Network,
}

impl BuiltinModel {
    pub fn linear(w: Array2<f64>, b: Array1<f64>, shape: (usize, usize)) -> Self {
        assert_eq!(w.ncols(), shape.0 * shape.1, "weight columns must equal M*T");
        assert_eq!(w.nrows(), b.len());
        BuiltinModel {
            m: shape.0,
            t: shape.1,
            n_classes: w.nrows(),
            net: Network::LinearSoftmax { w, b },
        }
    }

    pub fn mlp(w1: Array2<f64>, b1: Array1<f64>, w2: Array2<f64>, b2: Array1<f64>, shape: (usize, usize)) -> Self {
        assert_eq!(w1.ncols(), shape.0 * shape.1, "W1 columns must equal M*T");
        assert_eq!(w1.nrows(), b1.len());
        assert_eq!(w2.ncols(), w1.nrows());
        assert_eq!(w2.nrows(), b2.len());
        BuiltinModel {
            m: shape.0,
            t: shape.1,
            n_classes: w2.nrows(),
            net: Network::Mlp { w1, b1, w2, b2 },
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self.net {
            Network::LinearSoftmax { .. } => ModelKind::LinearSoftmax,
            Network::Mlp { .. } => ModelKind::Mlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.m * self.t
    }

    pub fn n_params(&self) -> usize {
        match &self.net {
            Network::LinearSoftmax { w, b } => w.len() + b.len(),
            Network::Mlp { w1, b1, w2, b2 } => w1.len() + b1.len() + w2.len() + b2.len(),
        }
    }

    /// Check parameter shapes against `(M, T, K)`; used after deserializing.
    pub fn validate(&self) -> Result<()> {
        let d = self.input_dim();
        let ok = match &self.net {
            Network::LinearSoftmax { w, b } => w.dim() == (self.n_classes, d) && b.len() == self.n_classes,
            Network::Mlp { w1, b1, w2, b2 } => {
                let h = w1.nrows();
                w1.ncols() == d && b1.len() == h && w2.dim() == (self.n_classes, h) && b2.len() == self.n_classes
            }
        };
        if !ok {
            return Err(Error::shape(
                "model parameters",
                format!("consistent with M={} T={} K={}", self.m, self.t, self.n_classes),
                "inconsistent",
            ));
        }
        Ok(())
    }

    /// Logits for a flattened batch `(B, D)`; also returns hidden activations
    /// for the MLP.
    pub(crate) fn forward_flat(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Option<Array2<f64>>) {
        match &self.net {
            Network::LinearSoftmax { w, b } => (x.dot(&w.t()) + b, None),
            Network::Mlp { w1, b1, w2, b2 } => {
                let h = (x.dot(&w1.t()) + b1).mapv_into(f64::tanh);
                let logits = h.dot(&w2.t()) + b2;
                (logits, Some(h))
            }
        }
    }
}

impl Scorer for BuiltinModel {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn input_shape(&self) -> (usize, usize) {
        (self.m, self.t)
    }

    fn id(&self) -> String {
        match &self.net {
            Network::LinearSoftmax { .. } => format!("builtin:linear({}x{}->{})", self.m, self.t, self.n_classes),
            Network::Mlp { w1, .. } => format!("builtin:mlp({}x{}-{}->{})", self.m, self.t, w1.nrows(), self.n_classes),
        }
    }

    fn score(&self, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
        let b = inputs.dim().0;
        let flat = inputs
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b, self.input_dim()))
            .map_err(|e| Error::shape("scorer input", "contiguous batch", e))?;
        Ok(self.forward_flat(flat.view()).0)
    }

    fn gradients(&self) -> Option<&dyn GradientProvider> {
        Some(self)
    }
}

impl GradientProvider for BuiltinModel {
    fn gradient(&self, x: ArrayView2<'_, f64>, class: usize) -> Result<Array2<f64>> {
        if x.dim() != (self.m, self.t) {
            return Err(Error::shape("gradient input", format!("{:?}", (self.m, self.t)), format!("{:?}", x.dim())));
        }
        if class >= self.n_classes {
            return Err(Error::shape("class", format!("< {}", self.n_classes), class));
        }
        let grad = match &self.net {
            Network::LinearSoftmax { w, .. } => w.row(class).to_owned(),
            Network::Mlp { w1, b1, w2, .. } => {
                let flat = x.as_standard_layout();
                let flat = flat.as_slice().expect("standard layout");
                let pre = w1.dot(&ndarray::ArrayView1::from(flat)) + b1;
                // dS/dh_j (1 - h_j^2)
                let upstream = Array1::from_shape_fn(pre.len(), |j| {
                    let h = pre[j].tanh();
                    w2[[class, j]] * (1.0 - h * h)
                });
                upstream.dot(w1)
            }
        };
        Ok(grad
            .into_shape_with_order((self.m, self.t))
            .expect("gradient length equals M*T"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{score_batch, score_one};
    use crate::rng::{substream, Purpose};
    use ndarray::Array3;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_mlp(seed: u64, shape: (usize, usize), h: usize, k: usize) -> BuiltinModel {
        let mut rng = substream(seed, Purpose::Training, &[99]);
        let d = shape.0 * shape.1;
        let mut g = |r: usize, c: usize, s: f64| Array2::from_shape_fn((r, c), |_| s * rng.sample::<f64, _>(StandardNormal));
        let w1 = g(h, d, 1.0 / (d as f64).sqrt());
        let b1 = g(1, h, 0.1).row(0).to_owned();
        let w2 = g(k, h, 1.0 / (h as f64).sqrt());
        let b2 = g(1, k, 0.1).row(0).to_owned();
        BuiltinModel::mlp(w1, b1, w2, b2, shape)
    }

    fn random_input(seed: u64, shape: (usize, usize)) -> Array2<f64> {
        let mut rng = substream(seed, Purpose::Baseline, &[0]);
        Array2::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Central differences with h = 1e-4 (1 + |x|).
    fn fd_gradient(model: &BuiltinModel, x: &Array2<f64>, class: usize) -> Array2<f64> {
        let mut g = Array2::zeros(x.raw_dim());
        for idx in ndarray::indices(x.raw_dim()) {
            let h = 1e-4 * (1.0 + x[idx].abs());
            let mut plus = x.clone();
            plus[idx] += h;
            let mut minus = x.clone();
            minus[idx] -= h;
            let sp = score_one(model, plus.view()).unwrap()[class];
            let sm = score_one(model, minus.view()).unwrap()[class];
            g[idx] = (sp - sm) / (2.0 * h);
        }
        g
    }

    fn max_rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs() / y.abs().max(1e-3 * scale))
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_linear_model_gives_zero_logits() {
        let model = BuiltinModel::linear(Array2::zeros((5, 12)), Array1::zeros(5), (3, 4));
        let out = score_batch(&model, Array3::from_elem((4, 3, 4), 0.7).view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_matches_one_by_one() {
        let shape = (3, 20);
        let model = random_mlp(1, shape, 16, 5);
        let xs: Vec<Array2<f64>> = (0..9).map(|s| random_input(s, shape)).collect();
        let batch = crate::models::stack(&xs, shape);
        let all = score_batch(&model, batch.view()).unwrap();
        for (b, x) in xs.iter().enumerate() {
            let one = score_one(&model, x.view()).unwrap();
            for k in 0..5 {
                assert!((all[[b, k]] - one[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let shape = (3, 10);
        for seed in 0..4 {
            let model = random_mlp(seed, shape, 8, 4);
            let x = random_input(seed + 10, shape);
            for class in 0..4 {
                let analytic = model.gradient(x.view(), class).unwrap();
                let numeric = fd_gradient(&model, &x, class);
                let err = max_rel_err(&analytic, &numeric);
                assert!(err < 1e-4, "seed {seed} class {class}: {err}");
            }
        }
    }

    #[test]
    fn linear_gradient_is_weight_row() {
        let shape = (2, 3);
        let w = Array2::from_shape_fn((2, 6), |(k, i)| (k * 6 + i) as f64 - 4.0);
        let model = BuiltinModel::linear(w.clone(), Array1::zeros(2), shape);
        let x = random_input(3, shape);
        let g = model.gradient(x.view(), 1).unwrap();
        assert_eq!(g.into_shape_with_order(6).unwrap(), w.row(1));
        let numeric = fd_gradient(&model, &x, 1);
        assert!(max_rel_err(&model.gradient(x.view(), 1).unwrap(), &numeric) < 1e-4);
    }

    #[test]
    fn parameter_counts() {
        let model = random_mlp(0, (3, 250), 64, 5);
        assert_eq!(model.n_params(), 64 * 750 + 64 + 5 * 64 + 5);
        model.validate().unwrap();
        let lin = BuiltinModel::linear(Array2::zeros((5, 750)), Array1::zeros(5), (3, 250));
        assert_eq!(lin.n_params(), 5 * 750 + 5);
    }

    #[test]
    fn serde_round_trip_preserves_weights() {
        let model = random_mlp(5, (2, 4), 3, 2);
        let text = serde_json::to_string(&model).unwrap();
        let back: BuiltinModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
    }
}
