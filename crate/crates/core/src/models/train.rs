use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::builtin::{BuiltinModel, ModelKind, Network};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// L2 penalty on weight matrices (not biases).
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::Mlp,
            hidden: 64,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trained {
    pub model: BuiltinModel,
    pub history: Vec<EpochStats>,
    /// Epoch whose weights were kept, `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn flatten(dataset: &Dataset, indices: &[usize]) -> Array2<f64> {
    let (m, t) = dataset.sample_shape();
    dataset
        .batch(indices)
        .into_shape_with_order((indices.len(), m * t))
        .expect("batch is contiguous")
}

fn one_hot(dataset: &Dataset, indices: &[usize], k: usize) -> Array2<f64> {
    let mut y = Array2::zeros((indices.len(), k));
    for (r, &i) in indices.iter().enumerate() {
        y[[r, dataset.labels[i] as usize]] = 1.0;
    }
    y
}

fn row_softmax(logits: &mut Array2<f64>) {
    for mut row in logits.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Mean cross-entropy and accuracy.
fn evaluate(model: &BuiltinModel, x: ArrayView2<'_, f64>, y: &Array2<f64>) -> (f64, f64) {
    let (mut p, _) = model.forward_flat(x);
    row_softmax(&mut p);
    let n = x.nrows().max(1) as f64;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (prow, yrow) in p.axis_iter(Axis(0)).zip(y.axis_iter(Axis(0))) {
        let label = yrow.iter().position(|&v| v == 1.0).unwrap_or(0);
        loss -= prow[label].max(1e-300).ln();
        if super::argmax(prow) == label {
            correct += 1;
        }
    }
    (loss / n, correct as f64 / n)
}

fn init_network(kind: ModelKind, d: usize, h: usize, k: usize, seed: u64) -> Network {
    let mut rng = substream(seed, Purpose::Training, &[0]);
    let mut glorot = |rows: usize, cols: usize| {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
    };
    match kind {
        ModelKind::LinearSoftmax => Network::LinearSoftmax {
            w: glorot(k, d),
            b: Array1::zeros(k),
        },
        ModelKind::Mlp => Network::Mlp {
            w1: glorot(h, d),
            b1: Array1::zeros(h),
            w2: glorot(k, h),
            b2: Array1::zeros(k),
        },
    }
}

/// Gradient of the mean cross-entropy, in the same layout as the network.
fn backward(model: &BuiltinModel, x: ArrayView2<'_, f64>, y: &Array2<f64>) -> (Network, f64) {
    let (mut p, hidden) = model.forward_flat(x);
    row_softmax(&mut p);
    let n = x.nrows() as f64;
    let loss = -(&p.mapv(|v| v.max(1e-300).ln()) * y).sum() / n;
    let dl = (p - y) / n;
    let grad = match (&model.net, hidden) {
        (Network::LinearSoftmax { .. }, _) => Network::LinearSoftmax {
            w: dl.t().dot(&x),
            b: dl.sum_axis(Axis(0)),
        },
        (Network::Mlp { w2, .. }, Some(h)) => {
            let dw2 = dl.t().dot(&h);
            let db2 = dl.sum_axis(Axis(0));
            let mut dz = dl.dot(w2);
            dz.zip_mut_with(&h, |g, &hv| *g *= 1.0 - hv * hv);
            Network::Mlp {
                w1: dz.t().dot(&x),
                b1: dz.sum_axis(Axis(0)),
                w2: dw2,
                b2: db2,
            }
        }
        (Network::Mlp { .. }, None) => unreachable!("MLP forward returns hidden activations"),
    };
    (grad, loss)
}

/// Parameter slices paired with whether weight decay applies.
fn slices(net: &Network) -> Vec<(&[f64], bool)> {
    match net {
        Network::LinearSoftmax { w, b } => vec![(w.as_slice().unwrap(), true), (b.as_slice().unwrap(), false)],
        Network::Mlp { w1, b1, w2, b2 } => vec![
            (w1.as_slice().unwrap(), true),
            (b1.as_slice().unwrap(), false),
            (w2.as_slice().unwrap(), true),
            (b2.as_slice().unwrap(), false),
        ],
    }
}

fn slices_mut(net: &mut Network) -> Vec<&mut [f64]> {
    match net {
        Network::LinearSoftmax { w, b } => vec![w.as_slice_mut().unwrap(), b.as_slice_mut().unwrap()],
        Network::Mlp { w1, b1, w2, b2 } => vec![
            w1.as_slice_mut().unwrap(),
            b1.as_slice_mut().unwrap(),
            w2.as_slice_mut().unwrap(),
            b2.as_slice_mut().unwrap(),
        ],
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &Network) -> Self {
        let zeros: Vec<Vec<f64>> = slices(net).iter().map(|(s, _)| vec![0.0; s.len()]).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, net: &mut Network, grad: &Network, lr: f64, decay: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let grads = slices(grad);
        for (p, ((m, v), (g, decays))) in slices_mut(net)
            .into_iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()).zip(grads))
        {
            for i in 0..p.len() {
                let gi = g[i] + if decays { decay * p[i] } else { 0.0 };
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * gi;
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Mini-batch Adam on softmax cross-entropy with early stopping on the
/// validation loss. The best-validation weights are returned.
pub fn train(dataset: &Dataset, train_idx: &[usize], val_idx: &[usize], cfg: &TrainConfig) -> Result<Trained> {
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::config("splits", "training and validation splits must be non-empty"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::config("learning_rate", "must be positive"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    if cfg.kind == ModelKind::Mlp && cfg.hidden == 0 {
        return Err(Error::config("hidden", "must be positive"));
    }
    let (m, t) = dataset.sample_shape();
    let k = dataset.n_classes();
    let mut model = BuiltinModel {
        m,
        t,
        n_classes: k,
        net: init_network(cfg.kind, m * t, cfg.hidden, k, cfg.seed),
    };
    let x_val = flatten(dataset, val_idx);
    let y_val = one_hot(dataset, val_idx, k);

    let mut adam = Adam::new(&model.net);
    let mut best: Option<(f64, usize, Network)> = None;
    let mut history = Vec::new();
    let mut order = train_idx.to_vec();
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        order.copy_from_slice(train_idx);
        order.shuffle(&mut substream(cfg.seed, Purpose::Training, &[1, epoch as u64]));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = flatten(dataset, chunk);
            let y = one_hot(dataset, chunk, k);
            let (grad, loss) = backward(&model, x.view(), &y);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += loss * chunk.len() as f64;
            adam.update(&mut model.net, &grad, cfg.learning_rate, cfg.weight_decay);
        }
        let train_loss = total / order.len() as f64;
        let (val_loss, val_accuracy) = evaluate(&model, x_val.view(), &y_val);
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        match &best {
            Some((b, _, _)) if val_loss >= *b => {}
            _ => best = Some((val_loss, epoch, model.net.clone())),
        }
        let best_epoch = best.as_ref().map(|b| b.1).unwrap_or(0);
        if epoch - best_epoch >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    let best_epoch = best.map(|(_, epoch, net)| {
        model.net = net;
        epoch
    });
    Ok(Trained {
        model,
        history,
        best_epoch,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetMeta;
    use crate::models::accuracy;
    use ndarray::Array3;
    use rand_distr::{Distribution, Normal};

    /// Two Gaussian blobs in R^{1x4}, centred at -1 and +1.
    fn blobs(n_per: usize, seed: u64) -> Dataset {
        let mut rng = substream(seed, Purpose::Baseline, &[7]);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2u8 {
            let centre = if class == 0 { -1.0 } else { 1.0 };
            for _ in 0..n_per {
                for _ in 0..4 {
                    values.push((centre + noise.sample(&mut rng)) as f32);
                }
                labels.push(class);
            }
        }
        Dataset::new(
            Array3::from_shape_vec((2 * n_per, 1, 4), values).unwrap(),
            labels,
            None,
            DatasetMeta {
                class_names: vec!["neg".into(), "pos".into()],
                variant: None,
                generation: None,
                seed: None,
                assumed_settings: vec![],
                split: None,
            },
        )
        .unwrap()
    }

    fn idx(ds: &Dataset) -> (Vec<usize>, Vec<usize>) {
        let all: Vec<usize> = (0..ds.len()).collect();
        let val = all.iter().copied().filter(|i| i % 5 == 0).collect();
        let train = all.iter().copied().filter(|i| i % 5 != 0).collect();
        (train, val)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let ds = blobs(100, 1);
        let (tr, va) = idx(&ds);
        for kind in [ModelKind::LinearSoftmax, ModelKind::Mlp] {
            let cfg = TrainConfig {
                kind,
                hidden: 8,
                learning_rate: 1e-2,
                seed: 3,
                ..Default::default()
            };
            let out = train(&ds, &tr, &va, &cfg).unwrap();
            assert!(accuracy(&out.model, &ds, &tr).unwrap() >= 0.99, "{kind:?}");
        }
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let ds = blobs(50, 2);
        let (tr, va) = idx(&ds);
        let cfg = TrainConfig {
            max_epochs: 0,
            seed: 9,
            ..Default::default()
        };
        let out = train(&ds, &tr, &va, &cfg).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.best_epoch, None);
        let (m, t) = ds.sample_shape();
        assert_eq!(out.model.net, init_network(ModelKind::Mlp, m * t, 64, 2, 9));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = blobs(40, 4);
        let (tr, va) = idx(&ds);
        let cfg = TrainConfig {
            max_epochs: 15,
            hidden: 6,
            seed: 5,
            ..Default::default()
        };
        let a = train(&ds, &tr, &va, &cfg).unwrap();
        let b = train(&ds, &tr, &va, &cfg).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn huge_learning_rate_diverges_or_recovers() {
        // either a clean Diverged error or finite weights - never NaN logits
        let ds = blobs(20, 5);
        let (tr, va) = idx(&ds);
        let cfg = TrainConfig {
            learning_rate: 1e300,
            max_epochs: 5,
            ..Default::default()
        };
        match train(&ds, &tr, &va, &cfg) {
            Err(Error::Diverged { .. }) => {}
            Ok(out) => assert!(out.history.iter().all(|h| h.val_loss.is_finite())),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let ds = blobs(6, 6);
        let all: Vec<usize> = (0..ds.len()).collect();
        let x = flatten(&ds, &all);
        let y = one_hot(&ds, &all, 2);
        let model = BuiltinModel {
            m: 1,
            t: 4,
            n_classes: 2,
            net: init_network(ModelKind::Mlp, 4, 3, 2, 1),
        };
        let (grad, _) = backward(&model, x.view(), &y);
        let analytic: Vec<f64> = slices(&grad).iter().flat_map(|(s, _)| s.to_vec()).collect();
        let n_params: usize = slices(&model.net).iter().map(|(s, _)| s.len()).sum();
        let loss_at = |offset: usize, h: f64| {
            let mut m2 = model.clone();
            let mut seen = 0;
            for s in slices_mut(&mut m2.net) {
                if offset < seen + s.len() {
                    s[offset - seen] += h;
                    break;
                }
                seen += s.len();
            }
            evaluate(&m2, x.view(), &y).0
        };
        for p in 0..n_params {
            let fd = (loss_at(p, 1e-6) - loss_at(p, -1e-6)) / 2e-6;
            assert!((fd - analytic[p]).abs() < 1e-6, "param {p}: {fd} vs {}", analytic[p]);
        }
    }
}
