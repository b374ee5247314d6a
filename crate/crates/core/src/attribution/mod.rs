//! Relevance maps for a single sample and target class.
//!
//! Black-box methods (Shapley value sampling, KernelSHAP) only call
//! [`Scorer::score`]; gradient methods (saliency, integrated gradients) need
//! a [`GradientProvider`], either analytic or finite-difference.

mod gradient;
mod kernel_shap;
mod players;
mod shapley;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::distributions::Open01;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gradient::{integrated_gradients, saliency};
pub use kernel_shap::{kernel_shap, shapley_kernel_weight};
pub use players::Granularity;
pub use shapley::{shapley_sampling, shapley_sampling_with_stderr, ShapleyEstimate};

use crate::attractor::NOISE_STD;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::{argmax, score_one, FiniteDifference, GradientProvider, Scorer};
use crate::rng::{substream, Purpose, StreamRng};
use crate::store::{ContainerKind, RelevanceContainer, RelevanceManifest, TargetPolicy, FORMAT_VERSION};

/// Per-element relevance, same `(M, T)` shape as the explained sample.
pub type RelevanceMap = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "shapley")]
    ShapleySampling,
    #[serde(rename = "kernelshap")]
    KernelShap,
    Saliency,
    #[serde(rename = "ig")]
    IntegratedGradients,
    Random,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ShapleySampling,
        Method::KernelShap,
        Method::Saliency,
        Method::IntegratedGradients,
        Method::Random,
    ];

    /// Short name used on the command line and in file names.
    pub fn name(self) -> &'static str {
        match self {
            Method::ShapleySampling => "shapley",
            Method::KernelShap => "kernelshap",
            Method::Saliency => "saliency",
            Method::IntegratedGradients => "ig",
            Method::Random => "random",
        }
    }

    pub fn needs_gradients(self) -> bool {
        matches!(self, Method::Saliency | Method::IntegratedGradients)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "shapley" | "shapleysampling" | "shapleyvaluesampling" => Ok(Method::ShapleySampling),
            "kernelshap" => Ok(Method::KernelShap),
            "saliency" => Ok(Method::Saliency),
            "ig" | "integratedgradients" => Ok(Method::IntegratedGradients),
            "random" => Ok(Method::Random),
            other => Err(Error::config("method", format!("unknown attribution method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselinePolicy {
    Zeros,
    /// i.i.d. `N(0, 1/12)`, drawn per sample.
    NormalNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionConfig {
    pub method: Method,
    pub n_permutations: usize,
    pub n_coalitions: usize,
    pub ig_steps: usize,
    pub baseline: BaselinePolicy,
    pub granularity: Granularity,
    /// Fall back to central differences when the scorer has no gradients.
    pub finite_difference: bool,
    pub seed: u64,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            method: Method::ShapleySampling,
            n_permutations: 25,
            n_coalitions: 2048,
            ig_steps: 50,
            baseline: BaselinePolicy::Zeros,
            granularity: Granularity::Element,
            finite_difference: false,
            seed: 0,
        }
    }
}

impl AttributionConfig {
    pub fn for_method(method: Method) -> Self {
        AttributionConfig {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_permutations", self.n_permutations),
            ("n_coalitions", self.n_coalitions),
            ("ig_steps", self.ig_steps),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        Ok(())
    }

    /// Hyperparameters that affect `method`, for the relevance manifest.
    pub fn params_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("baseline".into(), serde_json::to_value(self.baseline).unwrap());
        map.insert("granularity".into(), serde_json::to_value(self.granularity).unwrap());
        match self.method {
            Method::ShapleySampling => {
                map.insert("n_permutations".into(), self.n_permutations.into());
            }
            Method::KernelShap => {
                map.insert("n_coalitions".into(), self.n_coalitions.into());
            }
            Method::IntegratedGradients => {
                map.insert("ig_steps".into(), self.ig_steps.into());
                map.insert("finite_difference".into(), self.finite_difference.into());
            }
            Method::Saliency => {
                map.insert("finite_difference".into(), self.finite_difference.into());
            }
            Method::Random => {}
        }
        serde_json::Value::Object(map)
    }
}

/// Baseline for the sample keyed `sample_key`.
pub fn baseline(policy: BaselinePolicy, shape: (usize, usize), seed: u64, sample_key: u64) -> Array2<f64> {
    match policy {
        BaselinePolicy::Zeros => Array2::zeros(shape),
        BaselinePolicy::NormalNoise => {
            let mut rng = substream(seed, Purpose::Baseline, &[sample_key]);
            let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
            Array2::from_shape_fn(shape, |_| noise.sample(&mut rng))
        }
    }
}

/// i.i.d. `U(0, 1)` relevance, strictly positive.
pub fn random_relevance(shape: (usize, usize), rng: &mut StreamRng) -> RelevanceMap {
    Array2::from_shape_fn(shape, |_| rng.sample::<f64, _>(Open01))
}

fn attribution_rng(cfg: &AttributionConfig, sample_key: u64) -> StreamRng {
    substream(cfg.seed, Purpose::Attribution, &[sample_key, cfg.method as u64])
}

/// Resolve the gradient source for `scorer` under `cfg`.
pub fn gradient_source<'a>(scorer: &'a dyn Scorer, cfg: &AttributionConfig) -> Result<GradientSource<'a>> {
    if let Some(g) = scorer.gradients() {
        return Ok(GradientSource::Analytic(g));
    }
    if cfg.finite_difference {
        return Ok(GradientSource::FiniteDifference(FiniteDifference::new(scorer)));
    }
    Err(Error::MethodUnsupportedForScorer {
        method: cfg.method.to_string(),
        scorer: scorer.id(),
    })
}

pub enum GradientSource<'a> {
    Analytic(&'a dyn GradientProvider),
    FiniteDifference(FiniteDifference<'a>),
}

impl GradientSource<'_> {
    pub fn provider(&self) -> &dyn GradientProvider {
        match self {
            GradientSource::Analytic(g) => *g,
            GradientSource::FiniteDifference(fd) => fd,
        }
    }
}

/// Explain `scorer`'s class `class` score at `x`.
///
/// `sample_key` selects the random substreams (permutations, coalitions,
/// noise baselines); explaining the same sample with the same key and seed
/// always gives the same map.
pub fn attribute(
    scorer: &dyn Scorer,
    x: ArrayView2<'_, f64>,
    class: usize,
    cfg: &AttributionConfig,
    sample_key: u64,
) -> Result<RelevanceMap> {
    cfg.validate()?;
    if x.dim() != scorer.input_shape() {
        return Err(Error::shape("sample", format!("{:?}", scorer.input_shape()), format!("{:?}", x.dim())));
    }
    if class >= scorer.n_classes() {
        return Err(Error::shape("target class", format!("< {}", scorer.n_classes()), class));
    }
    let base = baseline(cfg.baseline, x.dim(), cfg.seed, sample_key);
    let mut rng = attribution_rng(cfg, sample_key);
    match cfg.method {
        Method::ShapleySampling => shapley_sampling(scorer, x, base.view(), class, cfg, &mut rng),
        Method::KernelShap => kernel_shap(scorer, x, base.view(), class, cfg, &mut rng),
        Method::Saliency => {
            let source = gradient_source(scorer, cfg)?;
            saliency(source.provider(), x, class)
        }
        Method::IntegratedGradients => {
            let source = gradient_source(scorer, cfg)?;
            integrated_gradients(source.provider(), x, base.view(), class, cfg.ig_steps)
        }
        Method::Random => Ok(random_relevance(x.dim(), &mut rng)),
    }
}

/// Explain `indices` of `dataset`, one relevance map per index.
pub fn attribute_dataset(
    scorer: &dyn Scorer,
    dataset: &Dataset,
    indices: &[usize],
    target: TargetPolicy,
    cfg: &AttributionConfig,
) -> Result<RelevanceContainer> {
    cfg.validate()?;
    let (m, t) = dataset.sample_shape();
    if cfg.method.needs_gradients() {
        // fail before doing any work
        gradient_source(scorer, cfg)?;
    }
    let explain = |&i: &usize| -> Result<(usize, RelevanceMap)> {
        let x = dataset.sample(i);
        let class = match target {
            TargetPolicy::TrueClass => dataset.labels[i] as usize,
            TargetPolicy::PredictedClass => argmax(score_one(scorer, x.view())?.view()),
        };
        Ok((class, attribute(scorer, x.view(), class, cfg, i as u64)?))
    };
    let results: Vec<(usize, RelevanceMap)> = match scorer.max_concurrency() {
        None => indices.par_iter().map(explain).collect::<Result<_>>()?,
        Some(_) => indices.iter().map(explain).collect::<Result<_>>()?,
    };
    let mut relevance = Array3::<f32>::zeros((indices.len(), m, t));
    let mut targets = Vec::with_capacity(indices.len());
    for (k, (class, map)) in results.into_iter().enumerate() {
        relevance.index_axis_mut(Axis(0), k).assign(&map.mapv(|v| v as f32));
        targets.push(class);
    }
    let container = RelevanceContainer {
        manifest: RelevanceManifest {
            format_version: FORMAT_VERSION,
            kind: ContainerKind::Relevance,
            method: cfg.method.name().to_string(),
            scorer_id: scorer.id(),
            target_policy: target,
            seed: cfg.seed,
            params: cfg.params_json(),
            dataset_n: dataset.len(),
            m,
            t,
            indices: indices.to_vec(),
            targets,
        },
        relevance,
    };
    container.check()?;
    Ok(container)
}

#[cfg(test)]
pub(crate) mod test_scorers {
    use ndarray::{Array1, Array2, ArrayView3, Axis};

    use crate::error::Result;
    use crate::models::Scorer;

    /// `S_c(x) = sum_i w[c, i] x_i` plus optional pairwise products
    /// `x_a * x_b` added to every class.
    pub struct Additive {
        pub w: Array2<f64>,
        pub shape: (usize, usize),
        pub interactions: Vec<(usize, usize, f64)>,
    }

    impl Scorer for Additive {
        fn n_classes(&self) -> usize {
            self.w.nrows()
        }
        fn input_shape(&self) -> (usize, usize) {
            self.shape
        }
        fn id(&self) -> String {
            "additive".into()
        }
        fn score(&self, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
            let b = inputs.dim().0;
            let d = self.shape.0 * self.shape.1;
            let flat = inputs.to_owned().into_shape_with_order((b, d)).unwrap();
            let mut out = flat.dot(&self.w.t());
            for (row, mut o) in flat.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
                let extra: f64 = self.interactions.iter().map(|&(a, c, k)| k * row[a] * row[c]).sum();
                o += extra;
            }
            Ok(out)
        }
    }

    pub fn constant(k: usize, shape: (usize, usize)) -> Additive {
        Additive {
            w: Array2::zeros((k, shape.0 * shape.1)),
            shape,
            interactions: vec![],
        }
    }

    pub fn weights(d: usize) -> Array1<f64> {
        Array1::from_shape_fn(d, |i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_relevance_is_in_open_unit_interval() {
        let mut rng = substream(1, Purpose::Attribution, &[0]);
        let r = random_relevance((3, 250), &mut rng);
        assert_eq!(r.len(), 750);
        assert!(r.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn random_relevance_is_seeded() {
        let a = random_relevance((3, 20), &mut substream(5, Purpose::Attribution, &[2]));
        let b = random_relevance((3, 20), &mut substream(5, Purpose::Attribution, &[2]));
        assert_eq!(a, b);
    }

    #[test]
    fn random_relevance_mean_is_one_half() {
        let mut rng = substream(2, Purpose::Attribution, &[0]);
        let r = random_relevance((1, 100_000), &mut rng);
        assert!((r.mean().unwrap() - 0.5).abs() < 0.005);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("Shapley_Sampling".parse::<Method>().unwrap(), Method::ShapleySampling);
        assert!("deeplift".parse::<Method>().is_err());
    }

    #[test]
    fn gradient_methods_need_gradients() {
        let scorer = crate::models::external::ChannelMeanScorer {
            n_classes: 2,
            shape: (2, 3),
        };
        let x = Array2::zeros((2, 3));
        let cfg = AttributionConfig::for_method(Method::Saliency);
        let err = attribute(&scorer, x.view(), 0, &cfg, 0).unwrap_err();
        assert!(matches!(err, Error::MethodUnsupportedForScorer { .. }));
        let fd = AttributionConfig {
            finite_difference: true,
            ..cfg
        };
        let r = attribute(&scorer, x.view(), 1, &fd, 0).unwrap();
        // class 1 reads channel 1: d mean / dx = 1/3 on that row
        for t in 0..3 {
            assert!(r[[0, t]].abs() < 1e-9);
            assert!((r[[1, t]] - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_baseline_has_target_spread() {
        let b = baseline(BaselinePolicy::NormalNoise, (10, 10_000), 3, 1);
        let mean = b.mean().unwrap();
        let std = (b.mapv(|v| (v - mean).powi(2)).mean().unwrap()).sqrt();
        assert!((std - NOISE_STD).abs() < 0.003);
        assert_eq!(b, baseline(BaselinePolicy::NormalNoise, (10, 10_000), 3, 1));
    }
}
