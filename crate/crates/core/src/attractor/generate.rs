use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::systems::{integrate_system, Interval, SystemId, SystemSpec, DUFFING_OMEGA};
use crate::dataset::{Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose, StreamRng};

/// Standard deviation of the white noise used for corruption and occlusion,
/// `1 / (2 sqrt 3)`.
pub const NOISE_STD: f64 = 0.288_675_134_594_812_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Transformed attractors.
    Sd1,
    /// Random contiguous windows replaced by white noise.
    Sd2,
    /// First 100 steps of every channel replaced by white noise.
    Sd3,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sd1" => Ok(Variant::Sd1),
            "sd2" => Ok(Variant::Sd2),
            "sd3" => Ok(Variant::Sd3),
            other => Err(Error::config("variant", format!("unknown variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Sd1 => "sd1",
            Variant::Sd2 => "sd2",
            Variant::Sd3 => "sd3",
        })
    }
}

/// Where white noise replaces the signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Corruption {
    /// The first `len` steps of every channel.
    Prefix { len: usize },
    /// One contiguous window per channel, length uniform in `[min_len, max_len]`.
    Window { min_len: usize, max_len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformIntervals {
    pub a: Interval,
    pub b: Interval,
    pub c: Interval,
    pub d: Interval,
}

impl Default for TransformIntervals {
    fn default() -> Self {
        TransformIntervals {
            a: Interval::new(-0.5, 0.5),
            b: Interval::new(0.5, 1.5),
            c: Interval::new(0.5, 2.0),
            d: Interval::new(0.0, 2.0 * std::f64::consts::PI),
        }
    }
}

/// Per-channel parameters of `a + b sin(c x + d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub c: [f64; 3],
    pub d: [f64; 3],
}

impl TransformParams {
    pub fn sample<R: Rng + ?Sized>(iv: &TransformIntervals, rng: &mut R) -> Self {
        let mut draw = |i: &Interval| [i.sample(rng), i.sample(rng), i.sample(rng)];
        let a = draw(&iv.a);
        let b = draw(&iv.b);
        let c = draw(&iv.c);
        let d = draw(&iv.d);
        TransformParams { a, b, c, d }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub n_per_class: usize,
    pub n_integration_steps: usize,
    pub n_discard: usize,
    pub downsample_factor: usize,
    pub dt: f64,
    pub duffing_omega: f64,
    pub transform_intervals: TransformIntervals,
    pub variant: Variant,
    pub noise_std: f64,
    pub sd2_window: (usize, usize),
    pub sd3_prefix: usize,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            n_per_class: 500,
            n_integration_steps: 3500,
            n_discard: 1000,
            downsample_factor: 10,
            dt: 0.02,
            duffing_omega: DUFFING_OMEGA,
            transform_intervals: TransformIntervals::default(),
            variant: Variant::Sd1,
            noise_std: NOISE_STD,
            sd2_window: (50, 100),
            sd3_prefix: 100,
            max_attempts: 10,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    /// Length of each generated series.
    pub fn series_len(&self) -> usize {
        let kept = self.n_integration_steps.saturating_sub(self.n_discard);
        kept.div_ceil(self.downsample_factor.max(1))
    }

    pub fn corruption(&self) -> Option<Corruption> {
        match self.variant {
            Variant::Sd1 => None,
            Variant::Sd2 => Some(Corruption::Window {
                min_len: self.sd2_window.0,
                max_len: self.sd2_window.1,
            }),
            Variant::Sd3 => Some(Corruption::Prefix { len: self.sd3_prefix }),
        }
    }

    pub fn systems(&self) -> Vec<SystemSpec> {
        SystemId::ALL
            .iter()
            .map(|&id| SystemSpec::with_duffing_omega(id, self.duffing_omega))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_per_class", self.n_per_class),
            ("n_integration_steps", self.n_integration_steps),
            ("downsample_factor", self.downsample_factor),
            ("max_attempts", self.max_attempts),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.n_discard >= self.n_integration_steps {
            return Err(Error::config(
                "n_discard",
                format!("{} leaves no retained steps out of {}", self.n_discard, self.n_integration_steps),
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt", "must be positive and finite"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std", "must be non-negative and finite"));
        }
        if !self.duffing_omega.is_finite() {
            return Err(Error::config("duffing_omega", "must be finite"));
        }
        let iv = &self.transform_intervals;
        for (name, i) in [("a", iv.a), ("b", iv.b), ("c", iv.c), ("d", iv.d)] {
            if !i.is_valid() {
                return Err(Error::config(format!("transform_intervals.{name}"), "lo must not exceed hi"));
            }
        }
        let t = self.series_len();
        match self.corruption() {
            Some(Corruption::Window { min_len, max_len }) => {
                if min_len == 0 || min_len > max_len {
                    return Err(Error::config("sd2_window", "need 0 < min <= max"));
                }
                if max_len > t {
                    return Err(Error::config("sd2_window", format!("max length {max_len} exceeds T = {t}")));
                }
            }
            Some(Corruption::Prefix { len }) if len > t => {
                return Err(Error::config("sd3_prefix", format!("{len} exceeds T = {t}")));
            }
            _ => {}
        }
        Ok(())
    }

    /// Settings that fill gaps in the published description of the
    /// generator, recorded in every dataset manifest.
    pub fn assumed_settings(&self) -> Vec<String> {
        let iv = &self.transform_intervals;
        vec![
            format!("dt = {}", self.dt),
            format!("duffing omega = {}", self.duffing_omega),
            format!(
                "transform intervals a=[{},{}] b=[{},{}] c=[{},{}] d=[{},{}]",
                iv.a.lo, iv.a.hi, iv.b.lo, iv.b.hi, iv.c.lo, iv.c.hi, iv.d.lo, iv.d.hi
            ),
            format!("corruption noise std = {}", self.noise_std),
            format!(
                "sd2 corruption = one contiguous window per channel, length in [{}, {}]",
                self.sd2_window.0, self.sd2_window.1
            ),
            "downsampling keeps every k-th retained step (no averaging)".to_string(),
            "rescaling removes channel means before dividing by the global max abs".to_string(),
        ]
    }
}

/// One generated series before it is frozen into a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    /// `(M, T)` values.
    pub values: Array2<f64>,
    pub label: usize,
    /// `(M, T)`, 1 = informative, 0 = replaced by noise.
    pub expert_weights: Array2<u8>,
}

impl RawSample {
    pub fn new(values: Array2<f64>, label: usize) -> Self {
        let expert_weights = Array2::ones(values.raw_dim());
        RawSample {
            values,
            label,
            expert_weights,
        }
    }
}

/// Integrate one attractor instance with freshly drawn parameter and initial
/// condition, then discard the transient and downsample.
pub fn sample_instance(spec: &SystemSpec, config: &GenerationConfig, label: usize, index: usize) -> Result<RawSample> {
    let mut rng = substream(config.seed, Purpose::InitialCondition, &[label as u64, index as u64]);
    for _ in 0..config.max_attempts {
        let param = spec.sampled_param.sample(&mut rng);
        let init = [
            spec.init[0].sample(&mut rng),
            spec.init[1].sample(&mut rng),
            spec.init[2].sample(&mut rng),
        ];
        match integrate_system(spec, init, param, config.n_integration_steps, config.dt) {
            Ok(traj) => {
                let kept = traj
                    .slice(ndarray::s![.., config.n_discard..;config.downsample_factor])
                    .to_owned();
                return Ok(RawSample::new(kept, label));
            }
            Err(Error::NonFiniteState { system, step }) => {
                log::debug!("{system} diverged at step {step} (class {label}, sample {index}); resampling");
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::GenerationFailed {
        class: label,
        index,
        attempts: config.max_attempts,
    })
}

/// Replace every channel `m` by `a_m + b_m sin(c_m x_m(t) + d_m)`.
pub fn apply_transform(mut sample: RawSample, params: &TransformParams) -> RawSample {
    for (m, mut row) in sample.values.axis_iter_mut(Axis(0)).enumerate() {
        let (a, b, c, d) = (params.a[m], params.b[m], params.c[m], params.d[m]);
        row.mapv_inplace(|x| a + b * (c * x + d).sin());
    }
    sample
}

/// Remove each channel's temporal mean, then divide all channels by the
/// single global maximum absolute value.
pub fn rescale(mut sample: RawSample) -> Result<RawSample> {
    for mut row in sample.values.axis_iter_mut(Axis(0)) {
        let mean = row.mean().unwrap_or(0.0);
        row.mapv_inplace(|v| v - mean);
    }
    let max_abs = sample.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if !(max_abs >= 1e-12) {
        return Err(Error::DegenerateSample { max_abs });
    }
    sample.values.mapv_inplace(|v| v / max_abs);
    Ok(sample)
}

/// Replace parts of the sample by `N(0, noise_std^2)` draws and zero the
/// expert weights exactly there.
pub fn corrupt(mut sample: RawSample, corruption: &Corruption, noise_std: f64, rng: &mut StreamRng) -> Result<RawSample> {
    let (m_count, t) = sample.values.dim();
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::config("noise_std", e.to_string()))?;
    for m in 0..m_count {
        let (start, len) = match *corruption {
            Corruption::Prefix { len } => {
                if len > t {
                    return Err(Error::WindowTooLong { len, t });
                }
                (0, len)
            }
            Corruption::Window { min_len, max_len } => {
                let len = rng.gen_range(min_len..=max_len);
                if len > t {
                    return Err(Error::WindowTooLong { len, t });
                }
                (rng.gen_range(0..=t - len), len)
            }
        };
        for k in start..start + len {
            sample.values[[m, k]] = noise.sample(rng);
            sample.expert_weights[[m, k]] = 0;
        }
    }
    Ok(sample)
}

/// Full pipeline for one sample: integrate, transform, rescale, corrupt.
pub fn generate_sample(spec: &SystemSpec, config: &GenerationConfig, label: usize, index: usize) -> Result<RawSample> {
    let coords = [label as u64, index as u64];
    let raw = sample_instance(spec, config, label, index)?;
    let params = TransformParams::sample(
        &config.transform_intervals,
        &mut substream(config.seed, Purpose::Transform, &coords),
    );
    let mut sample = rescale(apply_transform(raw, &params))?;
    if let Some(corruption) = config.corruption() {
        let mut rng = substream(config.seed, Purpose::Corruption, &coords);
        sample = corrupt(sample, &corruption, config.noise_std, &mut rng)?;
    }
    Ok(sample)
}

/// Generate `5 * n_per_class` samples, labels in system declaration order.
pub fn generate_dataset(config: &GenerationConfig) -> Result<Dataset> {
    config.validate()?;
    let systems = config.systems();
    let jobs: Vec<(usize, usize)> = (0..systems.len())
        .flat_map(|c| (0..config.n_per_class).map(move |i| (c, i)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(c, i)| generate_sample(&systems[c], config, c, i))
        .collect::<Result<Vec<_>>>()?;

    let n = samples.len();
    let t = config.series_len();
    let mut values = Array3::<f32>::zeros((n, 3, t));
    let mut weights = Array3::<u8>::zeros((n, 3, t));
    let mut labels = Vec::with_capacity(n);
    for (k, s) in samples.iter().enumerate() {
        values
            .index_axis_mut(Axis(0), k)
            .assign(&s.values.mapv(|v| v as f32));
        weights.index_axis_mut(Axis(0), k).assign(&s.expert_weights);
        labels.push(s.label as u8);
    }
    let meta = DatasetMeta {
        class_names: systems.iter().map(|s| s.id().to_string()).collect(),
        variant: Some(config.variant),
        generation: Some(config.clone()),
        seed: Some(config.seed),
        assumed_settings: config.assumed_settings(),
        split: None,
    };
    Dataset::new(values, labels, Some(weights), meta)
}
