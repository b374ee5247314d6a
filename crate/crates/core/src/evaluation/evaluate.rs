use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{auc_se, hmi, information_ratio, positive_set, s_e, tic_for_mask, CurvePoint, QuantileSet};
use super::occlusion::{occlude, random_mask_like, Fill, OcclusionMethod};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::{argmax, score_batch, score_indices, Expectancy, ExpectancyPolicy, Scorer};
use crate::rng::{substream, Purpose, StreamRng};
use crate::store::{RelevanceContainer, TargetPolicy};

/// Which samples enter the faithfulness curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplePolicy {
    /// Only samples the scorer classifies correctly.
    #[default]
    CorrectOnly,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub quantiles: QuantileSet,
    pub occlusion: Fill,
    /// Also occlude random sets of matched size.
    pub random_baseline: bool,
    pub expectancy: ExpectancyPolicy,
    pub sample_policy: SamplePolicy,
    /// Reports with fewer evaluated samples are flagged.
    pub min_samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            quantiles: QuantileSet::default(),
            occlusion: Fill::NormalSample,
            random_baseline: false,
            expectancy: ExpectancyPolicy::PerClass,
            sample_policy: SamplePolicy::CorrectOnly,
            min_samples: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub q: f64,
    pub n_occluded: usize,
    pub n_r: f64,
    pub tic: f64,
    pub s_e: f64,
    pub occluded_logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCurve {
    pub class: usize,
    /// `S_c(X)` before occlusion.
    pub score: f64,
    pub expectancy: f64,
    /// In quantile order.
    pub points: Vec<SamplePoint>,
}

impl SampleCurve {
    pub fn curve(&self) -> Vec<CurvePoint> {
        self.points
            .iter()
            .map(|p| CurvePoint {
                q: p.q,
                n_r: p.n_r,
                tic: p.tic,
                s_e: p.s_e,
            })
            .collect()
    }
}

fn occlusion_rng(seed: u64, method: OcclusionMethod, sample_key: u64, q_index: usize) -> StreamRng {
    let purpose = match method {
        OcclusionMethod::RandomBaseline(_) => Purpose::RandomMask,
        _ => Purpose::Occlusion,
    };
    substream(seed, purpose, &[sample_key, q_index as u64])
}

/// Occluded copies of `x`, one per quantile, with mask sizes and TIC.
fn occluded_batch(
    x: ArrayView2<'_, f64>,
    relevance: ArrayView2<'_, f64>,
    quantiles: &QuantileSet,
    method: OcclusionMethod,
    seed: u64,
    sample_key: u64,
) -> (Array3<f64>, Vec<usize>, Vec<f64>) {
    let (m, t) = x.dim();
    let mut batch = Array3::zeros((quantiles.len(), m, t));
    let mut sizes = Vec::with_capacity(quantiles.len());
    let mut tics = Vec::with_capacity(quantiles.len());
    for (k, &q) in quantiles.levels().iter().enumerate() {
        let mask = positive_set(relevance, q);
        let mut rng = occlusion_rng(seed, method, sample_key, k);
        let (occluded, used) = match method {
            OcclusionMethod::RandomBaseline(fill) => {
                let random = random_mask_like(mask.view(), &mut rng);
                (occlude(x, random.view(), fill.into(), &mut rng), random)
            }
            _ => (occlude(x, mask.view(), method, &mut rng), mask),
        };
        sizes.push(used.iter().filter(|&&b| b).count());
        tics.push(tic_for_mask(relevance, used.view()));
        batch.index_axis_mut(Axis(0), k).assign(&occluded);
    }
    (batch, sizes, tics)
}

/// Mask, occlude and rescore `x` at every quantile.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_sample(
    scorer: &dyn Scorer,
    x: ArrayView2<'_, f64>,
    class: usize,
    relevance: ArrayView2<'_, f64>,
    quantiles: &QuantileSet,
    occlusion: OcclusionMethod,
    expectancy: f64,
    seed: u64,
    sample_key: u64,
) -> Result<SampleCurve> {
    if relevance.dim() != x.dim() {
        return Err(Error::shape("relevance", format!("{:?}", x.dim()), format!("{:?}", relevance.dim())));
    }
    if !relevance.iter().any(|&r| r > 0.0) {
        return Err(Error::NoPositiveRelevance);
    }
    let score = score_batch(scorer, x.insert_axis(Axis(0)))?[[0, class]];
    s_e(score, score, expectancy)?;
    let (batch, sizes, tics) = occluded_batch(x, relevance, quantiles, occlusion, seed, sample_key);
    let logits = score_batch(scorer, batch.view())?;
    let total = x.len() as f64;
    let points = quantiles
        .levels()
        .iter()
        .enumerate()
        .map(|(k, &q)| {
            Ok(SamplePoint {
                q,
                n_occluded: sizes[k],
                n_r: sizes[k] as f64 / total,
                tic: tics[k],
                s_e: s_e(score, logits[[k, class]], expectancy)?,
                occluded_logits: logits.row(k).to_vec(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(SampleCurve {
        class,
        score,
        expectancy,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoPositiveRelevance,
    DegenerateReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub index: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub q: f64,
    pub n_r: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    /// Samples in the relevance container.
    pub n_samples: usize,
    /// Samples whose prediction was scored (fewer for partial reports).
    pub n_scored: usize,
    pub n_correct: usize,
    /// Samples selected by the sample policy.
    pub n_selected: usize,
    /// Selected samples that made it into the curves.
    pub n_evaluated: usize,
    pub n_hmi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    /// Mean over evaluated samples, in quantile order.
    pub curve: Vec<CurvePoint>,
    /// Area under the mean curve; 0 when no sample was evaluated.
    pub auc_se: f64,
    /// Mean of the per-sample areas.
    pub auc_se_sample_mean: f64,
    pub accuracy_curve: Vec<AccuracyPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub scorer_id: String,
    pub occlusion: Fill,
    pub sample_policy: SamplePolicy,
    pub target_policy: TargetPolicy,
    pub expectancy: Expectancy,
    pub quantiles: QuantileSet,
    pub seed: u64,
    #[serde(flatten)]
    pub summary: CurveSummary,
    pub information_ratio: Option<f64>,
    pub hmi: Option<f64>,
    /// Accuracy before any occlusion, over the scored samples.
    pub base_accuracy: f64,
    pub random_baseline: Option<CurveSummary>,
    pub counts: Counts,
    pub skipped: Vec<Skip>,
    pub insufficient_samples: bool,
    /// The scorer failed midway; aggregates cover the samples before it.
    pub partial: bool,
    pub failure: Option<String>,
}

impl MethodReport {
    pub fn auc_se(&self) -> f64 {
        self.summary.auc_se
    }
}

/// Per-sample results for one occlusion scheme.
struct Occluded {
    n_r: Vec<f64>,
    tic: Vec<f64>,
    target_logit: Vec<f64>,
    predicted: Vec<usize>,
}

struct Outcome {
    index: usize,
    label: usize,
    target: usize,
    predicted: usize,
    score: f64,
    selected: bool,
    skip: Option<SkipReason>,
    method: Occluded,
    random: Option<Occluded>,
    hmi: Option<f64>,
}

fn occluded_outcome(
    scorer: &dyn Scorer,
    x: ArrayView2<'_, f64>,
    relevance: ArrayView2<'_, f64>,
    target: usize,
    cfg: &EvalConfig,
    method: OcclusionMethod,
    key: u64,
) -> Result<Occluded> {
    let (batch, sizes, tic) = occluded_batch(x, relevance, &cfg.quantiles, method, cfg.seed, key);
    let logits = score_batch(scorer, batch.view())?;
    Ok(Occluded {
        n_r: sizes.iter().map(|&s| s as f64 / x.len() as f64).collect(),
        tic,
        target_logit: logits.column(target).to_vec(),
        predicted: logits.axis_iter(Axis(0)).map(|r| argmax(r)).collect(),
    })
}

fn aggregate(
    outcomes: &[Outcome],
    pick: impl Fn(&Outcome) -> Option<&Occluded>,
    expectancy: &Expectancy,
    quantiles: &QuantileSet,
) -> (CurveSummary, Vec<Vec<CurvePoint>>) {
    let nq = quantiles.len();
    let mut per_sample: Vec<Vec<CurvePoint>> = Vec::new();
    for o in outcomes.iter().filter(|o| o.selected && o.skip.is_none()) {
        let occ = pick(o).expect("evaluated samples carry occlusion results");
        let e = expectancy.for_class(o.target);
        let curve = (0..nq)
            .map(|k| CurvePoint {
                q: quantiles.levels()[k],
                n_r: occ.n_r[k],
                tic: occ.tic[k],
                s_e: s_e(o.score, occ.target_logit[k], e).expect("degenerate samples are skipped"),
            })
            .collect();
        per_sample.push(curve);
    }
    let n = per_sample.len();
    let (curve, auc, auc_mean) = if n == 0 {
        (Vec::new(), 0.0, 0.0)
    } else {
        let curve: Vec<CurvePoint> = (0..nq)
            .map(|k| {
                let mean = |f: fn(&CurvePoint) -> f64| per_sample.iter().map(|c| f(&c[k])).sum::<f64>() / n as f64;
                CurvePoint {
                    q: quantiles.levels()[k],
                    n_r: mean(|p| p.n_r),
                    tic: mean(|p| p.tic),
                    s_e: mean(|p| p.s_e),
                }
            })
            .collect();
        let auc = auc_se(&curve);
        let auc_mean = per_sample.iter().map(|c| auc_se(c)).sum::<f64>() / n as f64;
        (curve, auc, auc_mean)
    };
    let accuracy_curve = accuracy_curve(outcomes, &pick, quantiles);
    (
        CurveSummary {
            curve,
            auc_se: auc,
            auc_se_sample_mean: auc_mean,
            accuracy_curve,
        },
        per_sample,
    )
}

/// Accuracy over every scored sample; samples without positive relevance
/// count as unoccluded.
fn accuracy_curve(
    outcomes: &[Outcome],
    pick: &impl Fn(&Outcome) -> Option<&Occluded>,
    quantiles: &QuantileSet,
) -> Vec<AccuracyPoint> {
    let n = outcomes.len();
    if n == 0 {
        return Vec::new();
    }
    (0..quantiles.len())
        .map(|k| {
            let mut n_r = 0.0;
            let mut correct = 0usize;
            for o in outcomes {
                let (r, pred) = match pick(o) {
                    Some(occ) => (occ.n_r[k], occ.predicted[k]),
                    None => (0.0, o.predicted),
                };
                n_r += r;
                correct += usize::from(pred == o.label);
            }
            AccuracyPoint {
                q: quantiles.levels()[k],
                n_r: n_r / n as f64,
                accuracy: correct as f64 / n as f64,
            }
        })
        .collect()
}

fn evaluate_one(
    scorer: &dyn Scorer,
    dataset: &Dataset,
    container: &RelevanceContainer,
    pos: usize,
    logits: &Array2<f64>,
    expectancy: &Expectancy,
    cfg: &EvalConfig,
) -> Result<Outcome> {
    let index = container.manifest.indices[pos];
    let target = container.manifest.targets[pos];
    let label = dataset.labels[index] as usize;
    let row = logits.row(pos);
    let predicted = argmax(row);
    let score = row[target];
    let selected = match cfg.sample_policy {
        SamplePolicy::CorrectOnly => predicted == label,
        SamplePolicy::All => true,
    };
    let x = dataset.sample(index);
    let relevance = container.relevance.index_axis(Axis(0), pos).mapv(f64::from);
    let key = index as u64;
    let has_positive = relevance.iter().any(|&r| r > 0.0);
    let skip = if !has_positive {
        Some(SkipReason::NoPositiveRelevance)
    } else if (score - expectancy.for_class(target)).abs() <= super::metrics::DEGENERATE_REFERENCE {
        Some(SkipReason::DegenerateReference)
    } else {
        None
    };
    let (method, random) = if has_positive {
        let method = occluded_outcome(scorer, x.view(), relevance.view(), target, cfg, cfg.occlusion.into(), key)?;
        let random = if cfg.random_baseline {
            let rb = OcclusionMethod::RandomBaseline(cfg.occlusion);
            Some(occluded_outcome(scorer, x.view(), relevance.view(), target, cfg, rb, key)?)
        } else {
            None
        };
        (method, random)
    } else {
        let empty = || Occluded {
            n_r: vec![0.0; cfg.quantiles.len()],
            tic: vec![0.0; cfg.quantiles.len()],
            target_logit: vec![score; cfg.quantiles.len()],
            predicted: vec![predicted; cfg.quantiles.len()],
        };
        (empty(), cfg.random_baseline.then(empty))
    };
    let hmi = match dataset.expert_weights_of(index) {
        Some(w) if selected && has_positive => Some(hmi(relevance.view(), w)?),
        _ => None,
    };
    Ok(Outcome {
        index,
        label,
        target,
        predicted,
        score,
        selected,
        skip,
        method,
        random,
        hmi,
    })
}

/// Faithfulness report for one relevance container.
///
/// A scorer failure midway does not discard finished work: the report is
/// returned with `partial` set and the error message in `failure`.
pub fn evaluate_method(
    scorer: &dyn Scorer,
    dataset: &Dataset,
    container: &RelevanceContainer,
    cfg: &EvalConfig,
) -> Result<MethodReport> {
    container.check_against(dataset)?;
    if scorer.input_shape() != dataset.sample_shape() || scorer.n_classes() != dataset.n_classes() {
        return Err(Error::shape(
            "scorer",
            format!("{:?} with {} classes", dataset.sample_shape(), dataset.n_classes()),
            format!("{:?} with {} classes", scorer.input_shape(), scorer.n_classes()),
        ));
    }
    let indices = &container.manifest.indices;
    let mut failure: Option<Error> = None;
    let logits = match score_indices(scorer, dataset, indices, 256) {
        Ok(l) => l,
        Err(e) if e.is_scorer_failure() => {
            failure = Some(e);
            Array2::zeros((0, dataset.n_classes()))
        }
        Err(e) => return Err(e),
    };
    let expectancy = Expectancy::from_logits(logits.view(), dataset, indices, cfg.expectancy);
    let run = |pos: usize| evaluate_one(scorer, dataset, container, pos, &logits, &expectancy, cfg);
    let mut outcomes = Vec::with_capacity(logits.nrows());
    match scorer.max_concurrency() {
        None => {
            let results: Vec<Result<Outcome>> = (0..logits.nrows()).into_par_iter().map(run).collect();
            for r in results {
                match r {
                    Ok(o) => outcomes.push(o),
                    Err(e) if e.is_scorer_failure() => {
                        failure = Some(e);
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Some(_) => {
            for pos in 0..logits.nrows() {
                match run(pos) {
                    Ok(o) => outcomes.push(o),
                    Err(e) if e.is_scorer_failure() => {
                        failure = Some(e);
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    if let Some(e) = &failure {
        log::error!("scorer failed after {} of {} samples: {e}", outcomes.len(), indices.len());
    }

    let (summary, per_sample) = aggregate(&outcomes, |o| Some(&o.method), &expectancy, &cfg.quantiles);
    let random_baseline = cfg
        .random_baseline
        .then(|| aggregate(&outcomes, |o| o.random.as_ref(), &expectancy, &cfg.quantiles).0);
    let information_ratio = information_ratio(per_sample.iter().map(|c| c.as_slice())).ok();
    let hmis: Vec<f64> = outcomes.iter().filter_map(|o| o.hmi).collect();
    let hmi = (!hmis.is_empty()).then(|| hmis.iter().sum::<f64>() / hmis.len() as f64);
    let n_correct = outcomes.iter().filter(|o| o.predicted == o.label).count();
    let n_selected = outcomes.iter().filter(|o| o.selected).count();
    let skipped: Vec<Skip> = outcomes
        .iter()
        .filter(|o| o.selected)
        .filter_map(|o| o.skip.map(|reason| Skip { index: o.index, reason }))
        .collect();
    let n_evaluated = per_sample.len();
    let counts = Counts {
        n_samples: indices.len(),
        n_scored: outcomes.len(),
        n_correct,
        n_selected,
        n_evaluated,
        n_hmi: hmis.len(),
    };
    Ok(MethodReport {
        method: container.manifest.method.clone(),
        scorer_id: scorer.id(),
        occlusion: cfg.occlusion,
        sample_policy: cfg.sample_policy,
        target_policy: container.manifest.target_policy,
        expectancy,
        quantiles: cfg.quantiles.clone(),
        seed: cfg.seed,
        summary,
        information_ratio,
        hmi,
        base_accuracy: if outcomes.is_empty() { 0.0 } else { n_correct as f64 / outcomes.len() as f64 },
        random_baseline,
        counts,
        skipped,
        insufficient_samples: n_evaluated < cfg.min_samples,
        partial: failure.is_some(),
        failure: failure.map(|e| e.to_string()),
    })
}
