use ndarray::{Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;

use super::players::Players;
use super::{AttributionConfig, RelevanceMap};
use crate::error::Result;
use crate::models::{score_batch, Scorer};
use crate::rng::StreamRng;

/// Rows scored per call while walking a permutation.
const CHUNK: usize = 256;

#[derive(Debug, Clone)]
pub struct ShapleyEstimate {
    pub values: RelevanceMap,
    /// Monte Carlo standard error of each value; infinite with one permutation.
    pub std_error: RelevanceMap,
}

/// Shapley value sampling: average marginal contributions along random
/// permutations, switching players from `baseline` to `x` one at a time.
pub fn shapley_sampling(
    scorer: &dyn Scorer,
    x: ArrayView2<'_, f64>,
    baseline: ArrayView2<'_, f64>,
    class: usize,
    cfg: &AttributionConfig,
    rng: &mut StreamRng,
) -> Result<RelevanceMap> {
    Ok(shapley_sampling_with_stderr(scorer, x, baseline, class, cfg, rng)?.values)
}

pub fn shapley_sampling_with_stderr(
    scorer: &dyn Scorer,
    x: ArrayView2<'_, f64>,
    baseline: ArrayView2<'_, f64>,
    class: usize,
    cfg: &AttributionConfig,
    rng: &mut StreamRng,
) -> Result<ShapleyEstimate> {
    let players = Players::new(cfg.granularity, x.dim());
    let d = players.len();
    let (m, t) = x.dim();
    let mut order: Vec<usize> = (0..d).collect();
    // Welford accumulators per player
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    let mut path = Array3::<f64>::zeros((d + 1, m, t));
    let mut scores = Vec::with_capacity(d + 1);
    for n in 1..=cfg.n_permutations {
        order.shuffle(rng);
        path.index_axis_mut(Axis(0), 0).assign(&baseline);
        for (j, &p) in order.iter().enumerate() {
            let (prev, mut next) = path.multi_slice_mut((ndarray::s![j, .., ..], ndarray::s![j + 1, .., ..]));
            next.assign(&prev);
            players.switch_on(p, x, next);
        }
        scores.clear();
        for start in (0..=d).step_by(CHUNK) {
            let end = (start + CHUNK).min(d + 1);
            let out = score_batch(scorer, path.slice(ndarray::s![start..end, .., ..]))?;
            scores.extend(out.column(class).iter().copied());
        }
        for (j, &p) in order.iter().enumerate() {
            let contribution = scores[j + 1] - scores[j];
            let delta = contribution - mean[p];
            mean[p] += delta / n as f64;
            m2[p] += delta * (contribution - mean[p]);
        }
    }
    let n = cfg.n_permutations as f64;
    let se: Vec<f64> = m2
        .iter()
        .map(|&s| if n > 1.0 { (s / (n - 1.0) / n).sqrt() } else { f64::INFINITY })
        .collect();
    Ok(ShapleyEstimate {
        values: players.spread(&mean),
        std_error: players.spread(&se),
    })
}
