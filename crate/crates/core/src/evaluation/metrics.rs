use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guards the TIC and HMI denominators.
pub const EPSILON: f64 = 1e-8;

/// `|S(X) - E|` below this makes the normalised drop meaningless.
pub const DEGENERATE_REFERENCE: f64 = 1e-9;

/// ΔTIC below this is skipped when estimating the information ratio.
pub const MIN_TIC_STEP: f64 = 1e-6;

/// Strictly increasing quantile levels in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileSet(Vec<f64>);

impl QuantileSet {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::config("quantiles", "at least one level is required"));
        }
        if levels.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return Err(Error::config("quantiles", "levels must lie in (0, 1)"));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("quantiles", "levels must be strictly increasing"));
        }
        Ok(QuantileSet(levels))
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for QuantileSet {
    /// `0.05, 0.15, ..., 0.95`.
    fn default() -> Self {
        QuantileSet((0..10).map(|k| (5 + 10 * k) as f64 / 100.0).collect())
    }
}

impl TryFrom<Vec<f64>> for QuantileSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        QuantileSet::new(v)
    }
}

impl From<QuantileSet> for Vec<f64> {
    fn from(q: QuantileSet) -> Self {
        q.0
    }
}

/// Linear-interpolation quantile of a sorted slice (position `(n - 1) q`).
pub fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// The `q`-quantile of the strictly positive relevance values, `None` if
/// there are none.
pub fn positive_threshold(relevance: ArrayView2<'_, f64>, q: f64) -> Option<f64> {
    let mut pos: Vec<f64> = relevance.iter().copied().filter(|&r| r > 0.0).collect();
    if pos.is_empty() {
        return None;
    }
    pos.sort_by(f64::total_cmp);
    Some(interpolated_quantile(&pos, q))
}

/// `I+_q`: elements with positive relevance at or above the positive
/// `q`-quantile. Empty when nothing is positive.
pub fn positive_set(relevance: ArrayView2<'_, f64>, q: f64) -> Array2<bool> {
    match positive_threshold(relevance, q) {
        Some(thr) => relevance.mapv(|r| r > 0.0 && r >= thr),
        None => Array2::from_elem(relevance.raw_dim(), false),
    }
}

/// Share of the positive relevance captured by `mask`.
pub fn tic_for_mask(relevance: ArrayView2<'_, f64>, mask: ArrayView2<'_, bool>) -> f64 {
    let mut inside = 0.0;
    let mut total = 0.0;
    Zip::from(relevance).and(mask).for_each(|&r, &m| {
        if r > 0.0 {
            total += r;
            if m {
                inside += r;
            }
        }
    });
    inside / (total + EPSILON)
}

/// Time information content at quantile `q`.
pub fn tic(relevance: ArrayView2<'_, f64>, q: f64) -> f64 {
    tic_for_mask(relevance, positive_set(relevance, q).view())
}

/// Normalised score drop `1 - (S_occl - E) / (S_orig - E)`.
pub fn s_e(s_orig: f64, s_occl: f64, expectancy: f64) -> Result<f64> {
    let reference = s_orig - expectancy;
    if reference.abs() <= DEGENERATE_REFERENCE {
        return Err(Error::DegenerateReference {
            score: s_orig,
            expectancy,
        });
    }
    Ok(1.0 - (s_occl - expectancy) / reference)
}

/// One point of a faithfulness curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub q: f64,
    pub n_r: f64,
    pub tic: f64,
    pub s_e: f64,
}

/// Area under `S_E(N_r)`, extended through the origin and to `N_r = 1`
/// with the value measured at the smallest quantile.
pub fn auc_se(points: &[CurvePoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut sorted: Vec<&CurvePoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.n_r.total_cmp(&b.n_r).then(b.q.total_cmp(&a.q)));
    let at_qmin = points.iter().min_by(|a, b| a.q.total_cmp(&b.q)).expect("non-empty").s_e;
    let xy = std::iter::once((0.0, 0.0))
        .chain(sorted.iter().map(|p| (p.n_r, p.s_e)))
        .chain(std::iter::once((1.0, at_qmin)));
    trapezoid(xy)
}

fn trapezoid(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut area = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (x, y) in points {
        if let Some((px, py)) = prev {
            area += (x - px) * (y + py) / 2.0;
        }
        prev = Some((x, y));
    }
    area
}

/// Mean slope `ΔS_E / ΔTIC` over adjacent quantile pairs of every curve.
/// Each curve must be ordered by quantile.
pub fn information_ratio<'a>(curves: impl IntoIterator<Item = &'a [CurvePoint]>) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for curve in curves {
        for pair in curve.windows(2) {
            let dtic = pair[1].tic - pair[0].tic;
            if dtic.abs() < MIN_TIC_STEP {
                continue;
            }
            sum += (pair[1].s_e - pair[0].s_e) / dtic;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoValidPairs);
    }
    Ok(sum / count as f64)
}

/// Human-machine agreement between positive relevance and binary expert
/// weights, penalised by the size mismatch of the two sets.
pub fn hmi(relevance: ArrayView2<'_, f64>, expert_weights: ArrayView2<'_, u8>) -> Result<f64> {
    if relevance.dim() != expert_weights.dim() {
        return Err(Error::shape(
            "expert weights",
            format!("{:?}", relevance.dim()),
            format!("{:?}", expert_weights.dim()),
        ));
    }
    let mut weighted = 0.0;
    let mut total = 0.0;
    let mut n_pos = 0usize;
    let mut n_expert = 0usize;
    Zip::from(relevance).and(expert_weights).for_each(|&r, &w| {
        if w != 0 {
            n_expert += 1;
        }
        if r > 0.0 {
            n_pos += 1;
            total += r;
            if w != 0 {
                weighted += r;
            }
        }
    });
    if n_pos == 0 {
        return Err(Error::NoPositiveRelevance);
    }
    let raw = weighted / (total + EPSILON);
    let gamma = (n_pos.abs_diff(n_expert) as f64 / n_pos as f64).min(1.0);
    Ok(raw * (1.0 - gamma))
}
