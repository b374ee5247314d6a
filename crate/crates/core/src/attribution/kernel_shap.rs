use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::distributions::WeightedIndex;
use rand::seq::index::sample as sample_indices;
use rand::Rng;

use super::players::Players;
use super::{AttributionConfig, RelevanceMap};
use crate::error::{Error, Result};
use crate::models::{score_batch, Scorer};
use crate::rng::StreamRng;

/// Regression weight standing in for the infinite kernel weight of the
/// empty and full coalitions.
pub const ENDPOINT_WEIGHT: f64 = 1e6;

const CHUNK: usize = 256;

/// Shapley kernel `(d - 1) / (C(d, k) k (d - k))` for `0 < k < d`.
pub fn shapley_kernel_weight(d: usize, k: usize) -> f64 {
    assert!(k > 0 && k < d, "kernel weight is defined for 0 < k < d");
    let ln_binom: f64 = (1..=k).map(|i| ((d - k + i) as f64 / i as f64).ln()).sum();
    (d as f64 - 1.0) / (k as f64 * (d - k) as f64) * (-ln_binom).exp()
}

/// Coalition masks (row per coalition) with their regression weights.
struct Design {
    z: Array2<f64>,
    w: Vec<f64>,
}

fn enumerate_all(d: usize) -> Design {
    let n = 1usize << d;
    let mut z = Array2::zeros((n, d));
    let mut w = Vec::with_capacity(n);
    for mask in 0..n {
        let k = mask.count_ones() as usize;
        for i in 0..d {
            if mask >> i & 1 == 1 {
                z[[mask, i]] = 1.0;
            }
        }
        w.push(if k == 0 || k == d { ENDPOINT_WEIGHT } else { shapley_kernel_weight(d, k) });
    }
    Design { z, w }
}

/// Empty and full coalitions plus `n - 2` sampled ones, drawn in
/// complementary pairs with sizes following the kernel's size marginal.
fn sample_design(d: usize, n: usize, rng: &mut StreamRng) -> Design {
    let sizes: Vec<usize> = (1..d).collect();
    let mass: Vec<f64> = sizes.iter().map(|&k| 1.0 / (k as f64 * (d - k) as f64)).collect();
    let total_mass = (d as f64 - 1.0) * mass.iter().sum::<f64>();
    let pick = WeightedIndex::new(&mass).expect("positive size weights");
    let n_sampled = n.saturating_sub(2);
    let mut z = Array2::zeros((n_sampled + 2, d));
    z.row_mut(1).fill(1.0);
    let mut row = 2;
    while row < n_sampled + 2 {
        let k = sizes[rng.sample(&pick)];
        let members = sample_indices(rng, d, k);
        for i in members.iter() {
            z[[row, i]] = 1.0;
        }
        row += 1;
        if row < n_sampled + 2 {
            z.row_mut(row).fill(1.0);
            for i in members.iter() {
                z[[row, i]] = 0.0;
            }
            row += 1;
        }
    }
    let mut w = vec![ENDPOINT_WEIGHT, ENDPOINT_WEIGHT];
    w.extend(std::iter::repeat(total_mass / n_sampled.max(1) as f64).take(n_sampled));
    Design { z, w }
}

fn coalition_scores(
    scorer: &dyn Scorer,
    players: &Players,
    x: ArrayView2<'_, f64>,
    baseline: ArrayView2<'_, f64>,
    class: usize,
    z: &Array2<f64>,
) -> Result<Vec<f64>> {
    let (m, t) = x.dim();
    let mut ys = Vec::with_capacity(z.nrows());
    for start in (0..z.nrows()).step_by(CHUNK) {
        let end = (start + CHUNK).min(z.nrows());
        let mut batch = Array3::<f64>::zeros((end - start, m, t));
        for (r, mut sample) in batch.axis_iter_mut(Axis(0)).enumerate() {
            sample.assign(&baseline);
            for (p, &on) in z.row(start + r).iter().enumerate() {
                if on == 1.0 {
                    players.switch_on(p, x, sample.view_mut());
                }
            }
        }
        let out = score_batch(scorer, batch.view())?;
        ys.extend(out.column(class).iter().copied());
    }
    Ok(ys)
}

/// Weighted least squares for `y ~ phi_0 + z . phi`; returns `phi`.
fn solve(design: &Design, y: &[f64]) -> Result<Vec<f64>> {
    let (n, d) = design.z.dim();
    let mut a = Array2::<f64>::zeros((n, d + 1));
    let mut rhs = vec![0.0; n];
    for r in 0..n {
        let s = design.w[r].sqrt();
        a[[r, 0]] = s;
        for c in 0..d {
            a[[r, c + 1]] = s * design.z[[r, c]];
        }
        rhs[r] = s * y[r];
    }
    let gram = a.t().dot(&a);
    let aty = a.t().dot(&ndarray::Array1::from(rhs));
    let g = DMatrix::from_fn(d + 1, d + 1, |i, j| gram[[i, j]]);
    let b = DVector::from_iterator(d + 1, aty.iter().copied());
    let beta = match g.clone().cholesky() {
        Some(chol) if well_conditioned(chol.l_dirty().diagonal().iter().map(|v| v * v)) => chol.solve(&b),
        _ => {
            let lu = g.clone().lu();
            if !well_conditioned(lu.u().diagonal().iter().map(|v| v.abs())) {
                return Err(Error::SingularRegression);
            }
            lu.solve(&b).ok_or(Error::SingularRegression)?
        }
    };
    let residual = (&g * &beta - &b).norm();
    if !beta.iter().all(|v| v.is_finite()) || residual > 1e-6 * b.norm().max(1.0) {
        return Err(Error::SingularRegression);
    }
    Ok(beta.iter().skip(1).copied().collect())
}

fn well_conditioned(pivots: impl Iterator<Item = f64>) -> bool {
    let (lo, hi) = pivots.fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p), hi.max(p)));
    hi > 0.0 && lo / hi > 1e-14
}

/// KernelSHAP: fit the Shapley kernel-weighted linear surrogate over
/// coalitions. All `2^d` coalitions are used when they fit within
/// `n_coalitions`; otherwise coalitions are sampled.
pub fn kernel_shap(
    scorer: &dyn Scorer,
    x: ArrayView2<'_, f64>,
    baseline: ArrayView2<'_, f64>,
    class: usize,
    cfg: &AttributionConfig,
    rng: &mut StreamRng,
) -> Result<RelevanceMap> {
    let players = Players::new(cfg.granularity, x.dim());
    let d = players.len();
    if d == 1 {
        let both = ndarray::stack(Axis(0), &[baseline.view(), x.view()]).expect("same shape");
        let s = score_batch(scorer, both.view())?;
        return Ok(players.spread(&[s[[1, class]] - s[[0, class]]]));
    }
    let exhaustive = d < usize::BITS as usize - 1 && (1usize << d) <= cfg.n_coalitions;
    let attempts = if exhaustive { 1 } else { 2 };
    let mut last = Error::SingularRegression;
    for _ in 0..attempts {
        let design = if exhaustive {
            enumerate_all(d)
        } else {
            sample_design(d, cfg.n_coalitions.max(4), rng)
        };
        let y = coalition_scores(scorer, &players, x, baseline, class, &design.z)?;
        match solve(&design, &y) {
            Ok(phi) => return Ok(players.spread(&phi)),
            Err(e @ Error::SingularRegression) => {
                log::warn!("KernelSHAP regression singular with {} coalitions, resampling", design.w.len());
                last = e;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

#[cfg(test)]
mod tests {
    use super::super::test_scorers::{weights, Additive};
    use super::*;
    use crate::rng::{substream, Purpose};

    fn binom(n: usize, k: usize) -> f64 {
        (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64)
    }

    #[test]
    fn kernel_weight_closed_form() {
        for d in 2..12 {
            for k in 1..d {
                let expected = (d - 1) as f64 / (binom(d, k) * (k * (d - k)) as f64);
                assert!((shapley_kernel_weight(d, k) - expected).abs() < 1e-12 * expected);
            }
        }
        // symmetric in k and d - k
        let (a, b) = (shapley_kernel_weight(750, 3), shapley_kernel_weight(750, 747));
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn exhaustive_design_has_every_mask() {
        let design = enumerate_all(4);
        assert_eq!(design.z.nrows(), 16);
        assert_eq!(design.w[0], ENDPOINT_WEIGHT);
        assert_eq!(design.w[15], ENDPOINT_WEIGHT);
        assert_eq!(design.z.row(5).to_vec(), vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn sampled_design_pairs_complements() {
        let mut rng = substream(0, Purpose::Attribution, &[0]);
        let design = sample_design(30, 64, &mut rng);
        assert_eq!(design.z.nrows(), 64);
        assert_eq!(design.z.row(0).sum(), 0.0);
        assert_eq!(design.z.row(1).sum(), 30.0);
        for r in (2..64).step_by(2) {
            let s = &design.z.row(r) + &design.z.row(r + 1);
            assert!(s.iter().all(|&v| v == 1.0));
            let k = design.z.row(r).sum();
            assert!((1.0..30.0).contains(&k));
        }
    }

    #[test]
    fn additive_game_recovered_by_sampling() {
        let shape = (2, 10);
        let w = weights(20);
        let scorer = Additive {
            w: w.clone().into_shape_with_order((1, 20)).unwrap(),
            shape,
            interactions: vec![],
        };
        let x = Array2::from_shape_fn(shape, |(m, t)| (m as f64 - 0.5) * (t as f64 * 0.3).sin());
        let base = Array2::zeros(shape);
        let cfg = AttributionConfig {
            n_coalitions: 200,
            ..Default::default()
        };
        let mut rng = substream(4, Purpose::Attribution, &[0]);
        let phi = kernel_shap(&scorer, x.view(), base.view(), 0, &cfg, &mut rng).unwrap();
        for i in 0..20 {
            let (r, c) = (i / 10, i % 10);
            assert!((phi[[r, c]] - w[i] * x[[r, c]]).abs() < 1e-6, "{i}");
        }
    }

    #[test]
    fn too_few_coalitions_is_singular() {
        let shape = (1, 40);
        let scorer = Additive {
            w: weights(40).into_shape_with_order((1, 40)).unwrap(),
            shape,
            interactions: vec![],
        };
        let x = Array2::from_elem(shape, 1.0);
        let base = Array2::zeros(shape);
        let cfg = AttributionConfig {
            n_coalitions: 10,
            ..Default::default()
        };
        let mut rng = substream(5, Purpose::Attribution, &[0]);
        let err = kernel_shap(&scorer, x.view(), base.view(), 0, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::SingularRegression));
    }

    #[test]
    fn single_player_is_the_score_difference() {
        let shape = (1, 1);
        let scorer = Additive {
            w: Array2::from_elem((2, 1), 3.0),
            shape,
            interactions: vec![],
        };
        let x = Array2::from_elem(shape, 2.0);
        let base = Array2::from_elem(shape, 0.5);
        let mut rng = substream(6, Purpose::Attribution, &[0]);
        let phi = kernel_shap(&scorer, x.view(), base.view(), 1, &AttributionConfig::default(), &mut rng).unwrap();
        assert!((phi[[0, 0]] - 4.5).abs() < 1e-12);
    }
}
