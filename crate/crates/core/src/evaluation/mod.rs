//! Occlusion-based faithfulness metrics for relevance maps.
//!
//! For each quantile `q` the elements whose positive relevance lies at or
//! above the `q`-quantile are occluded and the sample is rescored. The drop
//! of the target logit towards its expectancy, plotted against the fraction
//! of occluded elements, gives a curve whose area ranks attribution methods.

mod evaluate;
mod metrics;
mod occlusion;
mod ranking;

pub use evaluate::{
    evaluate_method, evaluate_sample, AccuracyPoint, Counts, CurveSummary, EvalConfig, MethodReport, SampleCurve,
    SamplePoint, SamplePolicy, Skip, SkipReason,
};
pub use metrics::{
    auc_se, hmi, information_ratio, interpolated_quantile, positive_set, positive_threshold, s_e, tic, tic_for_mask,
    CurvePoint, QuantileSet, DEGENERATE_REFERENCE, EPSILON, MIN_TIC_STEP,
};
pub use occlusion::{occlude, random_mask_like, Fill, OcclusionMethod};
pub use ranking::{rank_methods, RankingRow};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{attribute_dataset, AttributionConfig, Method};
    use crate::dataset::{Dataset, DatasetMeta};
    use crate::error::{Error, Result};
    use crate::models::{BuiltinModel, Scorer};
    use crate::rng::{substream, Purpose};
    use crate::store::{to_canonical_json, ContainerKind, RelevanceContainer, RelevanceManifest, TargetPolicy, FORMAT_VERSION};
    use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};
    use rand::Rng;
    use std::sync::atomic::{AtomicUsize, Ordering};

    const SHAPE: (usize, usize) = (2, 8);

    fn toy_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = substream(seed, Purpose::Baseline, &[1]);
        let values = Array3::from_shape_fn((n, SHAPE.0, SHAPE.1), |_| rng.gen_range(-1.0f32..1.0));
        let labels = (0..n).map(|i| (i % 2) as u8).collect();
        let meta = DatasetMeta {
            class_names: vec!["a".into(), "b".into()],
            variant: None,
            generation: None,
            seed: None,
            assumed_settings: vec![],
            split: None,
        };
        Dataset::new(values, labels, Some(Array3::ones((n, SHAPE.0, SHAPE.1))), meta).unwrap()
    }

    /// Linear model that labels samples by the sign of `sum(w x)`, with
    /// dataset labels overwritten to match its predictions.
    fn fitted_linear(ds: &mut Dataset) -> BuiltinModel {
        let d = SHAPE.0 * SHAPE.1;
        let w0 = Array1::from_shape_fn(d, |i| (i as f64 * 0.7).sin());
        let mut w = Array2::zeros((2, d));
        w.row_mut(1).assign(&w0);
        w.row_mut(0).assign(&(-&w0));
        let model = BuiltinModel::linear(w, Array1::zeros(2), SHAPE);
        let logits = crate::models::score_indices(&model, ds, &(0..ds.len()).collect::<Vec<_>>(), 64).unwrap();
        for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
            ds.labels[i] = crate::models::argmax(row) as u8;
        }
        model
    }

    fn container(scorer: &dyn Scorer, ds: &Dataset, method: Method) -> RelevanceContainer {
        let cfg = AttributionConfig {
            n_permutations: 4,
            ..AttributionConfig::for_method(method)
        };
        let idx: Vec<usize> = (0..ds.len()).collect();
        attribute_dataset(scorer, ds, &idx, TargetPolicy::TrueClass, &cfg).unwrap()
    }

    #[test]
    fn faithful_relevance_beats_random() {
        let mut ds = toy_dataset(40, 1);
        let model = fitted_linear(&mut ds);
        for fill in [Fill::NormalSample, Fill::Permute] {
            let cfg = EvalConfig {
                occlusion: fill,
                random_baseline: true,
                ..Default::default()
            };
            let shap = evaluate_method(&model, &ds, &container(&model, &ds, Method::ShapleySampling), &cfg).unwrap();
            let random = evaluate_method(&model, &ds, &container(&model, &ds, Method::Random), &cfg).unwrap();
            assert_eq!(shap.counts.n_evaluated, 40);
            assert_eq!(shap.base_accuracy, 1.0);
            assert!(shap.auc_se() > random.auc_se() + 0.1, "{fill}: {} vs {}", shap.auc_se(), random.auc_se());
            let rb = shap.random_baseline.as_ref().unwrap();
            assert!(shap.auc_se() > rb.auc_se);
            // matched cardinality
            for (a, b) in shap.summary.curve.iter().zip(&rb.curve) {
                assert!((a.n_r - b.n_r).abs() < 1e-12);
            }
            assert!(!shap.insufficient_samples && !shap.partial);
            assert_eq!(shap.hmi.map(|h| h > 0.0), Some(true));
        }
    }

    #[test]
    fn curves_are_monotone_in_q() {
        let mut ds = toy_dataset(20, 2);
        let model = fitted_linear(&mut ds);
        let report = evaluate_method(&model, &ds, &container(&model, &ds, Method::IntegratedGradients), &EvalConfig::default()).unwrap();
        assert_eq!(report.summary.curve.len(), 10);
        for pair in report.summary.curve.windows(2) {
            assert!(pair[1].n_r <= pair[0].n_r);
            assert!(pair[1].tic <= pair[0].tic + 1e-15);
        }
        for pair in report.summary.accuracy_curve.windows(2) {
            assert!(pair[1].n_r <= pair[0].n_r);
        }
    }

    #[test]
    fn constant_scorer_scores_zero() {
        let ds = toy_dataset(12, 3);
        let scorer = crate::attribution::test_scorers::constant(2, SHAPE);
        let cfg = EvalConfig {
            sample_policy: SamplePolicy::All,
            ..Default::default()
        };
        for method in [Method::Random, Method::ShapleySampling] {
            let report = evaluate_method(&scorer, &ds, &container(&scorer, &ds, method), &cfg).unwrap();
            assert_eq!(report.auc_se(), 0.0);
            assert_eq!(report.counts.n_evaluated, 0);
            assert!(report.insufficient_samples);
        }
    }

    #[test]
    fn identical_inputs_give_identical_reports() {
        let mut ds = toy_dataset(16, 4);
        let model = fitted_linear(&mut ds);
        let c = container(&model, &ds, Method::KernelShap);
        let cfg = EvalConfig {
            random_baseline: true,
            seed: 11,
            ..Default::default()
        };
        let a = to_canonical_json(&evaluate_method(&model, &ds, &c, &cfg).unwrap()).unwrap();
        let b = to_canonical_json(&evaluate_method(&model, &ds, &c.clone(), &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let back: MethodReport = serde_json::from_str(&a).unwrap();
        assert_eq!(to_canonical_json(&back).unwrap(), a);
    }

    #[test]
    fn uniform_relevance_occludes_everything_at_every_quantile() {
        let ds = toy_dataset(1, 5);
        let x = ds.sample(0);
        let scorer = crate::attribution::test_scorers::constant(2, SHAPE);
        let rel = Array2::from_elem(SHAPE, 0.3);
        let q = QuantileSet::default();
        let curve = evaluate_sample(&scorer, x.view(), 0, rel.view(), &q, OcclusionMethod::NormalSample, -1.0, 0, 0).unwrap();
        assert_eq!(curve.points.len(), 10);
        for p in &curve.points {
            assert_eq!(p.n_occluded, 16);
            assert_eq!(p.n_r, 1.0);
            assert!((p.tic - 1.0).abs() < 1e-7);
            // scorer ignores its input
            assert_eq!(p.s_e, 0.0);
        }
        assert_eq!(auc_se(&curve.curve()), 0.0);
    }

    #[test]
    fn sample_without_positive_relevance_is_rejected() {
        let ds = toy_dataset(1, 6);
        let scorer = crate::attribution::test_scorers::constant(2, SHAPE);
        let rel = Array2::from_elem(SHAPE, -0.3);
        let q = QuantileSet::default();
        let err = evaluate_sample(&scorer, ds.sample(0).view(), 0, rel.view(), &q, OcclusionMethod::Permute, 1.0, 0, 0).unwrap_err();
        assert!(matches!(err, Error::NoPositiveRelevance));
    }

    #[test]
    fn samples_without_positive_relevance_are_audited() {
        let mut ds = toy_dataset(10, 7);
        let model = fitted_linear(&mut ds);
        let mut c = container(&model, &ds, Method::Random);
        c.relevance.index_axis_mut(Axis(0), 3).fill(0.0);
        let report = evaluate_method(&model, &ds, &c, &EvalConfig::default()).unwrap();
        assert_eq!(report.counts.n_evaluated, 9);
        assert_eq!(report.skipped, vec![Skip { index: 3, reason: SkipReason::NoPositiveRelevance }]);
    }

    /// Delegates to a model until `budget` batches have been scored.
    struct Flaky {
        inner: BuiltinModel,
        budget: usize,
        calls: AtomicUsize,
    }

    impl Scorer for Flaky {
        fn n_classes(&self) -> usize {
            self.inner.n_classes()
        }
        fn input_shape(&self) -> (usize, usize) {
            self.inner.input_shape()
        }
        fn id(&self) -> String {
            "flaky".into()
        }
        fn max_concurrency(&self) -> Option<usize> {
            Some(1)
        }
        fn score(&self, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
            if self.calls.fetch_add(1, Ordering::SeqCst) >= self.budget {
                return Err(Error::ExternalScorerFailure("connection closed".into()));
            }
            self.inner.score(inputs)
        }
    }

    #[test]
    fn scorer_failure_yields_partial_report() {
        let mut ds = toy_dataset(10, 8);
        let model = fitted_linear(&mut ds);
        let c = container(&model, &ds, Method::Random);
        // one call for the unoccluded batch, then one per sample
        let flaky = Flaky {
            inner: model,
            budget: 5,
            calls: AtomicUsize::new(0),
        };
        let report = evaluate_method(&flaky, &ds, &c, &EvalConfig::default()).unwrap();
        assert!(report.partial);
        assert_eq!(report.counts.n_scored, 4);
        assert!(report.failure.unwrap().contains("connection closed"));
    }

    #[test]
    fn mismatched_container_is_rejected() {
        let mut ds = toy_dataset(6, 9);
        let model = fitted_linear(&mut ds);
        let c = RelevanceContainer {
            manifest: RelevanceManifest {
                format_version: FORMAT_VERSION,
                kind: ContainerKind::Relevance,
                method: "random".into(),
                scorer_id: model.id(),
                target_policy: TargetPolicy::TrueClass,
                seed: 0,
                params: serde_json::Value::Null,
                dataset_n: 6,
                m: 3,
                t: 8,
                indices: vec![0],
                targets: vec![0],
            },
            relevance: Array3::ones((1, 3, 8)),
        };
        assert!(matches!(evaluate_method(&model, &ds, &c, &EvalConfig::default()), Err(Error::ShapeMismatch { .. })));
    }
}
