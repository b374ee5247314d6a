use std::io::BufReader;
use std::net::TcpListener;
use std::time::Duration;

use ndarray::{Array3, Axis};
use rand::Rng;

use itb_core::attribution::{attribute_dataset, AttributionConfig, Method};
use itb_core::evaluation::{evaluate_method, EvalConfig, SamplePolicy};
use itb_core::models::external::{serve, ChannelMeanScorer};
use itb_core::models::{score_batch, Endpoint, ExternalScorer, Scorer};
use itb_core::rng::{substream, Purpose};
use itb_core::store::TargetPolicy;
use itb_core::{Dataset, DatasetMeta, Error};

const ECHO: &str = env!("CARGO_BIN_EXE_itb-echo-scorer");
const SHAPE: (usize, usize) = (3, 40);

fn echo(k: usize, max_requests: Option<usize>) -> Endpoint {
    let mut args = vec![k.to_string(), SHAPE.0.to_string(), SHAPE.1.to_string()];
    args.extend(max_requests.map(|n| n.to_string()));
    Endpoint::Command {
        program: ECHO.into(),
        args,
    }
}

fn connect(endpoint: Endpoint, expected: Option<(usize, usize, usize)>) -> itb_core::Result<ExternalScorer> {
    ExternalScorer::connect(endpoint, expected, Duration::from_secs(20))
}

/// Three classes; class `c` lifts channel `c`, so the channel-mean scorer
/// classifies every sample correctly.
fn lifted_dataset(n_per_class: usize) -> Dataset {
    let mut rng = substream(1, Purpose::InitialCondition, &[0]);
    let n = 3 * n_per_class;
    let mut values = Array3::<f32>::zeros((n, SHAPE.0, SHAPE.1));
    let mut labels = Vec::new();
    for (i, mut x) in values.axis_iter_mut(Axis(0)).enumerate() {
        let c = i % 3;
        x.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        x.index_axis_mut(Axis(0), c).mapv_inplace(|v| v + 1.0);
        labels.push(c as u8);
    }
    let meta = DatasetMeta {
        class_names: vec!["a".into(), "b".into(), "c".into()],
        variant: None,
        generation: None,
        seed: None,
        assumed_settings: vec![],
        split: None,
    };
    Dataset::new(values, labels, None, meta).unwrap()
}

#[test]
fn echo_round_trip_matches_the_in_process_scorer() {
    let remote = connect(echo(5, None), Some((5, SHAPE.0, SHAPE.1))).unwrap();
    assert_eq!(remote.n_classes(), 5);
    assert_eq!(remote.input_shape(), SHAPE);
    let local = ChannelMeanScorer {
        n_classes: 5,
        shape: SHAPE,
    };
    let mut rng = substream(2, Purpose::InitialCondition, &[0]);
    let batch = Array3::from_shape_fn((7, SHAPE.0, SHAPE.1), |_| rng.gen_range(-3.0..3.0));
    let a = score_batch(&remote, batch.view()).unwrap();
    let b = score_batch(&local, batch.view()).unwrap();
    assert_eq!(a.dim(), (7, 5));
    assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= 1e-6));
    // the connection stays usable across requests
    let again = score_batch(&remote, batch.view()).unwrap();
    assert_eq!(a, again);
}

#[test]
fn class_count_mismatch_fails_the_handshake() {
    let err = connect(echo(4, None), Some((5, SHAPE.0, SHAPE.1))).err().unwrap();
    assert!(matches!(err, Error::HandshakeFailed(_)), "{err}");
}

#[test]
fn missing_program_fails_the_handshake() {
    let endpoint = Endpoint::Command {
        program: "/nonexistent/itb-scorer".into(),
        args: vec![],
    };
    assert!(matches!(connect(endpoint, None), Err(Error::HandshakeFailed(_))));
}

#[test]
fn tcp_endpoint_serves_the_same_logits() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let scorer = ChannelMeanScorer {
            n_classes: 3,
            shape: SHAPE,
        };
        let _ = serve(&scorer, BufReader::new(stream.try_clone().unwrap()), stream);
    });
    let remote = connect(format!("tcp:{addr}").parse().unwrap(), Some((3, SHAPE.0, SHAPE.1))).unwrap();
    let x = Array3::from_elem((1, SHAPE.0, SHAPE.1), 0.25);
    let logits = score_batch(&remote, x.view()).unwrap();
    assert!(logits.iter().all(|&v| (v - 0.25).abs() < 1e-12));
}

#[test]
fn gradient_methods_need_a_fallback() {
    let ds = lifted_dataset(2);
    let remote = connect(echo(3, None), None).unwrap();
    let cfg = AttributionConfig::for_method(Method::Saliency);
    let err = attribute_dataset(&remote, &ds, &[0, 1], TargetPolicy::TrueClass, &cfg).unwrap_err();
    assert!(matches!(err, Error::MethodUnsupportedForScorer { .. }));
    let cfg = AttributionConfig {
        finite_difference: true,
        ..cfg
    };
    let rel = attribute_dataset(&remote, &ds, &[0, 1], TargetPolicy::TrueClass, &cfg).unwrap();
    // d mean(channel c) / d x = 1/T on channel c, zero elsewhere
    let map = rel.relevance.index_axis(Axis(0), 1);
    let t = SHAPE.1 as f32;
    assert!(map.row(1).iter().all(|&v| (v - 1.0 / t).abs() < 1e-6));
    assert!(map.row(0).iter().all(|&v| v.abs() < 1e-6));
}

#[test]
fn scorer_death_yields_a_partial_report() {
    let ds = lifted_dataset(8);
    let indices: Vec<usize> = (0..ds.len()).collect();
    let local = ChannelMeanScorer {
        n_classes: 3,
        shape: SHAPE,
    };
    let cfg = AttributionConfig::for_method(Method::Random);
    let container = attribute_dataset(&local, &ds, &indices, TargetPolicy::TrueClass, &cfg).unwrap();

    let eval = EvalConfig {
        sample_policy: SamplePolicy::All,
        ..Default::default()
    };
    let full = evaluate_method(&local, &ds, &container, &eval).unwrap();
    assert!(!full.partial);
    assert_eq!(full.counts.n_evaluated, ds.len());

    // one request scores the split, then each sample issues one per quantile
    let remote = connect(echo(3, Some(4)), None).unwrap();
    let report = evaluate_method(&remote, &ds, &container, &eval).unwrap();
    assert!(report.partial);
    assert!(report.failure.as_deref().unwrap().contains("closed"));
    assert!(report.counts.n_evaluated < ds.len());
    assert!(report.counts.n_evaluated >= 1);
}
