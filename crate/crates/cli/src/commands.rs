use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use itb_core::attractor::{generate_dataset, GenerationConfig, Variant};
use itb_core::attribution::{attribute_dataset, AttributionConfig, BaselinePolicy, Granularity, Method};
use itb_core::evaluation::{evaluate_method, EvalConfig, Fill, QuantileSet, SamplePolicy};
use itb_core::models::{accuracy, train, ExpectancyPolicy, EpochStats, ModelKind, Scorer, TrainConfig};
use itb_core::report::{read_report, write_report, write_report_json, DatasetReport, Report};
use itb_core::store::{
    read_dataset, read_json, read_relevance, split_dataset, write_dataset, write_json, write_relevance,
    RelevanceContainer, TargetPolicy, MANIFEST_FILE,
};
use itb_core::{Dataset, Error, Result, SplitName};

use crate::manifest::RunRecorder;
use crate::scorer::{self, MODEL_FILE};
use crate::{exit, AttributeArgs, AttributionArgs, Cli, Command, EvaluateArgs, GenArgs, ReportArgs, TrainArgs};

pub const METRICS_FILE: &str = "metrics.json";

/// Run the selected command; `Ok` carries the exit code.
pub fn run(cli: &Cli) -> Result<u8> {
    let file = match &cli.config {
        Some(path) => Some(read_json::<Value>(path)?),
        None => None,
    };
    let section = |name: &str| file.as_ref().and_then(|v| v.get(name)).cloned();
    match &cli.command {
        Command::Gen(a) => gen(cli.seed, a, section("gen"), section("split")),
        Command::Train(a) => train_cmd(cli.seed, a, section("train")),
        Command::Attribute(a) => attribute(cli.seed, a, section("attribute")),
        Command::Evaluate(a) => evaluate(cli.seed, a, section("evaluate")),
        Command::Report(a) => report(a, section("report")),
    }
}

/// Apply `section` on top of `base`, merging objects key by key.
pub fn overlay<T: Serialize + DeserializeOwned>(base: T, section: Option<Value>) -> Result<T> {
    let Some(section) = section else { return Ok(base) };
    let mut value = serde_json::to_value(&base).map_err(|e| Error::config("config", e.to_string()))?;
    merge(&mut value, section);
    serde_json::from_value(value).map_err(|e| Error::config("config", e.to_string()))
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, top) => *slot = top,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T> {
    s.parse()
}

fn gen(seed: u64, a: &GenArgs, section: Option<Value>, split_section: Option<Value>) -> Result<u8> {
    let base = GenerationConfig {
        n_per_class: a.n_per_class,
        variant: parse::<Variant>(&a.variant)?,
        seed,
        ..Default::default()
    };
    let config = overlay(base, section)?;
    let fractions: [f64; 3] = match a.split.as_slice() {
        [tr, va, te] => [*tr, *va, *te],
        _ => return Err(Error::config("split", "expected three fractions")),
    };
    let fractions = overlay(fractions, split_section)?;
    config.validate()?;

    #[derive(Serialize)]
    struct Settings<'a> {
        generation: &'a GenerationConfig,
        split: [f64; 3],
    }
    let mut rec = RunRecorder::start(
        "gen",
        &Settings {
            generation: &config,
            split: fractions,
        },
    )?;
    rec.seed("generation", config.seed);
    rec.seed("split", config.seed);

    let mut dataset = rec.time("generate", || generate_dataset(&config))?;
    let split = split_dataset(&dataset.labels, dataset.n_classes(), fractions, config.seed)?;
    dataset.meta.split = Some(split);
    create_dir(&a.out)?;
    rec.time("write", || write_dataset(&dataset, &a.out))?;
    rec.output(&a.out);
    rec.write(&a.out)?;
    log::info!("wrote {} samples to {}", dataset.len(), a.out.display());
    Ok(0)
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainMetrics {
    train_accuracy: f64,
    val_accuracy: f64,
    test_accuracy: f64,
    best_epoch: Option<usize>,
    stopped_early: bool,
    history: Vec<EpochStats>,
}

fn train_cmd(seed: u64, a: &TrainArgs, section: Option<Value>) -> Result<u8> {
    let base = TrainConfig {
        kind: parse::<ModelKind>(&a.kind)?,
        hidden: a.hidden,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        max_epochs: a.max_epochs,
        patience: a.patience,
        weight_decay: a.weight_decay,
        seed,
    };
    let config = overlay(base, section)?;
    let mut rec = RunRecorder::start("train", &config)?;
    rec.seed("training", config.seed);
    rec.input(&a.data);

    let dataset = read_dataset(&a.data)?;
    let train_idx = dataset.split_indices(SplitName::Train)?;
    let val_idx = dataset.split_indices(SplitName::Val)?;
    let test_idx = dataset.split_indices(SplitName::Test)?;
    let trained = rec.time("train", || train(&dataset, &train_idx, &val_idx, &config))?;
    let model = &trained.model;
    let metrics = TrainMetrics {
        train_accuracy: accuracy(model, &dataset, &train_idx)?,
        val_accuracy: accuracy(model, &dataset, &val_idx)?,
        test_accuracy: accuracy(model, &dataset, &test_idx)?,
        best_epoch: trained.best_epoch,
        stopped_early: trained.stopped_early,
        history: trained.history.clone(),
    };
    create_dir(&a.out)?;
    write_json(&a.out.join(MODEL_FILE), model)?;
    write_json(&a.out.join(METRICS_FILE), &metrics)?;
    rec.output(&a.out.join(MODEL_FILE));
    rec.output(&a.out.join(METRICS_FILE));
    rec.write(&a.out)?;
    log::info!("test accuracy {:.3}", metrics.test_accuracy);
    Ok(0)
}

/// What to explain and how; shared by `attribute` and `evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct AttributionSettings {
    methods: Vec<Method>,
    split: SplitName,
    limit: Option<usize>,
    target: TargetPolicy,
    attribution: AttributionConfig,
}

impl AttributionSettings {
    fn from_args(seed: u64, methods: &[String], a: &AttributionArgs) -> Result<Self> {
        let methods = methods.iter().map(|m| parse::<Method>(m.trim())).collect::<Result<Vec<_>>>()?;
        let target = match a.target.as_str() {
            "true" => TargetPolicy::TrueClass,
            "predicted" => TargetPolicy::PredictedClass,
            other => return Err(Error::config("target", format!("expected true or predicted, got {other:?}"))),
        };
        let baseline = match a.baseline.as_str() {
            "zeros" => BaselinePolicy::Zeros,
            "normal" => BaselinePolicy::NormalNoise,
            other => return Err(Error::config("baseline", format!("expected zeros or normal, got {other:?}"))),
        };
        Ok(AttributionSettings {
            methods,
            split: parse(&a.split)?,
            limit: a.limit,
            target,
            attribution: AttributionConfig {
                n_permutations: a.n_permutations,
                n_coalitions: a.n_coalitions,
                ig_steps: a.ig_steps,
                baseline,
                granularity: if a.group_time_steps { Granularity::TimeStep } else { Granularity::Element },
                finite_difference: a.finite_difference,
                seed,
                ..Default::default()
            },
        })
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("methods", "at least one method is required"));
        }
        self.attribution.validate()
    }

    fn indices(&self, dataset: &Dataset) -> Result<Vec<usize>> {
        let mut indices = dataset.split_indices(self.split)?;
        if let Some(n) = self.limit {
            indices.truncate(n);
        }
        if indices.is_empty() {
            return Err(Error::config("limit", "no samples selected"));
        }
        Ok(indices)
    }

    fn config_for(&self, method: Method) -> AttributionConfig {
        AttributionConfig {
            method,
            ..self.attribution.clone()
        }
    }
}

fn open_scorer(spec: &str, timeout_secs: u64, dataset: &Dataset) -> Result<Box<dyn Scorer>> {
    scorer::open(spec, dataset, Duration::from_secs(timeout_secs))
}

fn attribute(seed: u64, a: &AttributeArgs, section: Option<Value>) -> Result<u8> {
    let settings = overlay(AttributionSettings::from_args(seed, &a.methods, &a.attribution)?, section)?;
    settings.validate()?;
    let mut rec = RunRecorder::start("attribute", &settings)?;
    rec.seed("attribution", settings.attribution.seed);
    rec.input(&a.data);

    let dataset = read_dataset(&a.data)?;
    let scorer = open_scorer(&a.scorer.scorer, a.scorer.timeout_secs, &dataset)?;
    let indices = settings.indices(&dataset)?;
    create_dir(&a.out)?;
    for &method in &settings.methods {
        let cfg = settings.config_for(method);
        let container = rec.time(method.name(), || {
            attribute_dataset(scorer.as_ref(), &dataset, &indices, settings.target, &cfg)
        })?;
        let dir = a.out.join(method.name());
        write_relevance(&container, &dir)?;
        rec.output(&dir);
        log::info!("{}: {} relevance maps", method.name(), indices.len());
    }
    rec.write(&a.out)?;
    Ok(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvaluationSettings {
    #[serde(flatten)]
    attribution: AttributionSettings,
    occlusions: Vec<Fill>,
    evaluation: EvalConfig,
    name: Option<String>,
}

fn dataset_name(dataset: &Dataset, path: &Path) -> String {
    match dataset.meta.variant {
        Some(v) => v.to_string(),
        None => path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
    }
}

/// Relevance for `method`: read from `dir/<method>/` if present, else computed.
fn relevance_for(
    method: Method,
    dir: Option<&PathBuf>,
    scorer: &dyn Scorer,
    dataset: &Dataset,
    settings: &AttributionSettings,
    rec: &mut RunRecorder,
) -> Result<RelevanceContainer> {
    if let Some(dir) = dir {
        let path = dir.join(method.name());
        if path.join(MANIFEST_FILE).is_file() {
            rec.input(&path);
            return read_relevance(&path);
        }
        log::info!("{} has no {} relevance; computing it", dir.display(), method.name());
    }
    let indices = settings.indices(dataset)?;
    let cfg = settings.config_for(method);
    rec.time(method.name(), || attribute_dataset(scorer, dataset, &indices, settings.target, &cfg))
}

fn evaluate(seed: u64, a: &EvaluateArgs, section: Option<Value>) -> Result<u8> {
    let quantiles = match &a.quantiles {
        Some(q) => QuantileSet::new(q.clone())?,
        None => QuantileSet::default(),
    };
    let occlusions = a.occlusion.iter().map(|o| parse::<Fill>(o.trim())).collect::<Result<Vec<_>>>()?;
    let sample_policy = match a.samples.as_str() {
        "correct" => SamplePolicy::CorrectOnly,
        "all" => SamplePolicy::All,
        other => return Err(Error::config("samples", format!("expected correct or all, got {other:?}"))),
    };
    let expectancy = match a.expectancy.as_str() {
        "per-class" | "per_class" => ExpectancyPolicy::PerClass,
        "global" => ExpectancyPolicy::Global,
        other => return Err(Error::config("expectancy", format!("expected per-class or global, got {other:?}"))),
    };
    let base = EvaluationSettings {
        attribution: AttributionSettings::from_args(seed, &a.methods, &a.attribution)?,
        occlusions,
        evaluation: EvalConfig {
            quantiles,
            random_baseline: a.random_baseline,
            expectancy,
            sample_policy,
            seed,
            ..Default::default()
        },
        name: a.name.clone(),
    };
    let settings = overlay(base, section)?;
    settings.attribution.validate()?;
    if settings.occlusions.is_empty() {
        return Err(Error::config("occlusion", "at least one occlusion scheme is required"));
    }
    let mut rec = RunRecorder::start("evaluate", &settings)?;
    rec.seed("attribution", settings.attribution.attribution.seed);
    rec.seed("evaluation", settings.evaluation.seed);
    rec.input(&a.data);

    let dataset = read_dataset(&a.data)?;
    let name = settings.name.clone().unwrap_or_else(|| dataset_name(&dataset, &a.data));
    let scorer = open_scorer(&a.scorer.scorer, a.scorer.timeout_secs, &dataset)?;
    let mut containers = Vec::new();
    for &method in &settings.attribution.methods {
        let c = relevance_for(method, a.relevance.as_ref(), scorer.as_ref(), &dataset, &settings.attribution, &mut rec)?;
        containers.push(c);
    }

    let mut runs = Vec::new();
    for &fill in &settings.occlusions {
        let cfg = EvalConfig {
            occlusion: fill,
            ..settings.evaluation.clone()
        };
        let mut methods = Vec::new();
        for c in &containers {
            let phase = format!("evaluate {} {}", c.manifest.method, fill);
            let report = rec.time(&phase, || evaluate_method(scorer.as_ref(), &dataset, c, &cfg))?;
            if report.insufficient_samples {
                log::warn!("{} on {name}/{fill}: only {} samples evaluated", report.method, report.counts.n_evaluated);
            }
            methods.push(report);
        }
        runs.push(DatasetReport {
            dataset: name.clone(),
            occlusion: fill,
            methods,
        });
    }
    let report = Report::new(runs);
    write_report(&report, &a.out)?;
    rec.output(&a.out);
    rec.write(&a.out)?;
    if report.is_partial() {
        eprintln!("error: scorer failed during evaluation; partial report written to {}", a.out.display());
        return Ok(exit::SCORER);
    }
    Ok(0)
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportSettings {
    format: String,
}

fn report(a: &ReportArgs, section: Option<Value>) -> Result<u8> {
    let settings = overlay(ReportSettings { format: a.format.clone() }, section)?;
    if settings.format != "csv" && settings.format != "json" {
        return Err(Error::config("format", format!("expected csv or json, got {:?}", settings.format)));
    }
    let mut rec = RunRecorder::start("report", &settings)?;
    let mut reports = Vec::new();
    for dir in &a.inputs {
        rec.input(dir);
        reports.push(read_report(dir)?);
    }
    let merged = Report::merge(reports);
    if merged.runs.is_empty() {
        return Err(Error::shape("report inputs", "at least one evaluation run", 0));
    }
    match settings.format.as_str() {
        "csv" => write_report(&merged, &a.out)?,
        _ => write_report_json(&merged, &a.out)?,
    }
    rec.output(&a.out);
    rec.write(&a.out)?;
    Ok(if merged.is_partial() { exit::SCORER } else { 0 })
}
