//! On-disk containers.
//!
//! A container is a directory holding a canonical JSON `manifest.json` plus
//! raw little-endian tensors:
//!
//! | file                 | type            | shape       |
//! |----------------------|-----------------|-------------|
//! | `values.f32`         | float32 LE      | `(N, M, T)` |
//! | `labels.u8`          | uint8           | `(N,)`      |
//! | `expert_weights.u8`  | uint8, optional | `(N, M, T)` |
//! | `relevance.f32`      | float32 LE      | `(R, M, T)` |
//!
//! Manifests are serialized with sorted keys and shortest round-trip float
//! formatting, so writing the same container twice produces identical bytes.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attractor::{GenerationConfig, Variant};
use crate::dataset::{Dataset, DatasetMeta, SplitAssignment};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

pub const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VALUES_FILE: &str = "values.f32";
pub const LABELS_FILE: &str = "labels.u8";
pub const EXPERT_WEIGHTS_FILE: &str = "expert_weights.u8";
pub const RELEVANCE_FILE: &str = "relevance.f32";

/// Serialize to JSON with sorted object keys and a trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let tree = serde_json::to_value(value).map_err(|source| Error::Manifest {
        path: "<memory>".into(),
        source,
    })?;
    let mut text = serde_json::to_string_pretty(&tree).map_err(|source| Error::Manifest {
        path: "<memory>".into(),
        source,
    })?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = to_canonical_json(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Manifest {
        path: path.to_path_buf(),
        source,
    })
}

fn write_f32(path: &Path, data: impl Iterator<Item = f32>) -> Result<()> {
    let bytes: Vec<u8> = data.flat_map(f32::to_le_bytes).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path, expected: usize, what: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected {
        return Err(Error::shape(
            format!("{what} ({})", path.display()),
            format!("{expected} bytes"),
            format!("{} bytes", bytes.len()),
        ));
    }
    Ok(bytes)
}

fn read_f32(path: &Path, shape: (usize, usize, usize), what: &str) -> Result<Array3<f32>> {
    let count = shape.0 * shape.1 * shape.2;
    let bytes = read_bytes(path, count * 4, what)?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Array3::from_shape_vec(shape, data).map_err(|e| Error::shape(what, format!("{shape:?}"), e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch {
            expected: FORMAT_VERSION,
            found,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainerKind {
    Dataset,
    Relevance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub kind: ContainerKind,
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub class_names: Vec<String>,
    pub variant: Option<Variant>,
    pub generation: Option<GenerationConfig>,
    pub seed: Option<u64>,
    pub assumed_settings: Vec<String>,
    pub split: Option<SplitAssignment>,
    pub has_expert_weights: bool,
}

/// Peek at just the version and kind of a manifest.
#[derive(Deserialize)]
struct ManifestHeader {
    format_version: u32,
    kind: ContainerKind,
}

fn read_header(path: &Path) -> Result<ManifestHeader> {
    let header: ManifestHeader = read_json(path)?;
    check_version(header.format_version)?;
    Ok(header)
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.check()?;
    ensure_dir(dir)?;
    let (n, m, t) = dataset.values.dim();
    let meta = &dataset.meta;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        kind: ContainerKind::Dataset,
        n,
        m,
        t,
        class_names: meta.class_names.clone(),
        variant: meta.variant,
        generation: meta.generation.clone(),
        seed: meta.seed,
        assumed_settings: meta.assumed_settings.clone(),
        split: meta.split.clone(),
        has_expert_weights: dataset.expert_weights.is_some(),
    };
    write_f32(&dir.join(VALUES_FILE), dataset.values.iter().copied())?;
    let labels = dir.join(LABELS_FILE);
    fs::write(&labels, &dataset.labels).map_err(|e| Error::io(&labels, e))?;
    let weights_path = dir.join(EXPERT_WEIGHTS_FILE);
    match &dataset.expert_weights {
        Some(w) => {
            let bytes: Vec<u8> = w.iter().copied().collect();
            fs::write(&weights_path, bytes).map_err(|e| Error::io(&weights_path, e))?;
        }
        None if weights_path.exists() => {
            fs::remove_file(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
        }
        None => {}
    }
    // manifest last: a directory with a manifest is a complete container
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_dataset_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let header = read_header(&path)?;
    if header.kind != ContainerKind::Dataset {
        return Err(Error::shape("container kind", "dataset", format!("{:?}", header.kind)));
    }
    read_json(&path)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_dataset_manifest(dir)?;
    let shape = (manifest.n, manifest.m, manifest.t);
    let values = read_f32(&dir.join(VALUES_FILE), shape, "values")?;
    let labels = read_bytes(&dir.join(LABELS_FILE), manifest.n, "labels")?;
    let expert_weights = if manifest.has_expert_weights {
        let bytes = read_bytes(
            &dir.join(EXPERT_WEIGHTS_FILE),
            manifest.n * manifest.m * manifest.t,
            "expert_weights",
        )?;
        Some(Array3::from_shape_vec(shape, bytes).map_err(|e| Error::shape("expert_weights", format!("{shape:?}"), e))?)
    } else {
        None
    };
    Dataset::new(
        values,
        labels,
        expert_weights,
        DatasetMeta {
            class_names: manifest.class_names,
            variant: manifest.variant,
            generation: manifest.generation,
            seed: manifest.seed,
            assumed_settings: manifest.assumed_settings,
            split: manifest.split,
        },
    )
}

/// Which class a relevance map explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    TrueClass,
    PredictedClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceManifest {
    pub format_version: u32,
    pub kind: ContainerKind,
    pub method: String,
    pub scorer_id: String,
    pub target_policy: TargetPolicy,
    pub seed: u64,
    /// Method hyperparameters, free-form.
    pub params: serde_json::Value,
    /// Number of samples in the referenced dataset.
    pub dataset_n: usize,
    pub m: usize,
    pub t: usize,
    /// Dataset indices covered, one relevance map per entry.
    pub indices: Vec<usize>,
    /// Class explained for each entry of `indices`.
    pub targets: Vec<usize>,
}

/// Relevance maps for a subset of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceContainer {
    pub manifest: RelevanceManifest,
    /// `(indices.len(), M, T)`.
    pub relevance: Array3<f32>,
}

impl RelevanceContainer {
    pub fn check(&self) -> Result<()> {
        let mf = &self.manifest;
        let expected = (mf.indices.len(), mf.m, mf.t);
        if self.relevance.dim() != expected {
            return Err(Error::shape("relevance", format!("{expected:?}"), format!("{:?}", self.relevance.dim())));
        }
        if mf.targets.len() != mf.indices.len() {
            return Err(Error::shape("relevance targets", mf.indices.len(), mf.targets.len()));
        }
        if let Some(&i) = mf.indices.iter().find(|&&i| i >= mf.dataset_n) {
            return Err(Error::shape("relevance index", format!("< {}", mf.dataset_n), i));
        }
        if self.relevance.iter().any(|v| !v.is_finite()) {
            return Err(Error::shape("relevance", "finite values", "non-finite value"));
        }
        Ok(())
    }

    /// Verify that this container refers to `dataset`.
    pub fn check_against(&self, dataset: &Dataset) -> Result<()> {
        self.check()?;
        let (m, t) = dataset.sample_shape();
        let mf = &self.manifest;
        if (mf.dataset_n, mf.m, mf.t) != (dataset.len(), m, t) {
            return Err(Error::shape(
                "relevance vs dataset",
                format!("{:?}", (dataset.len(), m, t)),
                format!("{:?}", (mf.dataset_n, mf.m, mf.t)),
            ));
        }
        if let Some(&c) = mf.targets.iter().find(|&&c| c >= dataset.n_classes()) {
            return Err(Error::shape("relevance target", format!("< {}", dataset.n_classes()), c));
        }
        Ok(())
    }

    /// Position of dataset index `i` within the container.
    pub fn position(&self, i: usize) -> Option<usize> {
        self.manifest.indices.iter().position(|&j| j == i)
    }
}

pub fn write_relevance(container: &RelevanceContainer, dir: &Path) -> Result<()> {
    container.check()?;
    ensure_dir(dir)?;
    write_f32(&dir.join(RELEVANCE_FILE), container.relevance.iter().copied())?;
    write_json(&dir.join(MANIFEST_FILE), &container.manifest)
}

pub fn read_relevance(dir: &Path) -> Result<RelevanceContainer> {
    let path = dir.join(MANIFEST_FILE);
    let header = read_header(&path)?;
    if header.kind != ContainerKind::Relevance {
        return Err(Error::shape("container kind", "relevance", format!("{:?}", header.kind)));
    }
    let manifest: RelevanceManifest = read_json(&path)?;
    let shape = (manifest.indices.len(), manifest.m, manifest.t);
    let relevance = read_f32(&dir.join(RELEVANCE_FILE), shape, "relevance")?;
    let container = RelevanceContainer { manifest, relevance };
    container.check()?;
    Ok(container)
}

/// Largest-remainder apportionment of `n` items over `fractions`.
fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    // stable: ties go to the earlier split
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Stratified train/val/test split. Every class must land in every split.
pub fn split_dataset(labels: &[u8], n_classes: usize, fractions: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::config("fractions", format!("{fractions:?} must be non-negative")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config("fractions", format!("{fractions:?} sum to {total}, not 1")));
    }
    let names = ["train", "val", "test"];
    let mut sets: [Vec<usize>; 3] = Default::default();
    for class in 0..n_classes {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l as usize == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut substream(seed, Purpose::Split, &[class as u64]));
        let counts = apportion(members.len(), &fractions);
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClassSplit {
                class,
                split: names[k],
            });
        }
        let mut rest = members.as_slice();
        for (set, &c) in sets.iter_mut().zip(&counts) {
            let (head, tail) = rest.split_at(c);
            set.extend_from_slice(head);
            rest = tail;
        }
    }
    for set in sets.iter_mut() {
        set.sort_unstable();
    }
    let [train, val, test] = sets;
    Ok(SplitAssignment {
        fractions,
        seed,
        train,
        val,
        test,
    })
}
