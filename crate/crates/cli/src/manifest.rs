use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use itb_core::store::{to_canonical_json, write_json};
use itb_core::Result;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Provenance of one command invocation; the only place timestamps live.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub started_unix_secs: u64,
    pub timings_secs: BTreeMap<String, f64>,
}

pub struct RunRecorder {
    manifest: RunManifest,
    clock: Instant,
}

impl RunRecorder {
    pub fn start<C: Serialize>(command: &str, config: &C) -> Result<Self> {
        let digest = Sha256::digest(to_canonical_json(config)?.as_bytes());
        Ok(RunRecorder {
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                config_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix_secs: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                timings_secs: BTreeMap::new(),
            },
            clock: Instant::now(),
        })
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.manifest.seeds.insert(name.to_string(), seed);
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    /// Run `f`, recording its wall-clock time under `phase`.
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        *self.manifest.timings_secs.entry(phase.to_string()).or_default() += t0.elapsed().as_secs_f64();
        out
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.manifest
            .timings_secs
            .insert("total".into(), self.clock.elapsed().as_secs_f64());
        write_json(&dir.join(RUN_MANIFEST_FILE), &self.manifest)
    }
}
