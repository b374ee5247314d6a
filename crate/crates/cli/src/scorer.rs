use std::path::{Path, PathBuf};
use std::time::Duration;

use itb_core::models::{BuiltinModel, ExternalScorer, Scorer};
use itb_core::store::read_json;
use itb_core::{Dataset, Error, Result};

pub const MODEL_FILE: &str = "model.json";

/// Model file inside a directory, or the path itself.
pub fn model_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MODEL_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn load_builtin(path: &Path) -> Result<BuiltinModel> {
    let model: BuiltinModel = read_json(&model_path(path))?;
    model.validate()?;
    Ok(model)
}

/// Open the scorer named by `spec` and check it fits `dataset`.
pub fn open(spec: &str, dataset: &Dataset, timeout: Duration) -> Result<Box<dyn Scorer>> {
    let (m, t) = dataset.sample_shape();
    let k = dataset.n_classes();
    let scorer: Box<dyn Scorer> = match spec.strip_prefix("builtin:") {
        Some(path) => Box::new(load_builtin(Path::new(path))?),
        None => Box::new(ExternalScorer::connect(spec.parse()?, Some((k, m, t)), timeout)?),
    };
    if scorer.input_shape() != (m, t) || scorer.n_classes() != k {
        return Err(Error::ShapeMismatch {
            what: "scorer".into(),
            expected: format!("{k} classes on {m}x{t}"),
            actual: format!("{} classes on {}x{}", scorer.n_classes(), scorer.input_shape().0, scorer.input_shape().1),
        });
    }
    Ok(scorer)
}
