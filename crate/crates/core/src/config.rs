//! Run configuration: one JSON file per run, optionally patched by dotted
//! `key=value` overrides before it is parsed.

use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::experiments::{DataConfig, FitSpec, GridAxis, ModelConfig, Pipeline};
use crate::init::InitConfig;
use crate::sparsify::SparsifyStrategy;
use crate::train::TrainConfig;

/// The published JSON schema every run config is checked against before any
/// work starts; the same file ships as `configs/run_config.schema.json`.
pub const SCHEMA: &str = include_str!("../../../configs/run_config.schema.json");

static VALIDATOR: LazyLock<jsonschema::Validator> = LazyLock::new(|| {
    let schema: Value = serde_json::from_str(SCHEMA).expect("bundled schema is valid JSON");
    jsonschema::validator_for(&schema).expect("bundled schema compiles")
});

/// Parameters of the sweep studies. Each study reads the fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// A trial succeeds when its final test hinge is below this.
    #[serde(default = "default_success")]
    pub success_threshold: f64,
    /// Cell success rate that counts as above the boundary.
    #[serde(default = "default_rate")]
    pub rate_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<GridAxis>,
    /// alpha_* or sigma values; also the alpha_* list of a convergence sweep.
    #[serde(default)]
    pub axis1: Vec<f64>,
    /// Training-set sizes N, strictly increasing.
    #[serde(default)]
    pub axis2: Vec<usize>,
    /// Boundary regression (vit arm in a cnn comparison).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSpec>,
    /// Boundary regression of the cnn arm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cnn_fit: Option<FitSpec>,
    #[serde(default)]
    pub strategies: Vec<SparsifyStrategy>,
}

fn default_trials() -> usize {
    20
}

fn default_success() -> f64 {
    1e-3
}

fn default_rate() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub init: InitConfig,
    pub train: TrainConfig,
    #[serde(default = "default_sparsify")]
    pub sparsify: SparsifyStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_sparsify() -> SparsifyStrategy {
    SparsifyStrategy::KeepAll
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn pipeline(&self) -> Pipeline {
        Pipeline {
            data: self.data.clone(),
            model: self.model,
            init: self.init,
            train: self.train.clone(),
            sparsify: self.sparsify,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        if let Some(e) = &self.experiment {
            if e.trials == 0 {
                return Err(Error::InvalidConfig("experiment.trials must be >= 1".into()));
            }
            if !(0.0..=1.0).contains(&e.rate_threshold) {
                return Err(Error::InvalidConfig("experiment.rate_threshold must lie in [0, 1]".into()));
            }
            if !(e.success_threshold > 0.0) {
                return Err(Error::InvalidConfig("experiment.success_threshold must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Parses `text`, applies `overrides` in order, checks the result
    /// against [`SCHEMA`], then deserializes and validates.
    pub fn from_json_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let violations: Vec<String> = VALIDATOR
            .iter_errors(&value)
            .map(|e| format!("at `{}`: {e}", e.instance_path()))
            .collect();
        if !violations.is_empty() {
            let mut msg = format!("config violates the schema: {}", violations.join("; "));
            // serde_json reports line and column only when parsing text, so
            // the unpatched file is parsed again to locate the offender.
            if overrides.is_empty() {
                if let Err(e) = serde_json::from_str::<RunConfig>(text) {
                    msg.push_str(&format!(" ({e})"));
                }
            }
            return Err(Error::InvalidConfig(msg));
        }
        let cfg: RunConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::from_json_with_overrides(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn experiment(&self) -> Result<&ExperimentConfig> {
        self.experiment
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("missing field `experiment`".into()))
    }
}

/// Sets the leaf at a dotted path, e.g. `train.eta=0.05`. The value is read
/// as JSON when it parses, otherwise as a string. Missing intermediate
/// objects are created; unknown leaves are caught when the config is parsed.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{assignment}` is not KEY=VALUE")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::InvalidConfig(format!("override key `{path}` has an empty segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for k in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("override `{path}`: `{k}` is inside a non-object")))?;
        node = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::InvalidConfig(format!("override `{path}` targets a non-object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "data": {"d": 10, "patterns": 5, "tokens": 20, "alpha_star": 0.5, "alpha_confusion": 0.1,
                 "c0": 0.01, "n_train": 8, "n_test": 8},
        "model": {"m": 10},
        "init": {"scheme": "experiment", "sigma": 0.1, "delta": 0.2},
        "train": {"eta": 0.5, "batch_size": 4, "max_iters": 10}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_json_with_overrides(MINIMAL, &[]).unwrap();
        assert_eq!(c.sparsify, SparsifyStrategy::KeepAll);
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert!(c.experiment.is_none());
    }

    #[test]
    fn overrides_patch_leaves() {
        let o = [
            "train.eta=0.05".to_string(),
            "sparsify.kind=random_k".to_string(),
            "sparsify.k=5".to_string(),
            "experiment.trials=3".to_string(),
            "output_dir=elsewhere".to_string(),
        ];
        let c = RunConfig::from_json_with_overrides(MINIMAL, &o).unwrap();
        assert_eq!(c.train.eta, 0.05);
        assert_eq!(c.sparsify, SparsifyStrategy::RandomK { k: 5 });
        assert_eq!(c.experiment.unwrap().trials, 3);
        assert_eq!(c.output_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn bad_overrides_and_fields_are_errors() {
        assert!(RunConfig::from_json_with_overrides(MINIMAL, &["train.etaa=1".into()]).is_err());
        assert!(RunConfig::from_json_with_overrides(MINIMAL, &["train.eta".into()]).is_err());
        assert!(RunConfig::from_json_with_overrides(MINIMAL, &["train.eta.x=1".into()]).is_err());
        assert!(RunConfig::from_json_with_overrides(MINIMAL, &["train.eta=-1".into()]).is_err());
        let missing = MINIMAL.replace(r#""d": 10, "#, "");
        let err = RunConfig::from_json_with_overrides(&missing, &[]).unwrap_err();
        assert!(err.to_string().contains("`d`"), "{err}");
    }

    #[test]
    fn schema_violations_name_the_field_and_line() {
        let typo = MINIMAL.replace(r#""n_test": 8"#, r#""n_tset": 8"#);
        let err = RunConfig::from_json_with_overrides(&typo, &[]).unwrap_err().to_string();
        assert!(err.contains("schema") && err.contains("n_tset") && err.contains("line 3"), "{err}");
        // Overrides are checked too, after they are applied.
        let err = RunConfig::from_json_with_overrides(MINIMAL, &["train.batch_size=0".into()])
            .unwrap_err()
            .to_string();
        assert!(err.contains("/train/batch_size"), "{err}");
    }
}
