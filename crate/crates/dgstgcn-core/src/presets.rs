//! Run configuration: the bundle of settings one command resolves to, the
//! named presets, and JSON config-file layering.
//!
//! Resolution order: preset (or built-in defaults) → config-file overlay →
//! individual flag overrides applied by the caller. The merged result is
//! re-validated by serde with unknown keys rejected, and every command is
//! expected to log it so a run can be reproduced from the log alone.

use crate::data::synth::SynthSpec;
use crate::data::Modality;
use crate::error::{Error, Result};
use crate::net::ModelConfig;
use crate::train::TrainConfig;
use std::path::Path;

/// Fully-resolved settings for one command invocation.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Generator settings used by the `synth` command.
    pub synth: SynthSpec,
    /// Input stream fed to training and evaluation.
    pub modality: Modality,
    pub eval_batch_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthSpec::default(),
            modality: Modality::Joint,
            eval_batch_size: 64,
        }
    }
}

pub const PRESET_NAMES: [&str; 3] = ["paper-ablation", "paper-sota", "desk"];

/// Look up a named preset.
///
/// `paper-ablation` is the full-size network with the ablation training
/// recipe (64-frame clips, 100 epochs); `paper-sota` lengthens clips to 100
/// frames over 150 epochs; `desk` is a scaled-down setup sized for the
/// synthetic datasets, small enough to overfit them on a laptop CPU in
/// seconds.
pub fn preset(name: &str) -> Result<RunConfig> {
    let mut run = RunConfig::default();
    match name {
        "paper-ablation" => {
            run.train.epochs = 100;
            run.train.batch_size = 128;
            run.train.input_length = 64;
        }
        "paper-sota" => {
            run.train.epochs = 150;
            run.train.batch_size = 128;
            run.train.input_length = 100;
        }
        "desk" => {
            run.model = ModelConfig {
                num_classes: 4,
                num_joints: 9,
                in_channels: 2,
                max_persons: 1,
                base_channels: 16,
                num_blocks: 4,
                downsample_blocks: vec![3],
                groups: 8,
                ..ModelConfig::default()
            };
            run.train = TrainConfig {
                epochs: 25,
                batch_size: 16,
                base_lr: 0.05,
                input_length: 16,
                ..TrainConfig::default()
            };
            run.eval_batch_size = 32;
        }
        other => {
            return Err(Error::config(format!(
                "unknown preset '{other}' (expected {})",
                PRESET_NAMES.join("|")
            )));
        }
    }
    Ok(run)
}

/// Build the run config from an optional preset and an optional JSON
/// overlay file. Overlay objects merge key-by-key; anything else replaces
/// the base value, as does an object that switches a tagged enum's `kind`.
pub fn resolve(preset_name: Option<&str>, config_path: Option<&Path>) -> Result<RunConfig> {
    let base = match preset_name {
        Some(name) => preset(name)?,
        None => RunConfig::default(),
    };
    let Some(path) = config_path else {
        return Ok(base);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read config {}: {e}", path.display())))?;
    let overlay: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("config {} is not valid JSON: {e}", path.display())))?;
    if !overlay.is_object() {
        return Err(Error::config(format!(
            "config {} must hold a JSON object",
            path.display()
        )));
    }
    let mut merged = serde_json::to_value(&base)?;
    deep_merge(&mut merged, overlay);
    serde_json::from_value(merged)
        .map_err(|e| Error::config(format!("config {}: {e}", path.display())))
}

fn deep_merge(base: &mut serde_json::Value, overlay: serde_json::Value) {
    use serde_json::Value;
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            // changing a tagged enum's variant replaces the whole object, so
            // stale fields of the old variant don't linger
            if o.contains_key("kind") && o.get("kind") != b.get("kind") {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::SpatialVariant;

    fn write_tmp(name: &str, text: &str) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(format!(
            "dgstgcn-prescfg-{}-{name}.json",
            std::process::id()
        ));
        std::fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn presets_resolve_and_unknown_is_rejected() {
        for name in PRESET_NAMES {
            let run = preset(name).unwrap();
            run.model.validate().unwrap();
            run.train.validate().unwrap();
        }
        assert_eq!(preset("paper-sota").unwrap().train.input_length, 100);
        assert_eq!(preset("desk").unwrap().model.base_channels, 16);
        let err = preset("dsek").unwrap_err().to_string();
        assert!(err.contains("dsek") && err.contains("desk"), "{err}");
    }

    #[test]
    fn overlay_merges_deeply_and_rejects_unknown_keys() {
        let path = write_tmp(
            "ok",
            r#"{"train": {"epochs": 3}, "model": {"groups": 4}}"#,
        );
        let run = resolve(Some("desk"), Some(&path)).unwrap();
        std::fs::remove_file(&path).unwrap();
        // overridden
        assert_eq!(run.train.epochs, 3);
        assert_eq!(run.model.groups, 4);
        // untouched desk values survive
        assert_eq!(run.train.batch_size, 16);
        assert_eq!(run.model.base_channels, 16);

        let path = write_tmp("bad", r#"{"train": {"epochz": 3}}"#);
        let err = resolve(None, Some(&path)).unwrap_err();
        std::fs::remove_file(&path).unwrap();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("epochz"), "{err}");
    }

    #[test]
    fn overlay_can_switch_tagged_variants() {
        let path = write_tmp("kind", r#"{"model": {"spatial": {"kind": "fixed_topology"}}}"#);
        let run = resolve(None, Some(&path)).unwrap();
        std::fs::remove_file(&path).unwrap();
        assert_eq!(run.model.spatial, SpatialVariant::FixedTopology);
    }

    #[test]
    fn missing_file_is_a_data_error() {
        let err = resolve(None, Some(Path::new("/nonexistent/x.json"))).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }
}
