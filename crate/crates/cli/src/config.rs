//! Run configuration: one TOML file describes the stream parameters,
//! the datasets, and optional offline reference accuracies. Unknown keys
//! are rejected; every stream field has a default.

use std::fs;
use std::path::Path;

use coldstream_core::augment::parse_policy_file;
use coldstream_core::error::{Error, Result};
use coldstream_core::stream::StreamConfig;
use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    #[serde(default)]
    pub stream: StreamConfig,
    #[serde(default)]
    pub dataset: Vec<DatasetManifest>,
    /// Offline reference accuracies matched to testing events; enables
    /// the final omega_all line.
    #[serde(default)]
    pub offline_refs: Option<Vec<f64>>,
}

pub fn parse_config(text: &str) -> Result<RunFile> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn dump_config(run: &RunFile) -> Result<String> {
    toml::to_string_pretty(run).map_err(|e| Error::Config(e.to_string()))
}

/// Parse, validate, and resolve the op-list policy file (relative to the
/// config's directory) before anything starts streaming.
pub fn parse_config_file(path: &Path) -> Result<RunFile> {
    let text = fs::read_to_string(path)?;
    let mut run = parse_config(&text)?;
    run.stream.validate()?;
    if run.dataset.is_empty() {
        return Err(Error::Config("config needs at least one [[dataset]]".into()));
    }
    if let Some(file) = run.stream.policy.file.clone() {
        let resolved = if file.is_relative() {
            path.parent().unwrap_or_else(|| Path::new(".")).join(&file)
        } else {
            file
        };
        let policy_text = fs::read_to_string(&resolved)?;
        run.stream.policy.oplist = parse_policy_file(&policy_text)?;
    }
    Ok(run)
}

impl Default for RunFile {
    fn default() -> Self {
        RunFile {
            stream: StreamConfig::default(),
            dataset: Vec::new(),
            offline_refs: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use coldstream_core::replay::Codec;
    use coldstream_core::stream::{EtaSchedule, Ordering};

    #[test]
    fn minimal_config_applies_defaults() {
        let run = parse_config("").unwrap();
        assert_eq!(run.stream, StreamConfig::default());
        assert_eq!(run.stream.replay_samples, 16);
        assert_eq!(run.stream.capacity, 200);
        assert!(run.dataset.is_empty());
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = parse_config("[stream]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn full_config_round_trips() {
        let text = r#"
offline_refs = [0.9, 0.8]

[stream]
mode = "practical"
m = 128
depth = 4
replay_samples = 8
capacity = 100
ordering = "class_iid"
eval_every = 50
seed = 42

[stream.eta]
kind = "per_class_linear"
eta_hi = 0.1
eta_lo = 0.001

[stream.codec]
kind = "quantize"
bits = 4

[stream.policy.mix]
enabled = true

[[dataset]]
name = "blobs"
format = "synthetic"
classes = 4

[dataset.synthetic]
kind = "sphere_blobs"
d = 16
per_class = 100
"#;
        let run = parse_config(text).unwrap();
        assert_eq!(run.stream.m, 128);
        assert_eq!(
            run.stream.eta,
            EtaSchedule::PerClassLinear { eta_hi: 0.1, eta_lo: 0.001 }
        );
        assert_eq!(run.stream.codec, Codec::Quantize { bits: 4 });
        assert_eq!(run.stream.ordering, Ordering::ClassIid);
        assert!(run.stream.policy.mix.enabled);
        assert_eq!(run.dataset.len(), 1);

        let dumped = dump_config(&run).unwrap();
        let reparsed = parse_config(&dumped).unwrap();
        assert_eq!(run, reparsed);
    }

    #[test]
    fn config_file_loads_policy_oplist() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("aug.policy"), "rotate 0.5 0.3 ; invert 0.2 0.0\n").unwrap();
        let cfg = r#"
[stream.policy]
file = "aug.policy"

[[dataset]]
name = "blobs"
format = "synthetic"
classes = 4

[dataset.synthetic]
kind = "sphere_blobs"
d = 16
per_class = 20
"#;
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(&cfg_path, cfg).unwrap();
        let run = parse_config_file(&cfg_path).unwrap();
        assert_eq!(run.stream.policy.oplist.len(), 1);
    }
}
