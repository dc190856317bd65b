//! Run configuration file (TOML).
//!
//! Every key has a default and a command-line flag ([`KEYS`]). Unknown keys
//! are rejected. Precedence: defaults, then the file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::datasets::DatasetKind;
use crate::error::{Error, Result};
use crate::grounding::DetectionConfig;
use crate::http::{DetectorSettings, EmbedderSettings, GeneratorSettings};
use crate::pipeline::{PipelineConfig, Variant};
use crate::prompt_bank::{InstructionTemplates, DEFAULT_ANOMALY_INSTRUCTION, DEFAULT_NORMAL_INSTRUCTION, DEFAULT_N_PROMPTS};
use crate::scorer::ScoreConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// `mvtec`, `visa` or `synthetic`.
    pub name: String,
    pub root: String,
    /// VisA split table; empty means `<root>/split_csv/1cls.csv`.
    pub split_file: String,
    /// Empty means every category found.
    pub categories: Vec<String>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            root: "data/synthetic".into(),
            split_file: String::new(),
            categories: Vec::new(),
        }
    }
}

impl DatasetSection {
    pub fn kind(&self) -> Result<DatasetKind> {
        self.name.parse()
    }

    pub fn split_path(&self) -> PathBuf {
        if self.split_file.is_empty() {
            Path::new(&self.root).join("split_csv").join("1cls.csv")
        } else {
            PathBuf::from(&self.split_file)
        }
    }

    pub fn category_filter(&self) -> Option<&[String]> {
        (!self.categories.is_empty()).then_some(self.categories.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendsSection {
    /// `real` or `mock:SEED`.
    pub kind: String,
    pub generator: GeneratorSettings,
    pub detector: DetectorSettings,
    pub embedder: EmbedderSettings,
}

impl Default for BackendsSection {
    fn default() -> Self {
        Self {
            kind: "mock:7".into(),
            generator: GeneratorSettings::default(),
            detector: DetectorSettings::default(),
            embedder: EmbedderSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptsSection {
    pub bank_path: String,
    pub n_prompts: usize,
    pub normal_instruction: String,
    pub anomaly_instruction: String,
    /// Regenerate categories already in the bank.
    pub overwrite: bool,
}

impl Default for PromptsSection {
    fn default() -> Self {
        Self {
            bank_path: "prompts/bank.jsonl".into(),
            n_prompts: DEFAULT_N_PROMPTS,
            normal_instruction: DEFAULT_NORMAL_INSTRUCTION.into(),
            anomaly_instruction: DEFAULT_ANOMALY_INSTRUCTION.into(),
            overwrite: false,
        }
    }
}

impl PromptsSection {
    pub fn templates(&self) -> InstructionTemplates {
        InstructionTemplates {
            normal: self.normal_instruction.clone(),
            anomaly: self.anomaly_instruction.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    /// Write score histograms and ROC curves next to the report.
    pub plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "runs/latest".into(),
            plots: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub variant: Variant,
    pub workers: usize,
    pub max_failure_fraction: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            workers: 1,
            max_failure_fraction: 0.01,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub backends: BackendsSection,
    pub detection: DetectionConfig,
    pub score: ScoreConfig,
    pub prompts: PromptsSection,
    pub output: OutputSection,
    pub run: RunSection,
}

/// A config key and the long flag that overrides it.
#[derive(Clone, Copy, Debug)]
pub struct KeySpec {
    pub key: &'static str,
    pub flag: &'static str,
    pub help: &'static str,
}

const fn key(key: &'static str, flag: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, flag, help }
}

pub const KEYS: &[KeySpec] = &[
    key("dataset.name", "dataset", "dataset layout: mvtec, visa or synthetic"),
    key("dataset.root", "root", "dataset root directory"),
    key("dataset.split_file", "split-file", "VisA split table (default <root>/split_csv/1cls.csv)"),
    key("dataset.categories", "categories", "comma-separated category filter"),
    key("backends.kind", "backend", "model backends: real or mock:SEED"),
    key("backends.generator.endpoint", "generator-endpoint", "text completion endpoint URL"),
    key("backends.generator.model", "generator-model", "text completion model identifier"),
    key("backends.generator.timeout_secs", "generator-timeout", "text completion timeout in seconds"),
    key("backends.generator.max_retries", "generator-max-retries", "retries on transport failure"),
    key("backends.detector.endpoint", "detector-endpoint", "detector service base URL"),
    key("backends.detector.device", "detector-device", "device selector passed to the detector"),
    key("backends.detector.query_dot", "detector-query-dot", "append '.' to detector queries"),
    key("backends.detector.timeout_secs", "detector-timeout", "detector timeout in seconds"),
    key("backends.embedder.endpoint", "embedder-endpoint", "embedding service base URL"),
    key("backends.embedder.identity", "embedder-identity", "embedder identity (model + weights hash)"),
    key("backends.embedder.dim", "embedder-dim", "embedding dimension"),
    key("backends.embedder.timeout_secs", "embedder-timeout", "embedder timeout in seconds"),
    key("backends.embedder.cache_enabled", "cache-enabled", "use the on-disk embedding cache"),
    key("backends.embedder.cache_path", "cache-path", "embedding cache file"),
    key("detection.confidence_threshold", "confidence-threshold", "drop detections below this confidence"),
    key("detection.top_k", "top-k", "object patches kept per image"),
    key("detection.min_area_fraction", "min-area-fraction", "drop boxes smaller than this fraction of the image"),
    key("score.mode", "mode", "score form: paper-literal or stabilized"),
    key("score.temperature", "temperature", "softmax temperature of the stabilized score"),
    key("prompts.bank_path", "bank", "prompt bank file"),
    key("prompts.n_prompts", "n-prompts", "prompts requested per polarity"),
    key("prompts.normal_instruction", "normal-instruction", "instruction for normal captions ({n}, {category})"),
    key("prompts.anomaly_instruction", "anomaly-instruction", "instruction for anomaly captions ({n}, {category})"),
    key("prompts.overwrite", "overwrite", "regenerate categories already in the bank"),
    key("output.dir", "out", "output directory"),
    key("output.plots", "plots", "write histograms and ROC curves"),
    key("run.variant", "variant", "pipeline variant: full, no-prompt-gen or no-detection"),
    key("run.workers", "workers", "parallel scoring workers"),
    key("run.max_failure_fraction", "max-failure-fraction", "tolerated fraction of failing samples"),
];

pub fn key_for_flag(flag: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.flag == flag)
}

/// Whether the key takes `true`/`false`; such flags may be given bare.
pub fn is_boolean_key(key: &str) -> bool {
    matches!(lookup(&defaults_value(), key), Some(Value::Boolean(_)))
}

fn defaults_value() -> Value {
    Value::try_from(RunConfig::default()).expect("defaults serialize")
}

/// Dotted paths of every leaf in the default config.
pub fn leaf_keys() -> Vec<String> {
    fn walk(prefix: &str, table: &Table, out: &mut Vec<String>) {
        for (k, v) in table {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                Value::Table(t) => walk(&path, t, out),
                _ => out.push(path),
            }
        }
    }
    let mut out = Vec::new();
    if let Value::Table(t) = defaults_value() {
        walk("", &t, &mut out);
    }
    out.sort();
    out
}

fn lookup<'v>(root: &'v Value, key: &str) -> Option<&'v Value> {
    key.split('.').try_fold(root, |v, part| v.get(part))
}

fn merge(base: &mut Table, overlay: Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn typed(default: &Value, key: &str, raw: &str) -> Result<Value> {
    let bad = |what: &str| Error::Config(format!("{key}: expected {what}, got {raw:?}"));
    Ok(match default {
        Value::String(_) => Value::String(raw.to_owned()),
        Value::Integer(_) => Value::Integer(raw.parse().map_err(|_| bad("an integer"))?),
        Value::Float(_) => Value::Float(raw.parse().map_err(|_| bad("a number"))?),
        Value::Boolean(_) => Value::Boolean(raw.parse().map_err(|_| bad("true or false"))?),
        Value::Array(_) => Value::Array(
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| Value::String(s.to_owned()))
                .collect(),
        ),
        _ => return Err(Error::Config(format!("{key} cannot be set from the command line"))),
    })
}

fn set(root: &mut Value, key: &str, value: Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut node = root;
    for p in parts {
        node = node
            .as_table_mut()
            .expect("config sections are tables")
            .entry(p)
            .or_insert_with(|| Value::Table(Table::new()));
    }
    node.as_table_mut().expect("table").insert(last.to_owned(), value);
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::load_layers(Some(text), &[])
    }

    /// Defaults, then the optional file, then `(key, raw value)` overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        Self::load_layers(text.as_deref(), overrides)
    }

    fn load_layers(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let defaults = defaults_value();
        let mut merged = defaults.clone();
        if let Some(text) = file {
            let table: Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            merge(merged.as_table_mut().expect("table"), table);
        }
        for (key, raw) in overrides {
            let default = lookup(&defaults, key).ok_or_else(|| Error::Config(format!("unknown key {key}")))?;
            set(&mut merged, key, typed(default, key, raw)?);
        }
        let config: RunConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.kind()?;
        if self.backends.kind != "real" && crate::mock::parse_mock_seed(&self.backends.kind).is_none() {
            return Err(Error::Config(format!(
                "backends.kind must be real or mock:SEED, got {:?}",
                self.backends.kind
            )));
        }
        if self.prompts.n_prompts == 0 {
            return Err(Error::Config("prompts.n_prompts must be at least 1".into()));
        }
        self.pipeline().validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            variant: self.run.variant,
            detection: self.detection.clone(),
            score: self.score.clone(),
            n_prompts: self.prompts.n_prompts,
            workers: self.run.workers,
            max_failure_fraction: self.run.max_failure_fraction,
            generator_identity: String::new(),
            detector_identity: String::new(),
            embedder_identity: String::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::ScoreMode;

    #[test]
    fn every_key_has_exactly_one_flag() {
        let mut declared: Vec<String> = KEYS.iter().map(|k| k.key.to_owned()).collect();
        declared.sort();
        assert_eq!(declared, leaf_keys());
        let mut flags: Vec<&str> = KEYS.iter().map(|k| k.flag).collect();
        flags.sort();
        flags.dedup();
        assert_eq!(flags.len(), KEYS.len());
    }

    #[test]
    fn file_and_flags_layer_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[score]\nmode = \"paper-literal\"\n[detection]\ntop_k = 5\n").unwrap();
        let overrides = vec![
            ("detection.top_k".to_owned(), "2".to_owned()),
            ("dataset.categories".to_owned(), "bottle, cable".to_owned()),
            ("prompts.overwrite".to_owned(), "true".to_owned()),
        ];
        let c = RunConfig::load(Some(&path), &overrides).unwrap();
        assert_eq!(c.score.mode, ScoreMode::PaperLiteral);
        assert_eq!(c.detection.top_k, 2);
        assert_eq!(c.dataset.categories, ["bottle", "cable"]);
        assert!(c.prompts.overwrite);
        assert_eq!(c.score.temperature, 0.01);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(RunConfig::from_toml("[score]\ntemprature = 0.1\n").is_err());
        assert!(RunConfig::from_toml("[nonsense]\n").is_err());
        assert!(RunConfig::load(None, &[("score.nope".into(), "1".into())]).is_err());
        assert!(RunConfig::load(None, &[("detection.top_k".into(), "many".into())]).is_err());
    }

    #[test]
    fn invalid_values_are_errors() {
        assert!(RunConfig::from_toml("[score]\ntemperature = 0.0\n").is_err());
        assert!(RunConfig::from_toml("[backends]\nkind = \"gpu\"\n").is_err());
        assert!(RunConfig::from_toml("[run]\nvariant = \"half\"\n").is_err());
        assert!(RunConfig::from_toml("[dataset]\nname = \"coco\"\n").is_err());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
