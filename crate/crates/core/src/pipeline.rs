//! Run manifests, JSON configuration files and the file-driven multistage
//! runner.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::encoder::{BiEncoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::training::{load_pairs, run_multistage, HyperParams, MultistageOutcome, Stage, StageRecord};
use crate::vocab::BpeTokenizer;

pub const TOOL: &str = concat!("minaret ", env!("CARGO_PKG_VERSION"));

/// Record of one pipeline step: what went in, what came out, and the exact
/// settings used. Contains no timestamps, so replays compare byte-for-byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl Manifest {
    pub fn new(command: &str, config: &impl Serialize) -> Self {
        Self {
            tool: TOOL.to_string(),
            command: command.to_string(),
            config: strip_empty(serde_json::to_value(config).expect("config serializes")),
            seed: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            details: Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), io::hash_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), io::hash_file(path)?);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_bytes(path, self.to_json().as_bytes())
    }

    /// Conventional location: `<output>.manifest.json`.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut s = output.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

/// Drops nulls and empty arrays so only explicitly set values remain.
pub fn strip_empty(v: Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.into_iter()
                .filter_map(|(k, v)| {
                    let v = strip_empty(v);
                    match &v {
                        Value::Null => None,
                        Value::Array(a) if a.is_empty() => None,
                        _ => Some((k, v)),
                    }
                })
                .collect(),
        ),
        other => other,
    }
}

/// Reads a config file. A manifest is accepted too, in which case the
/// settings it recorded are returned.
pub fn load_config(path: &Path) -> Result<Map<String, Value>> {
    let v: Value = serde_json::from_str(&io::read_to_string(path)?)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let Value::Object(mut m) = v else {
        return Err(Error::config(format!("{}: config must be a JSON object", path.display())));
    };
    if m.contains_key("tool") && m.contains_key("command") {
        if let Some(Value::Object(c)) = m.remove("config") {
            return Ok(c);
        }
    }
    Ok(m)
}

/// Layers settings: top-level config keys, then the section named after
/// `command`, then values given on the command line.
pub fn resolve<T: Serialize + DeserializeOwned>(
    command: &str,
    cli: &T,
    config: Option<&Map<String, Value>>,
) -> Result<T> {
    let mut merged = Map::new();
    if let Some(cfg) = config {
        for (k, v) in cfg {
            if k != command && !v.is_object() {
                merged.insert(k.clone(), v.clone());
            }
        }
        if let Some(Value::Object(section)) = cfg.get(command) {
            merged.extend(section.clone());
        }
    }
    if let Value::Object(given) = strip_empty(serde_json::to_value(cli)?) {
        merged.extend(given);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::config(format!("{command}: {e}")))
}

/// One stage of a multistage config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub name: String,
    pub pairs_files: Vec<PathBuf>,
    #[serde(default)]
    pub hyperparams: Map<String, Value>,
}

/// Multistage config file: a starting model and an ordered list of stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultistageConfig {
    pub tokenizer: PathBuf,
    /// Starting weights; a fresh encoder of width `dim` when absent.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub dim: Option<usize>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub stages: Vec<StageConfig>,
}

impl MultistageConfig {
    pub fn from_map(map: Map<String, Value>) -> Result<Self> {
        serde_json::from_value(Value::Object(map)).map_err(|e| Error::config(format!("multistage config: {e}")))
    }

    /// Every referenced file must exist and every stage must name data.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("multistage config has no stages"));
        }
        if self.checkpoint.is_none() && self.dim.is_none() {
            return Err(Error::config("multistage config needs `checkpoint` or `dim`"));
        }
        let mut paths: Vec<&Path> = vec![&self.tokenizer];
        paths.extend(self.checkpoint.as_deref());
        for s in &self.stages {
            if s.pairs_files.is_empty() {
                return Err(Error::config(format!("stage '{}' lists no pairs files", s.name)));
            }
            paths.extend(s.pairs_files.iter().map(PathBuf::as_path));
        }
        if let Some(p) = paths.iter().find(|p| !p.is_file()) {
            return Err(Error::config(format!("missing file {}", p.display())));
        }
        Ok(())
    }

    /// Stage hyperparameters, with the config-wide seed as default.
    pub fn hyperparams(&self, stage: &StageConfig) -> Result<HyperParams> {
        let mut hp = stage.hyperparams.clone();
        hp.entry("seed").or_insert(Value::from(self.seed));
        let hp: HyperParams = serde_json::from_value(Value::Object(hp))
            .map_err(|e| Error::config(format!("stage '{}': {e}", stage.name)))?;
        hp.validate()?;
        Ok(hp)
    }

    pub fn initial_encoder(&self) -> Result<BiEncoder> {
        let tok = BpeTokenizer::load(&self.tokenizer)?;
        match (&self.checkpoint, self.dim) {
            (Some(c), _) => BiEncoder::from_checkpoint(
                crate::checkpoint::ModelCheckpoint::load(c)?,
                tok,
                EncoderConfig::default(),
                self.seed,
            ),
            (None, Some(d)) => BiEncoder::init(tok, d, EncoderConfig::default(), self.seed),
            (None, None) => Err(Error::config("multistage config needs `checkpoint` or `dim`")),
        }
    }
}

/// Checkpoint file written for stage `i`.
pub fn stage_checkpoint_path(dir: &Path, i: usize, name: &str) -> PathBuf {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    dir.join(format!("stage{}-{safe}.ckpt", i + 1))
}

/// Loads the data, trains every stage, writes per-stage checkpoints, the
/// tokenizer and `manifest.json` into `output_dir`.
pub fn run_multistage_config(cfg: &MultistageConfig) -> Result<(MultistageOutcome, Manifest)> {
    cfg.validate()?;
    let mut manifest = Manifest::new("multistage", cfg);
    manifest.seed = Some(cfg.seed);
    manifest.input(&cfg.tokenizer)?;
    if let Some(c) = &cfg.checkpoint {
        manifest.input(c)?;
    }
    let mut stages = Vec::with_capacity(cfg.stages.len());
    for s in &cfg.stages {
        let mut datasets = Vec::with_capacity(s.pairs_files.len());
        for f in &s.pairs_files {
            manifest.input(f)?;
            datasets.push(load_pairs(f)?);
        }
        stages.push(Stage {
            name: s.name.clone(),
            datasets,
            hyperparams: cfg.hyperparams(s)?,
        });
    }
    let outcome = run_multistage(cfg.initial_encoder()?, &stages)?;
    let tok_out = cfg.output_dir.join("tokenizer.json");
    outcome.final_encoder().tokenizer().save(&tok_out)?;
    manifest.output(&tok_out)?;
    for (i, (record, enc)) in outcome.stages.iter().enumerate() {
        let path = stage_checkpoint_path(&cfg.output_dir, i, &record.name);
        enc.to_checkpoint().save(&path)?;
        manifest.output(&path)?;
    }
    let records: Vec<StageRecord> = outcome.records();
    manifest.details = serde_json::json!({ "stages": records });
    manifest.save(&cfg.output_dir.join("manifest.json"))?;
    Ok((outcome, manifest))
}
