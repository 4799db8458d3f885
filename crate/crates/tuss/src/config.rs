//! TOML run configuration.
//!
//! ```toml
//! [model]
//! preset = "medium"            # or a full inline `[model.config]` table
//!
//! [data]
//! manifest = "corpus.jsonl"    # relative to this file
//!
//! [data.sampler]
//! n_range = [2, 4]
//!
//! [train]
//! epochs = 150
//!
//! [fine_tune]                  # optional; selects the fine-tune path
//! base_checkpoint = "runs/base/epoch_124.ckpt"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tuss_core::mixture::PromptSamplerConfig;
use tuss_core::train::TrainConfig;
use tuss_core::ModelConfig;

use crate::checkpoint::ModelKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// `medium` or `large`; ignored when `config` is given.
    pub preset: String,
    pub config: Option<ModelConfig>,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { kind: ModelKind::Tuss, preset: "medium".into(), config: None, init_seed: 0 }
    }
}

impl ModelSection {
    pub fn resolve(&self) -> Result<ModelConfig> {
        match &self.config {
            Some(c) => Ok(c.clone()),
            None => ModelConfig::preset(&self.preset)
                .ok_or_else(|| Error::Usage(format!("model.preset: unknown preset `{}`", self.preset))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub manifest: PathBuf,
    /// Fixed validation recipes; generated from the `valid` split when absent.
    #[serde(default)]
    pub validation_recipes: Option<PathBuf>,
    #[serde(default)]
    pub sampler: PromptSamplerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneSection {
    pub base_checkpoint: PathBuf,
    pub epochs: usize,
    pub peak_lr: f64,
    pub prompt_dropout_prob: f64,
}

impl Default for FineTuneSection {
    fn default() -> Self {
        Self {
            base_checkpoint: PathBuf::new(),
            epochs: 26,
            peak_lr: TrainConfig::FINE_TUNE_PEAK_LR,
            prompt_dropout_prob: 0.25,
        }
    }
}

impl FineTuneSection {
    /// The training config of the fine-tune stage: same rules, new peak,
    /// epoch count and dropout, and a different data seed.
    pub fn stage_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            peak_lr: self.peak_lr,
            prompt_dropout_prob: self.prompt_dropout_prob,
            seed: base.seed.wrapping_add(1),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Log a step record every this many steps.
    pub log_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default"), log_every: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub fine_tune: Option<FineTuneSection>,
    #[serde(default)]
    pub output: OutputSection,
}

/// Sets `a.b.c = value` in a TOML tree; `value` is parsed as a TOML literal
/// and falls back to a plain string.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{assignment}` is not of the form key=value")))?;
    let raw = raw.trim();
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut table = root;
    for p in path {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::Usage(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses `text` with `overrides` applied. Relative paths resolve
    /// against `base`.
    pub fn from_toml(text: &str, overrides: &[String], base: &Path, origin: &Path) -> Result<Self> {
        let err = |message: String| Error::Config { path: origin.to_path_buf(), message };
        let mut table: toml::Table = toml::from_str(text).map_err(|e| err(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| err(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data.manifest);
        if let Some(r) = cfg.data.validation_recipes.as_mut() {
            fix(r);
        }
        if let Some(f) = cfg.fine_tune.as_mut() {
            fix(&mut f.base_checkpoint);
        }
        fix(&mut cfg.output.dir);
        cfg.validate().map_err(|e| match e {
            Error::Usage(m) => err(m),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, overrides, &base, path)
    }

    /// Every problem across sections, reported together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        fn push(problems: &mut Vec<String>, section: &str, e: Error) {
            let msg = match e {
                Error::Core(tuss_core::Error::InvalidConfig(m)) => m,
                other => other.to_string(),
            };
            problems.extend(msg.split("; ").map(|m| format!("{section}: {m}")));
        }
        let model = self.model.resolve();
        match &model {
            Ok(m) => {
                if let Err(e) = m.validate() {
                    push(&mut problems, "model", e.into());
                }
            }
            Err(e) => problems.push(e.to_string()),
        }
        if let Err(e) = self.train.validate() {
            push(&mut problems, "train", e.into());
        }
        if let Err(e) = self.data.sampler.validate() {
            push(&mut problems, "data.sampler", e.into());
        }
        if let Ok(m) = &model {
            if m.sample_rate_hz != self.data.sampler.sample_rate_hz {
                problems.push(format!(
                    "data.sampler: sample_rate_hz {} differs from the model rate {}",
                    self.data.sampler.sample_rate_hz, m.sample_rate_hz
                ));
            }
        }
        if self.output.log_every == 0 {
            problems.push("output: log_every must be positive".into());
        }
        if let Some(f) = &self.fine_tune {
            let stage = f.stage_config(&self.train);
            if let Err(e) = stage.validate() {
                push(&mut problems, "fine_tune", e.into());
            }
            if f.base_checkpoint.as_os_str().is_empty() {
                problems.push("fine_tune: base_checkpoint is required".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Usage(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[data]\nmanifest = \"corpus.jsonl\"\n";

    #[test]
    fn defaults_and_paths() {
        let cfg = RunConfig::from_toml(MINIMAL, &[], Path::new("/cfg"), Path::new("/cfg/run.toml")).unwrap();
        assert_eq!(cfg.data.manifest, PathBuf::from("/cfg/corpus.jsonl"));
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.model.resolve().unwrap(), ModelConfig::medium());
        assert!(cfg.fine_tune.is_none());
    }

    #[test]
    fn overrides_reach_every_field() {
        let o = vec!["train.peak_lr=5e-4".to_string(), "train.seed=9".into(), "model.preset=large".into()];
        let cfg = RunConfig::from_toml(MINIMAL, &o, Path::new(""), Path::new("run.toml")).unwrap();
        assert_eq!(cfg.train.peak_lr, 5e-4);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.model.resolve().unwrap(), ModelConfig::large());
    }

    #[test]
    fn validation_lists_all_problems() {
        let text = format!("{MINIMAL}[train]\nprompt_dropout_prob = 1.5\nbatch_size = 0\n");
        let err = RunConfig::from_toml(&text, &[], Path::new(""), Path::new("run.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("prompt_dropout_prob") && msg.contains("batch_size"), "{msg}");
        assert!(err.is_invalid_input());
        let err = RunConfig::from_toml("[data]\nmanifest = 3\n", &[], Path::new(""), Path::new("run.toml")).unwrap_err();
        assert!(err.is_invalid_input());
    }

    #[test]
    fn fine_tune_stage() {
        let text = format!("{MINIMAL}[fine_tune]\nbase_checkpoint = \"base.ckpt\"\n");
        let cfg = RunConfig::from_toml(&text, &[], Path::new("/r"), Path::new("/r/run.toml")).unwrap();
        let f = cfg.fine_tune.unwrap();
        assert_eq!(f.base_checkpoint, PathBuf::from("/r/base.ckpt"));
        let stage = f.stage_config(&cfg.train);
        assert_eq!((stage.epochs, stage.peak_lr, stage.prompt_dropout_prob), (26, 1.25e-4, 0.25));
    }
}
