//! Run configuration for the pretrain/train subcommands: a TOML file whose
//! sections mirror the typed configs, with `HEADLINER_<SECTION>_<KEY>`
//! environment overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use headliner_core::buzzword::BuzzwordConfig;
use headliner_core::generate::GenerationConfig;
use headliner_core::model::ModelConfig;
use headliner_core::training::{CorruptionConfig, TrainConfig};

pub const ENV_PREFIX: &str = "HEADLINER_";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub train_corpus: PathBuf,
    /// Optional validation split; empty disables validation metrics.
    #[serde(default)]
    pub val_corpus: Option<PathBuf>,
    /// Superset corpus supplying user history and time steps for style and
    /// trend text; defaults to the training corpus.
    #[serde(default)]
    pub context_corpus: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Start from this checkpoint instead of a fresh initialization.
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSection {
    pub tf_min: u64,
    pub tf_max: f64,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection { tf_min: 10, tf_max: 0.01 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitsSection {
    /// Headline truncation for decoder targets.
    pub max_headline_tokens: usize,
    /// Cap on validation examples scored per evaluation.
    pub val_examples: usize,
}

impl Default for LimitsSection {
    fn default() -> Self {
        LimitsSection { max_headline_tokens: 20, val_examples: 64 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub vocab: VocabSection,
    #[serde(default)]
    pub buzzwords: BuzzwordConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub corruption: CorruptionConfig,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub limits: LimitsSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table =
            text.parse().with_context(|| format!("parsing config {}", path.display()))?;
        let mut value = toml::Value::Table(table);
        apply_env_overrides(&mut value, std::env::vars())?;
        let cfg: RunConfig = value.try_into().context("interpreting config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("paths.train_corpus", Some(&self.paths.train_corpus)),
            ("paths.val_corpus", self.paths.val_corpus.as_ref()),
            ("paths.context_corpus", self.paths.context_corpus.as_ref()),
            ("paths.init_checkpoint", self.paths.init_checkpoint.as_ref()),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{name} = {} does not exist", p.display());
                }
            }
        }
        self.train.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.corruption.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.generation.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(())
    }
}

/// Applies `HEADLINER_<SECTION>_<KEY>=value` overrides onto the parsed
/// TOML tree. The section is the part before the first underscore
/// (sections themselves contain none); the rest is the lowercased key.
pub fn apply_env_overrides(
    value: &mut toml::Value,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<()> {
    for (key, raw) in vars {
        let Some(rest) = key.strip_prefix(ENV_PREFIX) else { continue };
        let Some((section, field)) = rest.split_once('_') else { continue };
        let section = section.to_ascii_lowercase();
        let field = field.to_ascii_lowercase();
        let table = value
            .as_table_mut()
            .context("config root is not a table")?
            .entry(section.clone())
            .or_insert_with(|| toml::Value::Table(Default::default()));
        let table = table
            .as_table_mut()
            .with_context(|| format!("[{section}] is not a table"))?;
        let parsed = parse_scalar(&raw);
        table.insert(field, parsed);
    }
    Ok(())
}

fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(v) = raw.parse::<i64>() {
        return toml::Value::Integer(v);
    }
    if let Ok(v) = raw.parse::<f64>() {
        return toml::Value::Float(v);
    }
    if let Ok(v) = raw.parse::<bool>() {
        return toml::Value::Boolean(v);
    }
    toml::Value::String(raw.to_string())
}
