//! Run configuration: a TOML file overlaid on a preset, then command-line
//! overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small dimensions for laptop runs.
    #[default]
    Desk,
    /// Full-size dimensions (D=96, 12-layer word encoder).
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub test_per_class: usize,
    pub duration_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self { n_per_class: s.n_per_class, test_per_class: s.test_per_class, duration_s: s.duration_s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Corpus directory; `synth` writes here, other commands read
    /// `manifest.csv` from it unless `manifest` is set.
    pub data_dir: PathBuf,
    pub manifest: Option<PathBuf>,
    /// Checkpoints, logs, metrics and exports.
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let model = match preset {
            Preset::Desk => ModelConfig::desk(Variant::Fusion),
            Preset::Full => ModelConfig::default(),
        };
        Self {
            preset,
            data_dir: PathBuf::from("data"),
            manifest: None,
            out_dir: PathBuf::from("run"),
            model,
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }

    /// Parses TOML, filling every absent key from the chosen preset.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        let preset = match overlay.get("preset") {
            None => Preset::Desk,
            Some(v) => {
                v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(vec![format!("preset: {e}")]))?
            }
        };
        let base = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::Config(vec![e.to_string()]))?;
        let merged = merge(base, overlay);
        merged.try_into().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msgs) => {
                Error::Config(msgs.into_iter().map(|m| format!("{}: {m}", path.display())).collect())
            }
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.data_dir.join("manifest.csv"))
    }

    /// Every problem found, not just the first.
    pub fn validate(&self, need_manifest: bool) -> Vec<String> {
        let mut errs = self.model.validate();
        errs.extend(self.train.validate());
        if self.synth.n_per_class == 0 {
            errs.push("synth: n_per_class must be positive".into());
        }
        if !(self.synth.duration_s >= 1.0) {
            errs.push("synth: duration_s must be at least 1".into());
        }
        if need_manifest && !self.manifest_path().is_file() {
            errs.push(format!("manifest {} does not exist", self.manifest_path().display()));
        }
        errs
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            n_per_class: self.synth.n_per_class,
            test_per_class: self.synth.test_per_class,
            seed: self.train.seed,
            duration_s: self.synth.duration_s,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

fn merge(mut base: toml::Table, overlay: toml::Table) -> toml::Table {
    for (k, v) in overlay {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}
