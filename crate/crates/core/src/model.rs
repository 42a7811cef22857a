//! Variant selection: acoustic-only, linguistic-only (± char branch) and
//! fusion (± demographics, ± char branch) classifiers behind one interface.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acoustic::{AcousticConfig, AcousticEncoder, DemographicInfo};
use crate::dsp::{FrontendConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::fusion::{
    acoustic_matrix_var, build_matrix_from_segments, AcousticFeatureMatrix, FusionConfig, FusionModel,
};
use crate::linguistic::{CharMatrix, LinguisticConfig, LinguisticModel, TokenSequence};
use crate::tensor::{Checkpoint, Graph, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Acoustic,
    Linguistic,
    Fusion,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Acoustic, Variant::Linguistic, Variant::Fusion];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Acoustic => "acoustic",
            Variant::Linguistic => "linguistic",
            Variant::Fusion => "fusion",
        }
    }

    pub fn uses_audio(self) -> bool {
        self != Variant::Linguistic
    }

    pub fn uses_text(self) -> bool {
        self != Variant::Acoustic
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}` (expected acoustic, linguistic or fusion)")))
    }
}

/// Which vector [`Model::embedding`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    /// Mean-pooled final acoustic grid.
    Xp,
    /// Acoustic head feature.
    Xa,
    Word,
    /// The classifier input.
    Fused,
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xp" => Ok(Feature::Xp),
            "xa" => Ok(Feature::Xa),
            "word" => Ok(Feature::Word),
            "fused" => Ok(Feature::Fused),
            _ => Err(Error::invalid(format!("unknown feature `{s}` (expected xp, xa, word or fused)"))),
        }
    }
}

/// Every hyperparameter needed to rebuild a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub frontend: FrontendConfig,
    pub acoustic: AcousticConfig,
    pub linguistic: LinguisticConfig,
    pub fusion: FusionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Fusion,
            frontend: FrontendConfig::default(),
            acoustic: AcousticConfig::default(),
            linguistic: LinguisticConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Small dimensions that train in seconds on a laptop.
    pub fn desk(variant: Variant) -> Self {
        let mut linguistic = LinguisticConfig::desk();
        linguistic.char_len_max = 256;
        linguistic.word_len_max = 64;
        let mut fusion = FusionConfig::desk();
        fusion.segment_s = 1.0;
        Self { variant, frontend: FrontendConfig::default(), acoustic: AcousticConfig::desk(), linguistic, fusion }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.frontend.validate();
        if self.variant.uses_audio() {
            errs.extend(self.acoustic.validate());
            if self.acoustic.mel_bins != self.frontend.mel_bins {
                errs.push(format!(
                    "acoustic.mel_bins {} differs from frontend.mel_bins {}",
                    self.acoustic.mel_bins, self.frontend.mel_bins
                ));
            }
        }
        if self.variant.uses_text() {
            errs.extend(self.linguistic.validate());
        }
        if self.variant == Variant::Fusion {
            errs.extend(self.fusion.validate());
        }
        errs
    }

    /// Whether the char branch is built for this variant.
    pub fn char_branch_enabled(&self) -> bool {
        match self.variant {
            Variant::Acoustic => false,
            Variant::Linguistic => self.linguistic.use_char_branch,
            Variant::Fusion => self.fusion.use_char_branch,
        }
    }

    pub fn set_char_branch(&mut self, on: bool) {
        self.linguistic.use_char_branch = on;
        self.fusion.use_char_branch = on;
    }
}

/// One recording prepared for a forward pass. Fields a variant does not
/// need may be empty.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub label: usize,
    pub demographics: DemographicInfo,
    pub segments: Vec<MelSpectrogram>,
    pub tokens: Option<TokenSequence>,
    pub chars: Option<CharMatrix>,
    pub acoustic_matrix: Option<AcousticFeatureMatrix>,
}

#[derive(Debug, Clone)]
pub enum Model {
    Acoustic(AcousticEncoder),
    Linguistic(LinguisticModel),
    Fusion(FusionModel),
}

/// Builds the classifier selected by `cfg.variant`, registering its
/// parameters in `store`. Fusion freezes `acoustic.*` unless joint
/// fine-tuning is requested. Non-default but legal flag combinations are
/// returned as notes.
pub fn fusion_mode_select(
    cfg: &ModelConfig,
    vocab_size: usize,
    store: &mut ParamStore,
    seed: u64,
) -> Result<(Model, Vec<String>)> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let mut notes = Vec::new();
    let model = match cfg.variant {
        Variant::Acoustic => Model::Acoustic(AcousticEncoder::new(&cfg.acoustic, store, seed)?),
        Variant::Linguistic => Model::Linguistic(LinguisticModel::new(&cfg.linguistic, vocab_size, store, seed)?),
        Variant::Fusion => {
            if cfg.fusion.use_char_branch {
                notes.push("fusion with the character branch is not the default configuration".to_string());
            }
            if !cfg.acoustic.use_demographics {
                notes.push("fusion without demographic conditioning is not the default configuration".to_string());
            }
            let m = FusionModel::new(&cfg.fusion, &cfg.acoustic, &cfg.linguistic, vocab_size, store, seed)?;
            if !cfg.fusion.fine_tune_acoustic {
                store.freeze_prefix("acoustic.");
            }
            Model::Fusion(m)
        }
    };
    for n in &notes {
        log::warn!("{n}");
    }
    Ok((model, notes))
}

fn mean_rows<'g>(g: &'g Graph, rows: Vec<Var<'g>>) -> Result<Var<'g>> {
    let n = rows.len();
    if n == 1 {
        return Ok(rows[0]);
    }
    g.constant(Tensor::full(&[1, n], 1.0 / n as f64)).matmul(g.concat(&rows, 0)?)
}

impl Model {
    pub fn variant(&self) -> Variant {
        match self {
            Model::Acoustic(_) => Variant::Acoustic,
            Model::Linguistic(_) => Variant::Linguistic,
            Model::Fusion(_) => Variant::Fusion,
        }
    }

    fn acoustic_encoder(&self) -> Option<&AcousticEncoder> {
        match self {
            Model::Acoustic(a) => Some(a),
            Model::Fusion(f) => Some(f.acoustic()),
            Model::Linguistic(_) => None,
        }
    }

    fn tokens<'a>(&self, ex: &'a Example) -> Result<&'a TokenSequence> {
        ex.tokens.as_ref().ok_or_else(|| Error::invalid(format!("recording {} has no word tokens", ex.id)))
    }

    /// Caches the fusion acoustic matrix of each example when the acoustic
    /// encoder is frozen. Other variants are untouched.
    pub fn prepare(&self, store: &ParamStore, examples: &mut [Example]) -> Result<()> {
        if let Model::Fusion(f) = self {
            if f.config().fine_tune_acoustic {
                return Ok(());
            }
            for ex in examples.iter_mut().filter(|e| e.acoustic_matrix.is_none()) {
                ex.acoustic_matrix =
                    Some(build_matrix_from_segments(&ex.segments, &ex.demographics, f.acoustic(), store)?);
            }
        }
        Ok(())
    }

    fn fusion_matrix<'g>(&self, f: &FusionModel, g: &'g Graph, store: &ParamStore, ex: &Example) -> Result<Var<'g>> {
        if f.config().fine_tune_acoustic {
            return acoustic_matrix_var(g, store, f.acoustic(), &ex.segments, &ex.demographics);
        }
        match &ex.acoustic_matrix {
            Some(m) => Ok(g.constant(m.matrix().clone())),
            None => {
                let m = build_matrix_from_segments(&ex.segments, &ex.demographics, f.acoustic(), store)?;
                Ok(g.constant(m.matrix().clone()))
            }
        }
    }

    /// `[1×num_classes]` logits for one recording. Acoustic-only logits are
    /// the mean over segments.
    pub fn logits<'g>(&self, g: &'g Graph, store: &ParamStore, ex: &Example) -> Result<Var<'g>> {
        match self {
            Model::Acoustic(a) => a.forward_recording(g, store, &ex.segments, &ex.demographics),
            Model::Linguistic(l) => l.forward(g, store, self.tokens(ex)?, ex.chars.as_ref()),
            Model::Fusion(f) => {
                let m = self.fusion_matrix(f, g, store, ex)?;
                f.forward(g, store, m, self.tokens(ex)?, ex.chars.as_ref())
            }
        }
    }

    /// `[1×n]` embedding. Acoustic vectors are averaged over segments.
    pub fn embedding<'g>(&self, g: &'g Graph, store: &ParamStore, ex: &Example, which: Feature) -> Result<Var<'g>> {
        let unavailable =
            || Error::invalid(format!("feature {which:?} is not produced by the {} variant", self.variant()));
        match which {
            Feature::Xp | Feature::Xa => {
                let enc = self.acoustic_encoder().ok_or_else(unavailable)?;
                if ex.segments.is_empty() {
                    return Err(Error::invalid(format!("recording {} has no segments", ex.id)));
                }
                let rows = ex
                    .segments
                    .iter()
                    .map(|mel| {
                        let out = enc.forward(g, store, mel, &ex.demographics)?;
                        Ok(if which == Feature::Xp { out.pooled } else { out.features })
                    })
                    .collect::<Result<Vec<_>>>()?;
                mean_rows(g, rows)
            }
            Feature::Word => match self {
                Model::Acoustic(_) => Err(unavailable()),
                Model::Linguistic(l) => l.word_encoder().forward(g, store, self.tokens(ex)?),
                Model::Fusion(f) => f.word_encoder().forward(g, store, self.tokens(ex)?),
            },
            Feature::Fused => match self {
                Model::Acoustic(_) => Err(unavailable()),
                Model::Linguistic(l) => l.features(g, store, self.tokens(ex)?, ex.chars.as_ref()),
                Model::Fusion(f) => {
                    let m = self.fusion_matrix(f, g, store, ex)?;
                    f.features(g, store, m, self.tokens(ex)?, ex.chars.as_ref())
                }
            },
        }
    }
}

/// Overwrites every parameter in `store` from `ckpt`; each must be present
/// with the same shape.
pub fn restore_params(store: &mut ParamStore, ckpt: &Checkpoint) -> Result<()> {
    let mut problems = Vec::new();
    for (name, slot) in store.iter_mut() {
        match ckpt.get(name) {
            Some(t) if t.shape() == slot.shape() => *slot = t.clone(),
            Some(t) => problems.push(format!("`{name}` has shape {:?}, model expects {:?}", t.shape(), slot.shape())),
            None => problems.push(format!("`{name}` missing")),
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!(
            "checkpoint does not fit the model ({} problems, first: {})",
            problems.len(),
            problems[0]
        )))
    }
}
