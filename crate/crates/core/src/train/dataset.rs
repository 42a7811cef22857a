use crate::data::{ManifestRow, RecordingManifest};
use crate::dsp::LogMelFrontend;
use crate::error::Result;
use crate::fusion::segment_spectrograms;
use crate::linguistic::{char_encode, tokenize, CharDictionary, Vocabulary};
use crate::model::{Example, ModelConfig};

/// Vocabulary over the word transcripts of `rows`.
pub fn build_vocabulary<'a>(
    manifest: &RecordingManifest,
    rows: impl IntoIterator<Item = &'a ManifestRow>,
) -> Result<Vocabulary> {
    let texts = rows.into_iter().map(|r| manifest.word_text(r)).collect::<Result<Vec<_>>>()?;
    Ok(Vocabulary::build(texts.iter().map(String::as_str)))
}

/// Loads and featurises each row with only the inputs `cfg.variant` uses.
/// `vocab` is required for text variants.
pub fn build_examples<'a>(
    manifest: &RecordingManifest,
    rows: impl IntoIterator<Item = &'a ManifestRow>,
    cfg: &ModelConfig,
    vocab: Option<&Vocabulary>,
) -> Result<Vec<Example>> {
    let frontend = cfg.variant.uses_audio().then(|| LogMelFrontend::new(&cfg.frontend)).transpose()?;
    let dict = CharDictionary;
    rows.into_iter()
        .map(|row| {
            let segments = match &frontend {
                Some(f) => segment_spectrograms(&manifest.waveform(row)?, f, &cfg.fusion)?,
                None => Vec::new(),
            };
            let tokens = match (cfg.variant.uses_text(), vocab) {
                (true, Some(v)) => Some(tokenize(&manifest.word_text(row)?, v, cfg.linguistic.word_len_max)?),
                (true, None) => return Err(crate::Error::invalid("text variants need a vocabulary")),
                (false, _) => None,
            };
            let chars = if cfg.char_branch_enabled() {
                Some(char_encode(manifest.char_text(row)?.trim(), &dict, cfg.linguistic.char_len_max))
            } else {
                None
            };
            Ok(Example {
                id: row.id.clone(),
                label: row.label.index(),
                demographics: row.demographics(),
                segments,
                tokens,
                chars,
                acoustic_matrix: None,
            })
        })
        .collect()
}
