//! Feature fusion: per-segment acoustic features stacked into a fixed
//! `32×feature_dim` matrix, summarised by a small CNN and joined with the
//! word-level feature.

use serde::{Deserialize, Serialize};

use crate::acoustic::{AcousticConfig, AcousticEncoder, DemographicInfo};
use crate::dsp::{LogMelFrontend, MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::linguistic::{char_branch, CharMatrix, ConvBranch, LinguisticConfig, TokenSequence, WordEncoder};
use crate::nn::Linear;
use crate::tensor::{Checkpoint, Graph, ParamStore, Tensor, Var};

/// Rows of the acoustic feature matrix.
pub const MATRIX_ROWS: usize = 32;
pub const BRANCH_PREFIX: &str = "fusion.acoustic_branch";
pub const CLASSIFIER_PREFIX: &str = "fusion.classifier";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Conv channel plan over the matrix rows.
    pub conv_channels: Vec<usize>,
    pub conv_kernel: usize,
    pub summary_dim: usize,
    pub segment_s: f64,
    pub overlap_s: f64,
    /// A trailing partial segment is kept when at least this long.
    pub min_segment_s: f64,
    pub use_char_branch: bool,
    /// Train the acoustic encoder jointly instead of using cached matrices.
    pub fine_tune_acoustic: bool,
    pub num_classes: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![MATRIX_ROWS, 16, 16],
            conv_kernel: 3,
            summary_dim: 128,
            segment_s: 10.0,
            overlap_s: 0.0,
            min_segment_s: 1.0,
            use_char_branch: false,
            fine_tune_acoustic: false,
            num_classes: 2,
        }
    }
}

impl FusionConfig {
    pub fn desk() -> Self {
        Self { summary_dim: 16, ..Self::default() }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.conv_channels.len() != 3 || self.conv_channels[0] != MATRIX_ROWS {
            errs.push(format!("fusion: conv_channels must be [{MATRIX_ROWS}, c1, c2], got {:?}", self.conv_channels));
        }
        if self.conv_channels.iter().any(|&c| c == 0) || self.conv_kernel == 0 || self.summary_dim == 0 {
            errs.push("fusion: conv and summary dimensions must be positive".into());
        }
        if !(self.segment_s > 0.0) || !(self.overlap_s >= 0.0) || self.overlap_s >= self.segment_s {
            errs.push(format!("fusion: need segment_s > overlap_s >= 0, got {} / {}", self.segment_s, self.overlap_s));
        }
        if !(self.min_segment_s > 0.0) || self.min_segment_s > self.segment_s {
            errs.push("fusion: min_segment_s must be in (0, segment_s]".into());
        }
        if self.num_classes < 2 {
            errs.push("fusion: num_classes must be at least 2".into());
        }
        errs
    }
}

/// `32×width` stack of per-segment acoustic features; rows past
/// `true_rows` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticFeatureMatrix {
    matrix: Tensor,
    pub true_rows: usize,
}

impl AcousticFeatureMatrix {
    /// Stacks rows in order, truncating to the first 32 and zero-padding
    /// the rest.
    pub fn from_rows(rows: &[Vec<f64>], width: usize) -> Result<Self> {
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::shape(format!("feature rows must all have width {width}")));
        }
        let true_rows = rows.len().min(MATRIX_ROWS);
        let mut data = vec![0.0; MATRIX_ROWS * width];
        for (i, r) in rows.iter().take(MATRIX_ROWS).enumerate() {
            data[i * width..(i + 1) * width].copy_from_slice(r);
        }
        Ok(Self { matrix: Tensor::new(&[MATRIX_ROWS, width], data)?, true_rows })
    }

    /// Pads or truncates an `r×width` matrix. A 32-row input is returned
    /// unchanged; `true_rows` then counts rows up to the last nonzero one.
    pub fn from_matrix(m: &Tensor) -> Result<Self> {
        if m.ndim() != 2 {
            return Err(Error::shape(format!("feature matrix must be 2-D, got {:?}", m.shape())));
        }
        let (r, w) = (m.shape()[0], m.shape()[1]);
        let rows: Vec<Vec<f64>> = (0..r).map(|i| m.row(i).to_vec()).collect();
        let mut out = Self::from_rows(&rows, w)?;
        out.true_rows =
            (0..out.true_rows).rev().find(|&i| out.matrix.row(i).iter().any(|&v| v != 0.0)).map_or(0, |i| i + 1);
        Ok(out)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn width(&self) -> usize {
        self.matrix.shape()[1]
    }
}

/// Sample ranges of consecutive segments. A trailing partial segment is
/// kept when it is at least `min_segment_s` long.
pub fn segment_bounds(num_samples: usize, sample_rate: u32, cfg: &FusionConfig) -> Result<Vec<(usize, usize)>> {
    let sr = sample_rate as f64;
    let seg = (cfg.segment_s * sr).round() as usize;
    let hop = ((cfg.segment_s - cfg.overlap_s) * sr).round() as usize;
    let min = (cfg.min_segment_s * sr).round() as usize;
    if seg == 0 || hop == 0 {
        return Err(Error::invalid("segment length rounds to zero samples"));
    }
    if num_samples < min {
        return Err(Error::invalid(format!(
            "recording of {:.3} s is shorter than the {} s minimum segment",
            num_samples as f64 / sr,
            cfg.min_segment_s
        )));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < num_samples {
        let end = (start + seg).min(num_samples);
        if end - start < min {
            break;
        }
        out.push((start, end));
        if end == num_samples {
            break;
        }
        start += hop;
    }
    Ok(out)
}

/// Log-mel spectrogram of each segment, in temporal order.
pub fn segment_spectrograms(
    w: &Waveform,
    frontend: &LogMelFrontend,
    cfg: &FusionConfig,
) -> Result<Vec<MelSpectrogram>> {
    segment_bounds(w.len(), w.sample_rate(), cfg)?.into_iter().map(|(s, e)| frontend.log_mel(&w.slice(s, e)?)).collect()
}

/// Acoustic feature of one segment, computed on its own graph.
pub fn segment_feature(
    encoder: &AcousticEncoder,
    store: &ParamStore,
    mel: &MelSpectrogram,
    demo: &DemographicInfo,
) -> Result<Vec<f64>> {
    let g = Graph::new();
    let out = encoder.forward(&g, store, mel, demo)?;
    Ok(out.features.value().into_data())
}

/// Stacks the acoustic features of the first 32 segment spectrograms.
pub fn build_matrix_from_segments(
    segments: &[MelSpectrogram],
    demo: &DemographicInfo,
    encoder: &AcousticEncoder,
    store: &ParamStore,
) -> Result<AcousticFeatureMatrix> {
    if segments.is_empty() {
        return Err(Error::invalid("no segments to build an acoustic matrix from"));
    }
    let rows = segments
        .iter()
        .take(MATRIX_ROWS)
        .map(|mel| segment_feature(encoder, store, mel, demo))
        .collect::<Result<Vec<_>>>()?;
    AcousticFeatureMatrix::from_rows(&rows, encoder.config().feature_dim)
}

/// Segments `w`, featurises each segment and stacks the features into a
/// `32×feature_dim` matrix. Segments past the 32nd are never computed.
pub fn build_acoustic_matrix(
    w: &Waveform,
    demo: &DemographicInfo,
    encoder: &AcousticEncoder,
    store: &ParamStore,
    frontend: &LogMelFrontend,
    cfg: &FusionConfig,
) -> Result<AcousticFeatureMatrix> {
    let bounds = segment_bounds(w.len(), w.sample_rate(), cfg)?;
    let segments = bounds
        .into_iter()
        .take(MATRIX_ROWS)
        .map(|(s, e)| frontend.log_mel(&w.slice(s, e)?))
        .collect::<Result<Vec<_>>>()?;
    build_matrix_from_segments(&segments, demo, encoder, store)
}

/// Differentiable version of [`build_matrix_from_segments`] on `g`.
pub fn acoustic_matrix_var<'g>(
    g: &'g Graph,
    store: &ParamStore,
    encoder: &AcousticEncoder,
    segments: &[MelSpectrogram],
    demo: &DemographicInfo,
) -> Result<Var<'g>> {
    if segments.is_empty() {
        return Err(Error::invalid("no segments to build an acoustic matrix from"));
    }
    let rows = segments
        .iter()
        .take(MATRIX_ROWS)
        .map(|mel| Ok(encoder.forward(g, store, mel, demo)?.features))
        .collect::<Result<Vec<_>>>()?;
    let m = g.concat(&rows, 0)?;
    m.pad(&[(0, MATRIX_ROWS - rows.len()), (0, 0)])
}

/// Checkpoint entry name of a cached acoustic matrix.
pub fn cache_name(recording_id: &str) -> String {
    format!("cache.{recording_id}.m_acoustic")
}

pub fn cache_matrix(ckpt: &mut Checkpoint, recording_id: &str, m: &AcousticFeatureMatrix) {
    ckpt.insert(&cache_name(recording_id), m.matrix().clone());
}

pub fn cached_matrix(ckpt: &Checkpoint, recording_id: &str) -> Result<Option<AcousticFeatureMatrix>> {
    ckpt.get(&cache_name(recording_id)).map(AcousticFeatureMatrix::from_matrix).transpose()
}

/// Acoustic encoder + word encoder (+ optional char branch) joined by a
/// conv summary of the acoustic feature matrix.
#[derive(Debug, Clone)]
pub struct FusionModel {
    cfg: FusionConfig,
    acoustic: AcousticEncoder,
    word: WordEncoder,
    chars: Option<ConvBranch>,
    branch: ConvBranch,
    classifier: Linear,
    char_len_max: usize,
}

impl FusionModel {
    pub fn new(
        cfg: &FusionConfig,
        acoustic_cfg: &AcousticConfig,
        linguistic_cfg: &LinguisticConfig,
        vocab_size: usize,
        store: &mut ParamStore,
        seed: u64,
    ) -> Result<Self> {
        let mut errs = cfg.validate();
        errs.extend(linguistic_cfg.validate());
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let acoustic = AcousticEncoder::new(acoustic_cfg, store, seed)?;
        let word = WordEncoder::new(linguistic_cfg, vocab_size, store, seed)?;
        let chars = cfg.use_char_branch.then(|| char_branch(linguistic_cfg, store, seed));
        let c = &cfg.conv_channels;
        let branch = ConvBranch::new(store, seed, BRANCH_PREFIX, [c[0], c[1], c[2]], cfg.conv_kernel, cfg.summary_dim);
        let width = cfg.summary_dim + word.d_model + chars.as_ref().map_or(0, |c| c.out_dim);
        let classifier = Linear::new(store, seed, CLASSIFIER_PREFIX, width, cfg.num_classes, true);
        Ok(Self {
            cfg: cfg.clone(),
            acoustic,
            word,
            chars,
            branch,
            classifier,
            char_len_max: linguistic_cfg.char_len_max,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.cfg
    }

    pub fn acoustic(&self) -> &AcousticEncoder {
        &self.acoustic
    }

    pub fn word_encoder(&self) -> &WordEncoder {
        &self.word
    }

    /// Conv summary `[1×summary_dim]` of a `32×width` matrix.
    pub fn acoustic_summary<'g>(&self, g: &'g Graph, store: &ParamStore, m: Var<'g>) -> Result<Var<'g>> {
        let s = m.shape();
        if s != [MATRIX_ROWS, self.acoustic.config().feature_dim] {
            return Err(Error::shape(format!(
                "acoustic matrix {s:?}, expected [{MATRIX_ROWS}, {}]",
                self.acoustic.config().feature_dim
            )));
        }
        self.branch.forward(g, store, m)
    }

    /// The concatenated `[acoustic summary, word feature, (char feature)]`.
    pub fn features<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        m: Var<'g>,
        tokens: &TokenSequence,
        chars: Option<&CharMatrix>,
    ) -> Result<Var<'g>> {
        let a = self.acoustic_summary(g, store, m)?;
        let w = self.word.forward(g, store, tokens)?;
        let mut parts = vec![a, w];
        if let Some(branch) = &self.chars {
            let cm = chars.ok_or_else(|| Error::invalid("character branch needs a char matrix"))?;
            if cm.matrix().shape()[0] != self.char_len_max {
                return Err(Error::shape(format!(
                    "char matrix of {} rows, expected {}",
                    cm.matrix().shape()[0],
                    self.char_len_max
                )));
            }
            parts.push(branch.forward(g, store, g.constant(cm.matrix().clone()).transpose()?)?);
        }
        g.concat(&parts, 1)
    }

    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        m: Var<'g>,
        tokens: &TokenSequence,
        chars: Option<&CharMatrix>,
    ) -> Result<Var<'g>> {
        let f = self.features(g, store, m, tokens, chars)?;
        self.classifier.forward(g, store, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(segment_s: f64) -> FusionConfig {
        FusionConfig { segment_s, ..FusionConfig::default() }
    }

    #[test]
    fn segmentation_arithmetic() {
        let b = segment_bounds(25 * 16000, 16000, &cfg(10.0)).unwrap();
        assert_eq!(b, vec![(0, 160_000), (160_000, 320_000), (320_000, 400_000)]);
        // a 0.5 s tail is dropped
        let b = segment_bounds(20 * 16000 + 8000, 16000, &cfg(10.0)).unwrap();
        assert_eq!(b.len(), 2);
        assert!(segment_bounds(15999, 16000, &cfg(10.0)).is_err());
        assert_eq!(segment_bounds(16000, 16000, &cfg(10.0)).unwrap(), vec![(0, 16000)]);
        let overlap = FusionConfig { overlap_s: 5.0, ..cfg(10.0) };
        let b = segment_bounds(20 * 16000, 16000, &overlap).unwrap();
        assert_eq!(b.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 80_000, 160_000]);
    }

    #[test]
    fn matrix_padding_and_truncation() {
        let rows: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64 + 1.0; 4]).collect();
        let m = AcousticFeatureMatrix::from_rows(&rows, 4).unwrap();
        assert_eq!(m.matrix().shape(), &[32, 4]);
        assert_eq!(m.true_rows, 3);
        assert!(m.matrix().data()[12..].iter().all(|&v| v == 0.0));

        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64; 2]).collect();
        let m = AcousticFeatureMatrix::from_rows(&rows, 2).unwrap();
        assert_eq!(m.true_rows, 32);
        assert_eq!(m.matrix().row(31), &[31.0, 31.0]);
    }

    #[test]
    fn rebuilding_a_full_matrix_is_a_no_op() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 + 0.5; 3]).collect();
        let m = AcousticFeatureMatrix::from_rows(&rows, 3).unwrap();
        let again = AcousticFeatureMatrix::from_matrix(m.matrix()).unwrap();
        assert_eq!(again, m);
    }
}
