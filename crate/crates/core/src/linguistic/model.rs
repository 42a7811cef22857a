use super::chars::{CharDictionary, CharMatrix};
use super::config::{LinguisticConfig, Pooling};
use super::vocab::TokenSequence;
use crate::acoustic::window::MASK_NEG;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Embedding, LayerNorm, Linear, Mlp, MultiHeadAttention};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

pub const WORD_PREFIX: &str = "linguistic.word";
pub const CHAR_PREFIX: &str = "linguistic.char";
pub const CLASSIFIER_PREFIX: &str = "linguistic.classifier";

/// conv → ReLU → conv → ReLU → global max-pool → linear, over a
/// channels-first `[C×L]` input. Convolutions keep the length.
#[derive(Debug, Clone)]
pub struct ConvBranch {
    conv1: Conv1d,
    conv2: Conv1d,
    fc: Linear,
    pub in_channels: usize,
    pub out_dim: usize,
}

impl ConvBranch {
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        prefix: &str,
        channels: [usize; 3],
        kernel: usize,
        out_dim: usize,
    ) -> Self {
        let pad = kernel / 2;
        Self {
            conv1: Conv1d::new(store, seed, &format!("{prefix}.conv1"), channels[0], channels[1], kernel, 1, pad),
            conv2: Conv1d::new(store, seed, &format!("{prefix}.conv2"), channels[1], channels[2], kernel, 1, pad),
            fc: Linear::new(store, seed, &format!("{prefix}.fc"), channels[2], out_dim, true),
            in_channels: channels[0],
            out_dim,
        }
    }

    /// `[C×L] → [1×out_dim]`
    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let s = x.shape();
        if s.len() != 2 || s[0] != self.in_channels {
            return Err(Error::shape(format!("conv branch input {s:?}, expected [{}, L]", self.in_channels)));
        }
        let h = self.conv1.forward(g, store, x)?.relu()?;
        let h = self.conv2.forward(g, store, h)?.relu()?;
        let pooled = h.max_last()?;
        let c = pooled.shape()[0];
        self.fc.forward(g, store, pooled.reshape(&[1, c])?)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    norm2: LayerNorm,
    mlp: Mlp,
}

/// Token + position embeddings followed by pre-norm transformer layers with
/// padding-masked self-attention.
#[derive(Debug, Clone)]
pub struct WordEncoder {
    tok: Embedding,
    pos: Embedding,
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
    pooling: Pooling,
    pub d_model: usize,
    pub max_len: usize,
}

impl WordEncoder {
    pub fn new(cfg: &LinguisticConfig, vocab_size: usize, store: &mut ParamStore, seed: u64) -> Result<Self> {
        let p = WORD_PREFIX;
        let layers = (0..cfg.word_layers)
            .map(|i| {
                let lp = format!("{p}.layers.{i}");
                Ok(EncoderLayer {
                    norm1: LayerNorm::new(store, seed, &format!("{lp}.norm1"), cfg.d_model),
                    attn: MultiHeadAttention::new(store, seed, &format!("{lp}.attn"), cfg.d_model, cfg.heads)?,
                    norm2: LayerNorm::new(store, seed, &format!("{lp}.norm2"), cfg.d_model),
                    mlp: Mlp::new(store, seed, &format!("{lp}.mlp"), cfg.d_model, cfg.d_model * cfg.ffn_mult),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tok: Embedding::new(store, seed, &format!("{p}.tok_emb"), vocab_size, cfg.d_model),
            pos: Embedding::new(store, seed, &format!("{p}.pos_emb"), cfg.word_len_max, cfg.d_model),
            layers,
            norm: LayerNorm::new(store, seed, &format!("{p}.norm"), cfg.d_model),
            pooling: cfg.pooling,
            d_model: cfg.d_model,
            max_len: cfg.word_len_max,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.tok.rows
    }

    /// Pooled last-layer feature `[1×d_model]`.
    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, seq: &TokenSequence) -> Result<Var<'g>> {
        let n = seq.len();
        if n == 0 || n > self.max_len {
            return Err(Error::invalid(format!("token sequence of length {n}, limit {}", self.max_len)));
        }
        if seq.attention.len() != n {
            return Err(Error::invalid("attention flags do not match token ids"));
        }
        if let Some(bad) = seq.ids.iter().find(|&&id| id >= self.tok.rows) {
            return Err(Error::invalid(format!("token id {bad} out of range for vocabulary of {}", self.tok.rows)));
        }
        let real = seq.attention.iter().filter(|&&a| a).count();
        if real == 0 {
            return Err(Error::invalid("token sequence has no attended positions"));
        }
        let positions: Vec<usize> = (0..n).collect();
        let mut x = self.tok.lookup(g, store, &seq.ids)?.add(self.pos.lookup(g, store, &positions)?)?.reshape(&[
            1,
            n,
            self.d_model,
        ])?;
        let key_mask =
            g.constant(Tensor::new(&[n], seq.attention.iter().map(|&a| if a { 0.0 } else { MASK_NEG }).collect())?);
        for layer in &self.layers {
            let a = layer.attn.forward(g, store, layer.norm1.forward(g, store, x)?, &[key_mask])?;
            x = x.add(a.out)?;
            let m = layer.mlp.forward(g, store, layer.norm2.forward(g, store, x)?)?;
            x = x.add(m)?;
        }
        let h = self.norm.forward(g, store, x)?.reshape(&[n, self.d_model])?;
        match self.pooling {
            Pooling::Cls => h.narrow(0, 0, 1),
            Pooling::Mean => {
                let w = seq.attention.iter().map(|&a| if a { 1.0 / real as f64 } else { 0.0 }).collect();
                g.constant(Tensor::new(&[1, n], w)?).matmul(h)
            }
        }
    }
}

/// Word encoder plus optional character branch, concatenated into a linear
/// classifier.
#[derive(Debug, Clone)]
pub struct LinguisticModel {
    cfg: LinguisticConfig,
    word: WordEncoder,
    chars: Option<ConvBranch>,
    classifier: Linear,
}

pub fn char_branch(cfg: &LinguisticConfig, store: &mut ParamStore, seed: u64) -> ConvBranch {
    let c = &cfg.char_channels;
    ConvBranch::new(store, seed, CHAR_PREFIX, [c[0], c[1], c[2]], cfg.char_kernel, cfg.char_feature_dim)
}

impl LinguisticModel {
    pub fn new(cfg: &LinguisticConfig, vocab_size: usize, store: &mut ParamStore, seed: u64) -> Result<Self> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let word = WordEncoder::new(cfg, vocab_size, store, seed)?;
        let chars = cfg.use_char_branch.then(|| char_branch(cfg, store, seed));
        let width = cfg.d_model + chars.as_ref().map_or(0, |c| c.out_dim);
        let classifier = Linear::new(store, seed, CLASSIFIER_PREFIX, width, cfg.num_classes, true);
        Ok(Self { cfg: cfg.clone(), word, chars, classifier })
    }

    pub fn config(&self) -> &LinguisticConfig {
        &self.cfg
    }

    pub fn word_encoder(&self) -> &WordEncoder {
        &self.word
    }

    pub fn char_feature<'g>(&self, g: &'g Graph, store: &ParamStore, m: &CharMatrix) -> Result<Var<'g>> {
        let branch = self.chars.as_ref().ok_or_else(|| Error::invalid("character branch is disabled"))?;
        if m.matrix().shape() != [self.cfg.char_len_max, CharDictionary::SIZE] {
            return Err(Error::shape(format!(
                "char matrix {:?}, expected [{}, {}]",
                m.matrix().shape(),
                self.cfg.char_len_max,
                CharDictionary::SIZE
            )));
        }
        let x = g.constant(m.matrix().clone()).transpose()?;
        branch.forward(g, store, x)
    }

    /// The concatenated feature fed to the classifier.
    pub fn features<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        tokens: &TokenSequence,
        chars: Option<&CharMatrix>,
    ) -> Result<Var<'g>> {
        let w = self.word.forward(g, store, tokens)?;
        match &self.chars {
            None => Ok(w),
            Some(_) => {
                let m = chars.ok_or_else(|| Error::invalid("character branch needs a char matrix"))?;
                let c = self.char_feature(g, store, m)?;
                g.concat(&[w, c], 1)
            }
        }
    }

    /// `[1×num_classes]` logits.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        tokens: &TokenSequence,
        chars: Option<&CharMatrix>,
    ) -> Result<Var<'g>> {
        let f = self.features(g, store, tokens, chars)?;
        self.classifier.forward(g, store, f)
    }
}
