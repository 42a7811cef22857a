use serde::{Deserialize, Serialize};

use super::chars::CharDictionary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Mean over non-padding positions of the last layer.
    Mean,
    /// The `[CLS]` position of the last layer.
    Cls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinguisticConfig {
    /// Channel plan of the character branch, starting at the one-hot width.
    pub char_channels: Vec<usize>,
    pub char_kernel: usize,
    pub char_feature_dim: usize,
    pub char_len_max: usize,
    pub use_char_branch: bool,
    pub word_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub word_len_max: usize,
    pub pooling: Pooling,
    pub num_classes: usize,
}

impl Default for LinguisticConfig {
    fn default() -> Self {
        Self {
            char_channels: vec![CharDictionary::SIZE, 512, 128],
            char_kernel: 3,
            char_feature_dim: 128,
            char_len_max: 3000,
            use_char_branch: true,
            word_layers: 12,
            d_model: 768,
            heads: 12,
            ffn_mult: 4,
            word_len_max: 512,
            pooling: Pooling::Mean,
            num_classes: 2,
        }
    }
}

impl LinguisticConfig {
    pub fn desk() -> Self {
        Self {
            char_channels: vec![CharDictionary::SIZE, 16, 8],
            char_feature_dim: 16,
            word_layers: 2,
            d_model: 32,
            heads: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.char_channels.len() != 3 || self.char_channels[0] != CharDictionary::SIZE {
            errs.push(format!(
                "linguistic: char_channels must be [{}, c1, c2], got {:?}",
                CharDictionary::SIZE,
                self.char_channels
            ));
        }
        if self.char_channels.iter().any(|&c| c == 0) || self.char_kernel == 0 || self.char_feature_dim == 0 {
            errs.push("linguistic: char branch dimensions must be positive".into());
        }
        if self.char_len_max == 0 {
            errs.push("linguistic: char_len_max must be positive".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            errs.push(format!("linguistic: d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if self.word_layers == 0 || self.ffn_mult == 0 {
            errs.push("linguistic: word_layers and ffn_mult must be positive".into());
        }
        if self.word_len_max < 2 {
            errs.push("linguistic: word_len_max must be at least 2".into());
        }
        if self.num_classes < 2 {
            errs.push("linguistic: num_classes must be at least 2".into());
        }
        errs
    }
}
