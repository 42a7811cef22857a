use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcousticConfig {
    /// Mel bins of the incoming spectrogram.
    pub mel_bins: usize,
    pub patch_size: usize,
    pub latent_dim: usize,
    pub stage_heads: Vec<usize>,
    pub stage_depths: Vec<usize>,
    pub window_size: usize,
    pub mlp_ratio: usize,
    /// Width of the feature vector taken after the first head layer.
    pub feature_dim: usize,
    pub use_relative_position_bias: bool,
    pub use_demographics: bool,
    pub num_classes: usize,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        Self {
            mel_bins: 64,
            patch_size: 4,
            latent_dim: 96,
            stage_heads: vec![4, 8, 16, 32],
            stage_depths: vec![2, 2, 2, 2],
            window_size: 8,
            mlp_ratio: 4,
            feature_dim: 1024,
            use_relative_position_bias: true,
            use_demographics: true,
            num_classes: 2,
        }
    }
}

impl AcousticConfig {
    /// Small configuration for tests and laptop-scale experiments.
    pub fn desk() -> Self {
        Self {
            latent_dim: 8,
            stage_heads: vec![2, 2, 4, 4],
            stage_depths: vec![1, 1, 1, 1],
            window_size: 2,
            mlp_ratio: 2,
            ..Self::default()
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stage_depths.len()
    }

    pub fn shift(&self) -> usize {
        self.window_size / 2
    }

    /// Channels of stage `s` (0-based): `2^s · D`.
    pub fn stage_channels(&self, s: usize) -> usize {
        self.latent_dim << s
    }

    /// Both spectrogram axes are zero-padded to a multiple of this, which
    /// makes every patch merge and window partition exact.
    pub fn pad_multiple(&self) -> usize {
        self.patch_size * (1 << (self.num_stages().saturating_sub(1))) * self.window_size
    }

    /// Width of the pooled vector.
    pub fn pooled_dim(&self) -> usize {
        self.stage_channels(self.num_stages() - 1)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let n = self.stage_depths.len();
        if n == 0 || n > 4 {
            errs.push(format!("acoustic: need 1..=4 stages, got {n}"));
        }
        if self.stage_heads.len() != n {
            errs.push(format!("acoustic: {} stage_heads for {n} stage_depths", self.stage_heads.len()));
        }
        if self.window_size == 0 || self.window_size % 2 != 0 {
            errs.push(format!("acoustic: window_size {} must be even and positive", self.window_size));
        }
        if self.patch_size == 0 || self.latent_dim == 0 || self.mel_bins == 0 {
            errs.push("acoustic: patch_size, latent_dim and mel_bins must be positive".into());
        }
        if self.stage_depths.iter().any(|&d| d == 0) {
            errs.push("acoustic: every stage needs at least one block".into());
        }
        for (s, &h) in self.stage_heads.iter().enumerate() {
            let c = self.stage_channels(s);
            if h == 0 || c % h != 0 {
                errs.push(format!("acoustic: stage {s} has {c} channels, not divisible by {h} heads"));
            }
        }
        if self.feature_dim == 0 || self.num_classes < 2 || self.mlp_ratio == 0 {
            errs.push("acoustic: feature_dim, mlp_ratio must be positive and num_classes >= 2".into());
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
    Unknown,
}

impl Gender {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            Gender::M => 0,
            Gender::F => 1,
            Gender::Unknown => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DemographicInfo {
    pub age: Option<u32>,
    pub gender: Option<Gender>,
}

impl DemographicInfo {
    /// Decade buckets 0..=11 plus one bucket for unknown age.
    pub const AGE_BUCKETS: usize = 13;
    pub const UNKNOWN_AGE_BUCKET: usize = 12;

    pub fn unknown() -> Self {
        Self::default()
    }

    pub fn age_bucket(&self) -> usize {
        match self.age {
            Some(a) => (a / 10).min(11) as usize,
            None => Self::UNKNOWN_AGE_BUCKET,
        }
    }

    pub fn gender_index(&self) -> usize {
        self.gender.unwrap_or(Gender::Unknown).index()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_desk_validate() {
        assert!(AcousticConfig::default().validate().is_empty());
        assert!(AcousticConfig::desk().validate().is_empty());
        assert_eq!(AcousticConfig::default().pooled_dim(), 768);
    }

    #[test]
    fn validation_lists_every_problem() {
        let cfg = AcousticConfig { window_size: 3, stage_heads: vec![5, 8, 16], ..AcousticConfig::default() };
        let errs = cfg.validate();
        assert!(errs.len() >= 3, "{errs:?}");
    }

    #[test]
    fn age_buckets() {
        let d = |age| DemographicInfo { age, gender: None };
        assert_eq!(d(Some(0)).age_bucket(), 0);
        assert_eq!(d(Some(67)).age_bucket(), 6);
        assert_eq!(d(Some(119)).age_bucket(), 11);
        assert_eq!(d(Some(200)).age_bucket(), 11);
        assert_eq!(d(None).age_bucket(), 12);
        assert_eq!(DemographicInfo::unknown().gender_index(), 2);
    }
}
