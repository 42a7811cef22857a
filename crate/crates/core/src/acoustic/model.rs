use super::block::{effective_shift, PatchMerge, SwinBlock};
use super::config::{AcousticConfig, DemographicInfo, Gender};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{Embedding, Linear};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

pub const PREFIX: &str = "acoustic";
pub const DEMOGRAPHICS_PREFIX: &str = "acoustic.demographics.";

#[derive(Debug, Clone)]
struct Stage {
    merge: Option<PatchMerge>,
    blocks: Vec<SwinBlock>,
    /// Index of the first block counted across all stages; odd blocks shift.
    first_block: usize,
}

/// Hierarchical shifted-window encoder over a log-mel spectrogram with a
/// two-layer classification head.
#[derive(Debug, Clone)]
pub struct AcousticEncoder {
    cfg: AcousticConfig,
    demographics: Option<(Embedding, Embedding)>,
    patch_embed: Linear,
    stages: Vec<Stage>,
    head_fc: Linear,
    head_out: Linear,
}

pub struct AcousticOutput<'g> {
    /// `[1×num_classes]`
    pub logits: Var<'g>,
    /// `[1×feature_dim]`, the vector stacked into fusion matrices.
    pub features: Var<'g>,
    /// `[1×pooled_dim]`, the mean-pooled final grid.
    pub pooled: Var<'g>,
    /// `[H, W′, C]` after patch embedding and after each stage.
    pub grid_shapes: Vec<Vec<usize>>,
}

impl AcousticEncoder {
    pub fn new(cfg: &AcousticConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let demographics = cfg.use_demographics.then(|| {
            (
                Embedding::new(store, seed, "acoustic.demographics.age", DemographicInfo::AGE_BUCKETS, cfg.mel_bins),
                Embedding::new(store, seed, "acoustic.demographics.gender", Gender::COUNT, cfg.mel_bins),
            )
        });
        let p = cfg.patch_size;
        let patch_embed = Linear::new(store, seed, "acoustic.patch_embed", p * p, cfg.latent_dim, true);
        let mut stages = Vec::with_capacity(cfg.num_stages());
        let mut block_index = 0;
        for (s, (&depth, &heads)) in cfg.stage_depths.iter().zip(&cfg.stage_heads).enumerate() {
            let dim = cfg.stage_channels(s);
            let merge = (s > 0).then(|| {
                PatchMerge::new(store, seed, &format!("acoustic.stages.{s}.merge"), cfg.stage_channels(s - 1))
            });
            let first_block = block_index;
            let blocks = (0..depth)
                .map(|b| {
                    block_index += 1;
                    SwinBlock::new(
                        store,
                        seed,
                        &format!("acoustic.stages.{s}.blocks.{b}"),
                        dim,
                        heads,
                        cfg.window_size,
                        cfg.mlp_ratio,
                        cfg.use_relative_position_bias,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage { merge, blocks, first_block });
        }
        let head_fc = Linear::new(store, seed, "acoustic.head.fc", cfg.pooled_dim(), cfg.feature_dim, true);
        let head_out = Linear::new(store, seed, "acoustic.head.out", cfg.feature_dim, cfg.num_classes, true);
        Ok(Self { cfg: cfg.clone(), demographics, patch_embed, stages, head_fc, head_out })
    }

    pub fn config(&self) -> &AcousticConfig {
        &self.cfg
    }

    /// Prepends the age-bucket and gender embeddings as two extra frames
    /// (`T′ = T + 2`); identity when conditioning is disabled.
    pub fn condition<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        x: Var<'g>,
        demo: &DemographicInfo,
    ) -> Result<Var<'g>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.cfg.mel_bins {
            return Err(Error::shape(format!("spectrogram {shape:?}, expected [T, {}]", self.cfg.mel_bins)));
        }
        match &self.demographics {
            None => Ok(x),
            Some((age, gender)) => {
                let a = age.lookup(g, store, &[demo.age_bucket()])?;
                let s = gender.lookup(g, store, &[demo.gender_index()])?;
                g.concat(&[a, s, x], 0)
            }
        }
    }

    /// Zero-pads `[T×F]` to multiples of [`AcousticConfig::pad_multiple`],
    /// cuts `P×P` patches and projects each to `D` channels.
    pub fn patch_embed<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        let [t, f] = shape[..] else {
            return Err(Error::shape(format!("patch_embed expects [T, F], got {shape:?}")));
        };
        let m = self.cfg.pad_multiple();
        let (tp, fp) = (t.div_ceil(m) * m, f.div_ceil(m) * m);
        let p = self.cfg.patch_size;
        let patches = x
            .pad(&[(0, tp - t), (0, fp - f)])?
            .reshape(&[tp / p, p, fp / p, p])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[tp / p, fp / p, p * p])?;
        self.patch_embed.forward(g, store, patches)
    }

    /// Runs every stage; returns the final grid and the grid shape after
    /// each stage.
    pub fn forward_stages<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        grid: Var<'g>,
    ) -> Result<(Var<'g>, Vec<Vec<usize>>)> {
        let mut x = grid;
        let mut shapes = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            if let Some(merge) = &stage.merge {
                x = merge.forward(g, store, x)?;
            }
            for (b, block) in stage.blocks.iter().enumerate() {
                let s = x.shape();
                let want = if (stage.first_block + b) % 2 == 1 { self.cfg.shift() } else { 0 };
                let shift = effective_shift(s[0], s[1], self.cfg.window_size, want);
                x = block.forward(g, store, x, shift)?.out;
            }
            shapes.push(x.shape());
        }
        Ok((x, shapes))
    }

    /// Mean-pools the grid and applies `linear → GELU → linear`.
    pub fn head<'g>(&self, g: &'g Graph, store: &ParamStore, grid: Var<'g>) -> Result<(Var<'g>, Var<'g>, Var<'g>)> {
        let s = grid.shape();
        let tokens = s[0] * s[1];
        let avg = g.constant(Tensor::full(&[1, tokens], 1.0 / tokens as f64));
        let pooled = avg.matmul(grid.reshape(&[tokens, s[2]])?)?;
        let features = self.head_fc.forward(g, store, pooled)?.gelu()?;
        let logits = self.head_out.forward(g, store, features)?;
        Ok((pooled, features, logits))
    }

    pub fn forward_var<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        spectrogram: Var<'g>,
        demo: &DemographicInfo,
    ) -> Result<AcousticOutput<'g>> {
        let x = self.condition(g, store, spectrogram, demo)?;
        let grid = self.patch_embed(g, store, x)?;
        let mut grid_shapes = vec![grid.shape()];
        let (out, shapes) = self.forward_stages(g, store, grid)?;
        grid_shapes.extend(shapes);
        let (pooled, features, logits) = self.head(g, store, out)?;
        Ok(AcousticOutput { logits, features, pooled, grid_shapes })
    }

    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        mel: &MelSpectrogram,
        demo: &DemographicInfo,
    ) -> Result<AcousticOutput<'g>> {
        self.forward_var(g, store, g.constant(mel.frames().clone()), demo)
    }

    /// Recording-level logits: the mean of per-segment logits.
    pub fn forward_recording<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        segments: &[MelSpectrogram],
        demo: &DemographicInfo,
    ) -> Result<Var<'g>> {
        if segments.is_empty() {
            return Err(Error::invalid("recording has no segments"));
        }
        let mut acc: Option<Var<'g>> = None;
        for mel in segments {
            let l = self.forward(g, store, mel, demo)?.logits;
            acc = Some(match acc {
                None => l,
                Some(a) => a.add(l)?,
            });
        }
        acc.unwrap().scale(1.0 / segments.len() as f64)
    }
}
