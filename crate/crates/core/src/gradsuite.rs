//! Finite-difference gradient checks of every trainable module at small
//! sizes. Each check perturbs parameters off their initial values (so zero
//! biases and unit gains do not hide errors) and differentiates a random
//! linear functional of the module output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acoustic::{AcousticConfig, AcousticEncoder, DemographicInfo, Gender, PatchMerge, SwinBlock};
use crate::dsp::MelSpectrogram;
use crate::error::Result;
use crate::fusion::{FusionConfig, FusionModel, MATRIX_ROWS};
use crate::linguistic::{
    char_encode, CharDictionary, ConvBranch, LinguisticConfig, LinguisticModel, TokenSequence, WordEncoder,
};
use crate::tensor::{finite_diff_gradcheck, param_gradcheck, ParamStore, Tensor, Var};

pub const MODULES: [&str; 7] = [
    "swmha_block",
    "patch_merge",
    "acoustic_forward",
    "char_branch_forward",
    "word_encoder_forward",
    "linguistic_forward",
    "fusion_forward",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub module: &'static str,
    /// Worst relative error over parameters and (where checked) the input.
    pub max_rel_err: f64,
    pub worst: String,
    pub worst_values: (f64, f64),
    pub coords_checked: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub h: f64,
    /// Sampled coordinates per parameter tensor; `None` checks all.
    pub coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { h: 1e-5, coords_per_param: Some(8), seed: 0 }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("valid shape")
}

fn perturb(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for (_, t) in store.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-scale..scale));
    }
}

/// `Σ out ⊙ w / √n` for a fixed random `w`, keeping the value O(1).
fn probe<'g>(out: Var<'g>, w: &Tensor) -> Result<Var<'g>> {
    let n = w.numel() as f64;
    out.mul(out.graph().constant(w.clone()))?.sum()?.scale(1.0 / n.sqrt())
}

fn entry(module: &'static str, report: crate::tensor::GradcheckReport, input_err: Option<f64>) -> SuiteEntry {
    let mut e = SuiteEntry {
        module,
        max_rel_err: report.max_rel_err,
        worst: report.worst,
        worst_values: report.worst_values,
        coords_checked: report.coords_checked,
    };
    if let Some(err) = input_err {
        if err > e.max_rel_err {
            e.max_rel_err = err;
            e.worst = "input".into();
            e.worst_values = (f64::NAN, f64::NAN);
        }
    }
    e
}

pub fn check_swmha_block(cfg: &SuiteConfig) -> Result<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let block = SwinBlock::new(&mut store, cfg.seed, "block", 8, 2, 2, 2, true)?;
    perturb(&mut store, &mut rng, 0.1);
    let x = random_tensor(&mut rng, &[4, 4, 8], 1.0);
    let w = random_tensor(&mut rng, &[4, 4, 8], 1.0);
    let report = param_gradcheck(
        |g, s| probe(block.forward(g, s, g.constant(x.clone()), 1)?.out, &w),
        &store,
        cfg.h,
        cfg.coords_per_param,
        cfg.seed,
    )?;
    let input = finite_diff_gradcheck(|g, xv| probe(block.forward(g, &store, xv, 1)?.out, &w), &x, cfg.h)?;
    Ok(entry("swmha_block", report, Some(input)))
}

pub fn check_patch_merge(cfg: &SuiteConfig) -> Result<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let merge = PatchMerge::new(&mut store, cfg.seed, "merge", 4);
    perturb(&mut store, &mut rng, 0.1);
    let x = random_tensor(&mut rng, &[4, 4, 4], 1.0);
    let w = random_tensor(&mut rng, &[2, 2, 8], 1.0);
    let report = param_gradcheck(
        |g, s| probe(merge.forward(g, s, g.constant(x.clone()))?, &w),
        &store,
        cfg.h,
        cfg.coords_per_param,
        cfg.seed,
    )?;
    let input = finite_diff_gradcheck(|g, xv| probe(merge.forward(g, &store, xv)?, &w), &x, cfg.h)?;
    Ok(entry("patch_merge", report, Some(input)))
}

/// Desk acoustic encoder on a 16×16 spectrogram with demographics.
pub fn toy_acoustic_config() -> AcousticConfig {
    AcousticConfig { mel_bins: 16, feature_dim: 16, ..AcousticConfig::desk() }
}

pub fn check_acoustic_forward(cfg: &SuiteConfig) -> Result<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let ac = toy_acoustic_config();
    let enc = AcousticEncoder::new(&ac, &mut store, cfg.seed)?;
    perturb(&mut store, &mut rng, 0.05);
    let mel = MelSpectrogram::new(random_tensor(&mut rng, &[16, 16], 2.0), 0.01)?;
    let demo = DemographicInfo { age: Some(71), gender: Some(Gender::F) };
    let w = random_tensor(&mut rng, &[1, ac.num_classes], 1.0);
    let report = param_gradcheck(
        |g, s| probe(enc.forward(g, s, &mel, &demo)?.logits, &w),
        &store,
        cfg.h,
        cfg.coords_per_param,
        cfg.seed,
    )?;
    let input =
        finite_diff_gradcheck(|g, xv| probe(enc.forward_var(g, &store, xv, &demo)?.logits, &w), mel.frames(), cfg.h)?;
    Ok(entry("acoustic_forward", report, Some(input)))
}

pub fn check_char_branch(cfg: &SuiteConfig) -> Result<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let branch = ConvBranch::new(&mut store, cfg.seed, "char", [CharDictionary::SIZE, 6, 5], 3, 4);
    perturb(&mut store, &mut rng, 0.1);
    let m = char_encode("THE|COOKIE|JAR", &CharDictionary, 20);
    let x = m.matrix().clone();
    let w = random_tensor(&mut rng, &[1, 4], 1.0);
    let report = param_gradcheck(
        |g, s| probe(branch.forward(g, s, g.constant(x.clone()).transpose()?)?, &w),
        &store,
        cfg.h,
        cfg.coords_per_param,
        cfg.seed,
    )?;
    Ok(entry("char_branch_forward", report, None))
}

fn toy_linguistic_config() -> LinguisticConfig {
    LinguisticConfig {
        char_channels: vec![CharDictionary::SIZE, 6, 5],
        char_feature_dim: 4,
        char_len_max: 20,
        word_layers: 2,
        d_model: 8,
        heads: 2,
        ffn_mult: 2,
        word_len_max: 12,
        ..LinguisticConfig::default()
    }
}

fn toy_tokens() -> TokenSequence {
    TokenSequence { ids: vec![2, 5, 9, 4, 1, 3], attention: vec![true; 6] }.padded(9)
}

pub fn check_word_encoder(cfg: &SuiteConfig) -> Result<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let enc = WordEncoder::new(&toy_linguistic_config(), 12, &mut store, cfg.seed)?;
    perturb(&mut store, &mut rng, 0.05);
    let tokens = toy_tokens();
    let w = random_tensor(&mut rng, &[1, 8], 1.0);
    let report =
        param_gradcheck(|g, s| probe(enc.forward(g, s, &tokens)?, &w), &store, cfg.h, cfg.coords_per_param, cfg.seed)?;
    Ok(entry("word_encoder_forward", report, None))
}

pub fn check_linguistic_forward(cfg: &SuiteConfig) -> Result<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let lc = toy_linguistic_config();
    let model = LinguisticModel::new(&lc, 12, &mut store, cfg.seed)?;
    perturb(&mut store, &mut rng, 0.05);
    let tokens = toy_tokens();
    let chars = char_encode("UM|THE|BOY", &CharDictionary, lc.char_len_max);
    let report = param_gradcheck(
        |g, s| model.forward(g, s, &tokens, Some(&chars))?.cross_entropy(&[1]),
        &store,
        cfg.h,
        cfg.coords_per_param,
        cfg.seed,
    )?;
    Ok(entry("linguistic_forward", report, None))
}

pub fn check_fusion_forward(cfg: &SuiteConfig) -> Result<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let ac = toy_acoustic_config();
    let fc = FusionConfig { summary_dim: 4, conv_channels: vec![MATRIX_ROWS, 6, 5], ..FusionConfig::default() };
    let model = FusionModel::new(&fc, &ac, &toy_linguistic_config(), 12, &mut store, cfg.seed)?;
    store.freeze_prefix("acoustic.");
    perturb(&mut store, &mut rng, 0.05);
    let mut m = random_tensor(&mut rng, &[MATRIX_ROWS, ac.feature_dim], 1.0);
    // zero-padded tail rows, as produced for short recordings
    m.data_mut()[20 * ac.feature_dim..].iter_mut().for_each(|v| *v = 0.0);
    let tokens = toy_tokens();
    let report = param_gradcheck(
        |g, s| model.forward(g, s, g.constant(m.clone()), &tokens, None)?.cross_entropy(&[0]),
        &store,
        cfg.h,
        cfg.coords_per_param,
        cfg.seed,
    )?;
    let input =
        finite_diff_gradcheck(|g, mv| model.forward(g, &store, mv, &tokens, None)?.cross_entropy(&[0]), &m, cfg.h)?;
    Ok(entry("fusion_forward", report, Some(input)))
}

pub fn run_module(name: &str, cfg: &SuiteConfig) -> Result<SuiteEntry> {
    match name {
        "swmha_block" => check_swmha_block(cfg),
        "patch_merge" => check_patch_merge(cfg),
        "acoustic_forward" => check_acoustic_forward(cfg),
        "char_branch_forward" => check_char_branch(cfg),
        "word_encoder_forward" => check_word_encoder(cfg),
        "linguistic_forward" => check_linguistic_forward(cfg),
        "fusion_forward" => check_fusion_forward(cfg),
        _ => Err(crate::Error::invalid(format!("unknown gradcheck module `{name}`"))),
    }
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<SuiteEntry>> {
    MODULES.iter().map(|m| run_module(m, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for e in run_suite(&SuiteConfig::default()).unwrap() {
            println!(
                "{} {:.3e} {} {:?} ({} coords)",
                e.module, e.max_rel_err, e.worst, e.worst_values, e.coords_checked
            );
            assert!(e.max_rel_err < 1e-4, "{e:?}");
        }
    }
}
