mod common;

use std::f64::consts::TAU;

use swinbert_core::acoustic::{AcousticConfig, AcousticEncoder, DemographicInfo, Gender};
use swinbert_core::dsp::{FrontendConfig, LogMelFrontend, Waveform};
use swinbert_core::fusion::{
    build_acoustic_matrix, cache_matrix, cached_matrix, segment_bounds, segment_feature, AcousticFeatureMatrix,
    FusionConfig, FusionModel, MATRIX_ROWS,
};
use swinbert_core::linguistic::{tokenize, LinguisticConfig, Vocabulary};
use swinbert_core::model::{fusion_mode_select, ModelConfig, Variant};
use swinbert_core::tensor::{Checkpoint, Graph, ParamStore, Tensor};

use common::bits;

fn chirp(seconds: f64) -> Waveform {
    let n = (seconds * 16000.0) as usize;
    Waveform::new(
        (0..n)
            .map(|i| {
                let t = i as f64 / 16000.0;
                0.3 * (TAU * (200.0 + 40.0 * t) * t).sin()
            })
            .collect(),
        16000,
    )
    .unwrap()
}

fn tiny_acoustic() -> AcousticConfig {
    AcousticConfig { feature_dim: 16, ..AcousticConfig::desk() }
}

struct Rig {
    enc: AcousticEncoder,
    store: ParamStore,
    fe: LogMelFrontend,
}

fn rig() -> Rig {
    let mut store = ParamStore::new();
    let enc = AcousticEncoder::new(&tiny_acoustic(), &mut store, 3).unwrap();
    Rig { enc, store, fe: LogMelFrontend::new(&FrontendConfig::default()).unwrap() }
}

#[test]
fn twenty_five_seconds_gives_three_rows_matching_standalone_segments() {
    let r = rig();
    let cfg = FusionConfig::default();
    let w = chirp(25.0);
    let demo = DemographicInfo { age: Some(68), gender: Some(Gender::M) };
    let m = build_acoustic_matrix(&w, &demo, &r.enc, &r.store, &r.fe, &cfg).unwrap();
    assert_eq!(m.true_rows, 3);
    assert_eq!(m.matrix().shape(), &[MATRIX_ROWS, 16]);
    assert!(m.matrix().data()[3 * 16..].iter().all(|&v| v == 0.0));
    for (k, (s, e)) in segment_bounds(w.len(), 16000, &cfg).unwrap().into_iter().enumerate() {
        let mel = r.fe.log_mel(&w.slice(s, e).unwrap()).unwrap();
        let row = segment_feature(&r.enc, &r.store, &mel, &demo).unwrap();
        assert_eq!(bits(m.matrix().row(k)), bits(&row), "row {k}");
    }
}

#[test]
fn long_recordings_are_cut_at_thirty_two_rows() {
    let r = rig();
    let cfg = FusionConfig::default();
    let w = chirp(400.0);
    assert_eq!(segment_bounds(w.len(), 16000, &cfg).unwrap().len(), 40);
    let m = build_acoustic_matrix(&w, &DemographicInfo::unknown(), &r.enc, &r.store, &r.fe, &cfg).unwrap();
    assert_eq!(m.true_rows, 32);
    assert!(m.matrix().row(31).iter().any(|&v| v != 0.0));
    assert!(segment_bounds(15999, 16000, &cfg).is_err());
}

#[test]
fn concatenated_recording_starts_with_the_first_recordings_rows() {
    let r = rig();
    let cfg = FusionConfig { segment_s: 1.0, ..FusionConfig::default() };
    let a = chirp(3.0);
    let mut joined = a.samples().to_vec();
    joined.extend(chirp(2.0).samples().iter().map(|s| -s));
    let b = Waveform::new(joined, 16000).unwrap();
    let demo = DemographicInfo::unknown();
    let ma = build_acoustic_matrix(&a, &demo, &r.enc, &r.store, &r.fe, &cfg).unwrap();
    let mb = build_acoustic_matrix(&b, &demo, &r.enc, &r.store, &r.fe, &cfg).unwrap();
    assert_eq!((ma.true_rows, mb.true_rows), (3, 5));
    assert_eq!(bits(&ma.matrix().data()[..3 * 16]), bits(&mb.matrix().data()[..3 * 16]));
}

#[test]
fn padding_is_idempotent_and_cacheable() {
    let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 + 1.0; 4]).collect();
    let m = AcousticFeatureMatrix::from_rows(&rows, 4).unwrap();
    let again = AcousticFeatureMatrix::from_matrix(m.matrix()).unwrap();
    assert_eq!(again, m);
    let long: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64; 4]).collect();
    let cut = AcousticFeatureMatrix::from_rows(&long, 4).unwrap();
    assert_eq!(cut.matrix().row(31), &[31.0; 4]);

    let mut ckpt = Checkpoint::new();
    cache_matrix(&mut ckpt, "ad_003", &m);
    assert!(ckpt.names().any(|n| n == "cache.ad_003.m_acoustic"));
    let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
    assert_eq!(cached_matrix(&back, "ad_003").unwrap(), Some(m));
    assert_eq!(cached_matrix(&back, "hc_000").unwrap(), None);
}

#[test]
fn zero_matrix_reduces_to_the_word_path() {
    let vocab = Vocabulary::build(["the boy took a cookie"]);
    let lc = LinguisticConfig { word_len_max: 16, ..LinguisticConfig::desk() };
    let fc = FusionConfig::desk();
    let mut store = ParamStore::new();
    let model = FusionModel::new(&fc, &tiny_acoustic(), &lc, vocab.len(), &mut store, 9).unwrap();
    let tokens = tokenize("the boy took it", &vocab, 16).unwrap();
    let g = Graph::new();
    let logits =
        model.forward(&g, &store, g.constant(Tensor::zeros(&[MATRIX_ROWS, 16])), &tokens, None).unwrap().value();
    let word = model.word_encoder().forward(&g, &store, &tokens).unwrap().value();
    let w = store.get("fusion.classifier.weight").unwrap();
    let b = store.get("fusion.classifier.bias").unwrap();
    let fc_bias = store.get("fusion.acoustic_branch.fc.bias").unwrap();
    assert_eq!(w.shape(), &[fc.summary_dim + lc.d_model, 2]);
    for c in 0..2 {
        let mut want = b.data()[c];
        for i in 0..fc.summary_dim {
            want += fc_bias.data()[i] * w.data()[i * 2 + c];
        }
        for j in 0..lc.d_model {
            want += word.data()[j] * w.data()[(fc.summary_dim + j) * 2 + c];
        }
        assert!((logits.data()[c] - want).abs() < 1e-12);
    }
    assert!(model.forward(&g, &store, g.constant(Tensor::zeros(&[31, 16])), &tokens, None).is_err());
}

#[test]
fn default_fusion_has_demographics_and_no_char_branch() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.variant, Variant::Fusion);
    assert!(cfg.acoustic.use_demographics);
    assert!(!cfg.fusion.use_char_branch);
    assert_eq!(cfg.fusion.segment_s, 10.0);
    assert_eq!(cfg.fusion.conv_channels, vec![32, 16, 16]);
}

#[test]
fn acoustic_only_checkpoint_has_no_text_modules() {
    let mut store = ParamStore::new();
    let (_, notes) = fusion_mode_select(&ModelConfig::desk(Variant::Acoustic), 20, &mut store, 0).unwrap();
    assert!(notes.is_empty());
    assert!(store.names().all(|n| n.starts_with("acoustic.")));
}

#[test]
fn toggles_change_parameter_counts_by_their_submodules() {
    let count = |cfg: &ModelConfig| {
        let mut s = ParamStore::new();
        let (_, notes) = fusion_mode_select(cfg, 30, &mut s, 0).unwrap();
        (s, notes)
    };
    let base = ModelConfig::desk(Variant::Fusion);
    let (a, notes) = count(&base);
    assert!(notes.is_empty());
    assert!(!a.is_trainable("acoustic.head.fc.weight"));
    assert!(a.is_trainable("fusion.classifier.weight"));

    let mut with_chars = base.clone();
    with_chars.set_char_branch(true);
    let (b, notes) = count(&with_chars);
    assert_eq!(notes.len(), 1);
    let d = base.linguistic.char_feature_dim;
    assert_eq!(b.num_scalars() - a.num_scalars(), b.num_scalars_with_prefix("linguistic.char.") + d * 2);

    let mut no_demo = base.clone();
    no_demo.acoustic.use_demographics = false;
    let (c, notes) = count(&no_demo);
    assert_eq!(notes.len(), 1);
    assert_eq!(a.num_scalars() - c.num_scalars(), (13 + 3) * base.acoustic.mel_bins);
    assert_eq!(a.num_scalars_with_prefix("acoustic.demographics."), (13 + 3) * base.acoustic.mel_bins);
}
