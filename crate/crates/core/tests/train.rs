mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use swinbert_core::data::SynthSpec;
use swinbert_core::dsp::{FrontendConfig, LogMelFrontend, Waveform};
use swinbert_core::fusion::segment_feature;
use swinbert_core::model::{fusion_mode_select, Example, Feature, Model, ModelConfig, Variant};
use swinbert_core::tensor::{Checkpoint, ParamStore, Tensor};
use swinbert_core::train::{
    adam_step, evaluate, export_embeddings, fit, AdamConfig, AdamState, ConfusionMatrix, Metrics, TrainConfig,
};
use swinbert_core::Error;

use common::{bits, desk, synth_examples};

fn spec() -> SynthSpec {
    SynthSpec { n_per_class: 8, ..SynthSpec::default() }
}

fn build(cfg: &ModelConfig, vocab_len: usize) -> (Model, ParamStore) {
    let mut store = ParamStore::new();
    let (model, _) = fusion_mode_select(cfg, vocab_len, &mut store, 0).unwrap();
    (model, store)
}

#[test]
fn adam_matches_reference_on_a_parabola() {
    let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
    let mut store = ParamStore::new();
    store.insert("w", Tensor::scalar(1.0));
    let mut state = AdamState::default();
    let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=5 {
        let g = 2.0 * store.get("w").unwrap().item();
        let grads = BTreeMap::from([("w".to_string(), Tensor::scalar(g))]);
        adam_step(&mut store, &grads, &mut state, &cfg).unwrap();

        let gr = 2.0 * w;
        m = 0.95 * m + 0.05 * gr;
        v = 0.999 * v + 0.001 * gr * gr;
        let m_hat = m / (1.0 - 0.95f64.powi(t));
        let v_hat = v / (1.0 - 0.999f64.powi(t));
        w -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((store.get("w").unwrap().item() - w).abs() < 1e-12, "step {t}");
    }
}

#[test]
fn first_step_moves_by_lr_and_zero_grad_is_a_no_op() {
    let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
    for g in [3.0, -1e-3, 250.0] {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::scalar(0.5));
        let mut state = AdamState::default();
        adam_step(&mut store, &BTreeMap::from([("p".into(), Tensor::scalar(g))]), &mut state, &cfg).unwrap();
        let step = (store.get("p").unwrap().item() - 0.5).abs();
        assert!((step / 0.01 - 1.0).abs() < 1e-5, "grad {g}: {step}");
    }
    let mut store = ParamStore::new();
    store.insert("p", Tensor::scalar(0.5));
    let mut state = AdamState::default();
    adam_step(&mut store, &BTreeMap::from([("p".into(), Tensor::scalar(0.0))]), &mut state, &cfg).unwrap();
    assert_eq!(store.get("p").unwrap().item(), 0.5);
    assert_eq!(state.m["p"].item(), 0.0);
    assert_eq!(state.v["p"].item(), 0.0);
}

#[test]
fn same_seed_same_checkpoint_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk(Variant::Linguistic);
    let (examples, vocab) = synth_examples(&dir.path().join("corpus"), &spec(), &cfg);
    let tc = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let mut runs = Vec::new();
    for r in 0..2 {
        let (model, mut store) = build(&cfg, vocab.len());
        let out = dir.path().join(format!("run{r}"));
        let report = fit(&model, &mut store, &mut examples.clone(), &tc, Some(&out)).unwrap();
        assert_eq!(report.steps, 2);
        runs.push((report.losses[0].loss.to_bits(), std::fs::read(&report.checkpoints[0]).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk(Variant::Linguistic);
    let (mut examples, vocab) = synth_examples(dir.path(), &spec(), &cfg);
    let (model, mut store) = build(&cfg, vocab.len());
    let before = store.clone();
    let tc = TrainConfig { epochs: 1, lr: Some(0.0), ..TrainConfig::default() };
    fit(&model, &mut store, &mut examples, &tc, None).unwrap();
    assert_eq!(store, before);
}

#[test]
fn nan_loss_aborts_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk(Variant::Linguistic);
    let (mut examples, vocab) = synth_examples(dir.path(), &spec(), &cfg);
    let (model, mut store) = build(&cfg, vocab.len());
    store.get_mut("linguistic.classifier.bias").unwrap().data_mut()[0] = f64::NAN;
    let err = fit(&model, &mut store, &mut examples, &TrainConfig::default(), None).unwrap_err();
    let Error::Training(msg) = err else { panic!("expected a training error") };
    assert!(msg.contains("epoch 1 step 0"), "{msg}");
    assert!(msg.contains("non-finite") || msg.contains("NaN"), "{msg}");
    assert!(msg.contains("ad_") || msg.contains("hc_"), "{msg}");
}

#[test]
fn empty_datasets_are_rejected() {
    let cfg = desk(Variant::Linguistic);
    let (model, mut store) = build(&cfg, 10);
    assert!(fit(&model, &mut store, &mut [], &TrainConfig::default(), None).is_err());
    assert!(evaluate(&model, &store, &[]).is_err());
}

#[test]
fn loss_falls_over_twelve_epochs_and_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk(Variant::Linguistic);
    let (mut examples, vocab) = synth_examples(&dir.path().join("corpus"), &spec(), &cfg);
    let (model, mut store) = build(&cfg, vocab.len());
    let out = dir.path().join("run");
    let report = fit(&model, &mut store, &mut examples, &TrainConfig::default(), Some(&out)).unwrap();
    assert_eq!(report.epoch_mean_loss.len(), 12);
    assert!(report.epoch_mean_loss[11] < report.epoch_mean_loss[0]);
    assert_eq!(report.checkpoints.len(), 12);
    assert!(out.join("epoch_012.ckpt").is_file());
    let log = std::fs::read_to_string(out.join("loss.log")).unwrap();
    assert_eq!(log.lines().count(), report.steps);
    let first: Vec<&str> = log.lines().next().unwrap().split(' ').collect();
    assert_eq!(first[..2], ["1", "0"]);
    assert_eq!(first[2].parse::<f64>().unwrap(), report.losses[0].loss);
}

#[test]
fn max_steps_stops_early_but_still_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk(Variant::Linguistic);
    let (mut examples, vocab) = synth_examples(&dir.path().join("corpus"), &spec(), &cfg);
    let (model, mut store) = build(&cfg, vocab.len());
    let tc = TrainConfig { max_steps: Some(3), ..TrainConfig::default() };
    let report = fit(&model, &mut store, &mut examples, &tc, Some(&dir.path().join("run"))).unwrap();
    assert_eq!(report.steps, 3);
    assert_eq!(report.checkpoints.len(), 2);
}

#[test]
fn worked_and_degenerate_metrics() {
    let m = Metrics::from_confusion(&ConfusionMatrix::binary(2, 1, 1, 2)).unwrap();
    for v in [m.accuracy, m.precision, m.recall, m.fscore] {
        assert!((v - 0.6667).abs() < 1e-4);
    }
    let all_ad = ConfusionMatrix::from_predictions(&[0, 0, 1, 1], &[1, 1, 1, 1], 2).unwrap();
    let m = Metrics::from_confusion(&all_ad).unwrap();
    assert_eq!(m.accuracy, 0.5);
    assert_eq!(m.precision, 0.25);
    let perfect = Metrics::from_confusion(&ConfusionMatrix::binary(3, 0, 0, 5)).unwrap();
    assert_eq!([perfect.accuracy, perfect.precision, perfect.recall, perfect.fscore], [1.0; 4]);
    let report = perfect.report(&["HC", "AD"]);
    assert!(report.contains("accuracy"));
}

fn oracle(c: [[usize; 2]; 2]) -> [f64; 4] {
    let (tn, fp, fn_, tp) = (c[0][0] as f64, c[0][1] as f64, c[1][0] as f64, c[1][1] as f64);
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let (p1, r1) = (div(tp, tp + fp), div(tp, tp + fn_));
    let (p0, r0) = (div(tn, tn + fn_), div(tn, tn + fp));
    let f = |p: f64, r: f64| div(2.0 * p * r, p + r);
    [(tp + tn) / (tp + tn + fp + fn_), (p0 + p1) / 2.0, (r0 + r1) / 2.0, (f(p0, r0) + f(p1, r1)) / 2.0]
}

proptest! {
    #[test]
    fn metrics_match_hand_oracle(tn in 0usize..50, fp in 0usize..50, fn_ in 0usize..50, tp in 0usize..50) {
        prop_assume!(tn + fp + fn_ + tp > 0);
        let m = Metrics::from_confusion(&ConfusionMatrix::binary(tp, fp, fn_, tn)).unwrap();
        let want = oracle([[tn, fp], [fn_, tp]]);
        for (got, want) in [m.accuracy, m.precision, m.recall, m.fscore].iter().zip(want) {
            prop_assert!((got - want).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(got));
        }
    }
}

fn acoustic_examples(seconds: &[f64], segment_s: f64) -> Vec<Example> {
    let fe = LogMelFrontend::new(&FrontendConfig::default()).unwrap();
    seconds
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let n = (s * 16000.0) as usize;
            let w = Waveform::new((0..n).map(|k| 0.2 * ((k * (i + 3)) as f64 * 0.05).sin()).collect(), 16000).unwrap();
            let segments = (0..n)
                .step_by((segment_s * 16000.0) as usize)
                .map(|a| fe.log_mel(&w.slice(a, (a + (segment_s * 16000.0) as usize).min(n)).unwrap()).unwrap())
                .collect();
            Example {
                id: format!("r{i}"),
                label: i % 2,
                demographics: Default::default(),
                segments,
                tokens: None,
                chars: None,
                acoustic_matrix: None,
            }
        })
        .collect()
}

#[test]
fn exported_xa_equals_standalone_forward() {
    let cfg = desk(Variant::Acoustic);
    let (model, store) = build(&cfg, 0);
    let Model::Acoustic(enc) = &model else { unreachable!() };

    let single = acoustic_examples(&[1.0, 1.5], 10.0);
    let table = export_embeddings(&model, &store, &single, Feature::Xa).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.width(), cfg.acoustic.feature_dim);
    for (ex, row) in single.iter().zip(&table.rows) {
        let want = segment_feature(enc, &store, &ex.segments[0], &ex.demographics).unwrap();
        assert_eq!(bits(row), bits(&want));
    }

    let multi = acoustic_examples(&[3.0], 1.0);
    let row = &export_embeddings(&model, &store, &multi, Feature::Xa).unwrap().rows[0];
    let per: Vec<Vec<f64>> =
        multi[0].segments.iter().map(|m| segment_feature(enc, &store, m, &multi[0].demographics).unwrap()).collect();
    for (j, v) in row.iter().enumerate() {
        let mean = per.iter().map(|r| r[j]).sum::<f64>() / per.len() as f64;
        assert!((v - mean).abs() < 1e-12);
    }
    assert!(export_embeddings(&model, &store, &multi, Feature::Word).is_err());
}

#[test]
fn xp_export_is_768_wide_at_full_dims() {
    let cfg = ModelConfig { variant: Variant::Acoustic, ..ModelConfig::default() };
    let (model, store) = build(&cfg, 0);
    let table = export_embeddings(&model, &store, &acoustic_examples(&[1.0], 10.0), Feature::Xp).unwrap();
    assert_eq!(table.width(), 768);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("xp.csv");
    table.write_csv(&p, &["HC", "AD"]).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header[..3], ["id", "label", "v0"]);
    assert_eq!(header.len(), 2 + 768);
    assert!(text.lines().nth(1).unwrap().starts_with("r0,HC,"));
}

#[test]
fn restored_checkpoint_reproduces_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk(Variant::Linguistic);
    let (mut examples, vocab) = synth_examples(dir.path(), &spec(), &cfg);
    let (model, mut store) = build(&cfg, vocab.len());
    let tc = TrainConfig { epochs: 2, ..TrainConfig::default() };
    fit(&model, &mut store, &mut examples, &tc, None).unwrap();
    let ckpt = Checkpoint::from_bytes(&Checkpoint::from_params(&store).to_bytes().unwrap()).unwrap();
    let (model2, mut fresh) = build(&cfg, vocab.len());
    swinbert_core::model::restore_params(&mut fresh, &ckpt).unwrap();
    assert_eq!(evaluate(&model, &store, &examples).unwrap(), evaluate(&model2, &fresh, &examples).unwrap());
}
