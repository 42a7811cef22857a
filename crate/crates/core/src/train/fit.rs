use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionMatrix, Metrics};
use super::optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::model::{Example, Feature, Model, Variant};
use crate::tensor::{write_checkpoint, Checkpoint, Graph, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Defaults to 1e-4 for the acoustic variant and 1e-3 otherwise.
    pub lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Fusion only: epochs of acoustic-only training before the acoustic
    /// encoder is frozen and its matrices cached.
    pub acoustic_pretrain_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: None,
            beta1: 0.95,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            epochs: 12,
            seed: 0,
            clip_norm: 1.0,
            max_steps: None,
            acoustic_pretrain_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn lr_for(&self, variant: Variant) -> f64 {
        self.lr.unwrap_or(match variant {
            Variant::Acoustic => 1e-4,
            _ => 1e-3,
        })
    }

    pub fn adam(&self, variant: Variant) -> AdamConfig {
        AdamConfig { lr: self.lr_for(variant), beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if let Some(lr) = self.lr {
            if !(lr >= 0.0 && lr.is_finite()) {
                errs.push(format!("train: lr must be finite and non-negative, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            errs.push("train: batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            errs.push("train: betas must be in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            errs.push("train: eps must be positive".into());
        }
        if !(self.clip_norm >= 0.0) {
            errs.push("train: clip_norm must be non-negative".into());
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLoss {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub losses: Vec<StepLoss>,
    pub epoch_mean_loss: Vec<f64>,
    pub steps: usize,
    /// Per-epoch checkpoint files, when an output directory was given.
    pub checkpoints: Vec<PathBuf>,
}

impl FitReport {
    /// `epoch step loss` lines.
    pub fn loss_log(&self) -> String {
        let mut s = String::new();
        for l in &self.losses {
            writeln!(s, "{} {} {:.17e}", l.epoch, l.step, l.loss).unwrap();
        }
        s
    }
}

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(format!("epoch_{epoch:03}.ckpt"))
}

fn batch_loss<'g>(
    g: &'g Graph,
    model: &Model,
    store: &ParamStore,
    batch: &[&Example],
) -> Result<crate::tensor::Var<'g>> {
    let rows = batch.iter().map(|ex| model.logits(g, store, ex)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = batch.iter().map(|ex| ex.label).collect();
    g.concat(&rows, 0)?.cross_entropy(&labels)
}

fn run_epochs(
    model: &Model,
    store: &mut ParamStore,
    examples: &[Example],
    cfg: &TrainConfig,
    adam: &AdamConfig,
    out_dir: Option<&Path>,
    report: &mut FitReport,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=cfg.epochs {
        if cfg.max_steps.is_some_and(|m| report.steps >= m) {
            break;
        }
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut n = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| report.steps >= m) {
                break;
            }
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let diag = |e: &dyn std::fmt::Display| {
                let ids: Vec<&str> = batch.iter().map(|ex| ex.id.as_str()).collect();
                Error::Training(format!("epoch {epoch} step {step} batch [{}]: {e}", ids.join(", ")))
            };
            let g = Graph::new();
            let loss = batch_loss(&g, model, store, &batch).map_err(|e| diag(&e))?;
            let value = loss.value().item();
            if !value.is_finite() {
                return Err(diag(&format!("loss is {value}")));
            }
            g.backward(loss).map_err(|e| diag(&e))?;
            let mut grads = g.param_grads();
            drop(g);
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam_step(store, &grads, &mut state, adam)?;
            report.losses.push(StepLoss { epoch, step, loss: value });
            report.steps += 1;
            sum += value;
            n += 1;
        }
        report.epoch_mean_loss.push(sum / n.max(1) as f64);
        if let Some(dir) = out_dir {
            let p = checkpoint_path(dir, epoch);
            write_checkpoint(&p, &Checkpoint::from_params(store))?;
            fs::write(dir.join("loss.log"), report.loss_log()).map_err(|e| Error::io(dir.join("loss.log"), e))?;
            report.checkpoints.push(p);
        }
    }
    Ok(())
}

/// Seeded mini-batch training with mean cross-entropy, global-norm
/// clipping and Adam. With `out_dir`, writes `epoch_NNN.ckpt` and
/// `loss.log` after each epoch. Fusion examples get their acoustic
/// matrices cached (after optional acoustic pretraining).
pub fn fit(
    model: &Model,
    store: &mut ParamStore,
    examples: &mut [Example],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<FitReport> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if examples.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut report = FitReport { losses: Vec::new(), epoch_mean_loss: Vec::new(), steps: 0, checkpoints: Vec::new() };
    if let Model::Fusion(f) = model {
        if cfg.acoustic_pretrain_epochs > 0 && !f.config().fine_tune_acoustic {
            let pre_cfg = TrainConfig { epochs: cfg.acoustic_pretrain_epochs, max_steps: None, ..cfg.clone() };
            let acoustic = Model::Acoustic(f.acoustic().clone());
            store.unfreeze_all();
            let mut pre =
                FitReport { losses: Vec::new(), epoch_mean_loss: Vec::new(), steps: 0, checkpoints: Vec::new() };
            run_epochs(&acoustic, store, examples, &pre_cfg, &pre_cfg.adam(Variant::Acoustic), None, &mut pre)?;
            store.freeze_prefix("acoustic.");
            log::info!("acoustic pretraining: {} steps, final epoch loss {:?}", pre.steps, pre.epoch_mean_loss.last());
            examples.iter_mut().for_each(|e| e.acoustic_matrix = None);
        }
    }
    model.prepare(store, examples)?;
    run_epochs(model, store, examples, cfg, &cfg.adam(model.variant()), out_dir, &mut report)?;
    Ok(report)
}

pub fn predict(model: &Model, store: &ParamStore, ex: &Example) -> Result<usize> {
    let g = Graph::new();
    let logits = model.logits(&g, store, ex)?.value();
    let row = logits.data();
    Ok((1..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best }))
}

/// Argmax predictions scored with macro metrics.
pub fn evaluate(model: &Model, store: &ParamStore, examples: &[Example]) -> Result<Metrics> {
    if examples.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let preds = examples.iter().map(|ex| predict(model, store, ex)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = examples.iter().map(|ex| ex.label).collect();
    let classes = {
        let g = Graph::new();
        model.logits(&g, store, &examples[0])?.shape()[1]
    };
    Metrics::from_confusion(&ConfusionMatrix::from_predictions(&labels, &preds, classes)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Header `id,label,v0..v{n-1}`; labels are written by name.
    pub fn write_csv(&self, path: &Path, label_names: &[&str]) -> Result<()> {
        let err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((0..self.width()).map(|i| format!("v{i}")));
        w.write_record(&header).map_err(err)?;
        for ((id, &label), row) in self.ids.iter().zip(&self.labels).zip(&self.rows) {
            let mut rec = vec![id.clone(), label_names.get(label).map_or(label.to_string(), |s| s.to_string())];
            rec.extend(row.iter().map(|v| format!("{v:e}")));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// One embedding row per example.
pub fn export_embeddings(
    model: &Model,
    store: &ParamStore,
    examples: &[Example],
    which: Feature,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable { ids: Vec::new(), labels: Vec::new(), rows: Vec::new() };
    for ex in examples {
        let g = Graph::new();
        let v = model.embedding(&g, store, ex, which)?;
        table.ids.push(ex.id.clone());
        table.labels.push(ex.label);
        table.rows.push(v.value().into_data());
    }
    Ok(table)
}
