use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use swinbert_core::config::RunConfig;
use swinbert_core::data::{generate_synthetic, load_manifest, ManifestRow, RecordingManifest, Split};
use swinbert_core::dsp::LogMelFrontend;
use swinbert_core::fusion::{build_matrix_from_segments, cache_matrix, segment_spectrograms};
use swinbert_core::gradsuite::{run_suite, SuiteConfig};
use swinbert_core::linguistic::{char_encode, CharDictionary, Vocabulary};
use swinbert_core::model::{fusion_mode_select, restore_params, Feature, Model, ModelConfig, Variant};
use swinbert_core::tensor::{read_checkpoint, write_checkpoint, Checkpoint, ParamStore};
use swinbert_core::train::{build_examples, build_vocabulary, evaluate, export_embeddings, fit};

const LABEL_NAMES: [&str; 2] = ["HC", "AD"];
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "swinbert", about = "Acoustic, linguistic and fusion dementia classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus.
    Synth,
    /// Cache spectrograms, char matrices and acoustic matrices.
    Featurize,
    /// Train the selected variant; writes checkpoints and a loss log.
    Train,
    /// Score a checkpoint on every split of the manifest.
    Eval,
    /// Finite-difference gradient checks of every module.
    Gradcheck,
    /// Write per-recording embeddings.
    Export,
}

#[derive(Args)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["acoustic", "linguistic", "fusion"])]
    variant: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (the corpus directory for `synth`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["xp", "xa", "word", "fused"])]
    feature: Option<String>,
    /// Synthetic recordings per class.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    no_demographics: bool,
    #[arg(long, global = true)]
    no_char_branch: bool,
}

fn load_config(o: &Overrides, synth: bool) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &o.variant {
        cfg.model.variant = v.parse()?;
    }
    if let Some(s) = o.seed {
        cfg.train.seed = s;
    }
    if let Some(out) = &o.out {
        if synth {
            cfg.data_dir = out.clone();
        } else {
            cfg.out_dir = out.clone();
        }
    }
    if let Some(n) = o.n {
        cfg.synth.n_per_class = n;
    }
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    if o.lr.is_some() {
        cfg.train.lr = o.lr;
    }
    if o.no_demographics {
        cfg.model.acoustic.use_demographics = false;
    }
    if o.no_char_branch {
        cfg.model.set_char_branch(false);
    }
    Ok(cfg)
}

fn check(cfg: &RunConfig, need_manifest: bool) -> Result<()> {
    let errs = cfg.validate(need_manifest);
    if !errs.is_empty() {
        bail!("invalid configuration ({} problems): {}", errs.len(), errs.join("; "));
    }
    Ok(())
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    let tmp = p.with_extension("tmp");
    fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, p).with_context(|| format!("writing {}", p.display()))
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    check(cfg, false)?;
    create_dir(&cfg.data_dir)?;
    let m = generate_synthetic(&cfg.synth_spec(), &cfg.data_dir)?;
    println!("wrote {} recordings to {}", m.rows.len(), cfg.data_dir.join("manifest.csv").display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    check(cfg, true)?;
    let manifest = load_manifest(&cfg.manifest_path())?;
    let train_rows: Vec<&ManifestRow> = manifest.split(Split::Train).collect();
    if train_rows.is_empty() {
        bail!("manifest {} has no train rows", cfg.manifest_path().display());
    }
    let vocab = build_vocabulary(&manifest, train_rows.iter().copied())?;
    let mut examples = build_examples(&manifest, train_rows.iter().copied(), &cfg.model, Some(&vocab))?;
    let mut store = ParamStore::new();
    let (model, _) = fusion_mode_select(&cfg.model, vocab.len(), &mut store, cfg.train.seed)?;
    create_dir(&cfg.out_dir)?;
    let report = fit(&model, &mut store, &mut examples, &cfg.train, Some(&cfg.out_dir))?;
    write_checkpoint(&cfg.out_dir.join("final.ckpt"), &Checkpoint::from_params(&store))?;
    vocab.save(&cfg.out_dir.join("vocab.txt"))?;
    write_text(&cfg.out_dir.join("config.toml"), &cfg.to_toml_string())?;
    println!(
        "trained {} for {} steps; final epoch loss {:.6}; checkpoints in {}",
        cfg.model.variant,
        report.steps,
        report.epoch_mean_loss.last().copied().unwrap_or(f64::NAN),
        cfg.out_dir.display()
    );
    Ok(())
}

/// The trained model next to `checkpoint`, using that run's saved config
/// and vocabulary when present.
fn restore(cfg: &RunConfig, checkpoint: &Path) -> Result<(ModelConfig, Vocabulary, Model, ParamStore)> {
    if !checkpoint.is_file() {
        bail!("checkpoint {} does not exist", checkpoint.display());
    }
    let run_dir = checkpoint.parent().unwrap_or(Path::new("."));
    let saved = run_dir.join("config.toml");
    let model_cfg = if saved.is_file() { RunConfig::load(&saved)?.model } else { cfg.model.clone() };
    let vocab_path = run_dir.join("vocab.txt");
    if model_cfg.variant.uses_text() && !vocab_path.is_file() {
        bail!("vocabulary {} does not exist", vocab_path.display());
    }
    let vocab = if vocab_path.is_file() { Vocabulary::load(&vocab_path)? } else { Vocabulary::build([]) };
    let mut store = ParamStore::new();
    let (model, _) = fusion_mode_select(&model_cfg, vocab.len(), &mut store, cfg.train.seed)?;
    restore_params(&mut store, &read_checkpoint(checkpoint)?)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    Ok((model_cfg, vocab, model, store))
}

fn checkpoint_arg(o: &Overrides, cfg: &RunConfig) -> PathBuf {
    o.checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join("final.ckpt"))
}

fn cmd_eval(cfg: &RunConfig, o: &Overrides) -> Result<()> {
    let checkpoint = checkpoint_arg(o, cfg);
    let (model_cfg, vocab, model, store) = restore(cfg, &checkpoint)?;
    check(cfg, true)?;
    let manifest = load_manifest(&cfg.manifest_path())?;
    let mut text = String::new();
    for split in [Split::Train, Split::Test] {
        let rows: Vec<&ManifestRow> = manifest.split(split).collect();
        if rows.is_empty() {
            continue;
        }
        let mut examples = build_examples(&manifest, rows, &model_cfg, Some(&vocab))?;
        model.prepare(&store, &mut examples)?;
        let metrics = evaluate(&model, &store, &examples)?;
        text.push_str(&format!("[{split}] n={}\n{}\n", examples.len(), metrics.report(&LABEL_NAMES)));
    }
    create_dir(&cfg.out_dir)?;
    let out = cfg.out_dir.join("metrics.txt");
    write_text(&out, &text)?;
    print!("{text}");
    println!("metrics written to {}", out.display());
    Ok(())
}

fn cmd_export(cfg: &RunConfig, o: &Overrides) -> Result<()> {
    let name = o.feature.as_deref().unwrap_or("fused");
    let feature: Feature = name.parse()?;
    let checkpoint = checkpoint_arg(o, cfg);
    let (model_cfg, vocab, model, store) = restore(cfg, &checkpoint)?;
    check(cfg, true)?;
    let manifest = load_manifest(&cfg.manifest_path())?;
    let mut examples = build_examples(&manifest, manifest.rows.iter(), &model_cfg, Some(&vocab))?;
    model.prepare(&store, &mut examples)?;
    let table = export_embeddings(&model, &store, &examples, feature)?;
    create_dir(&cfg.out_dir)?;
    let out = cfg.out_dir.join(format!("embeddings_{name}.csv"));
    table.write_csv(&out, &LABEL_NAMES)?;
    println!("wrote {} rows of width {} to {}", table.rows.len(), table.width(), out.display());
    Ok(())
}

fn featurize_rows(
    cfg: &RunConfig,
    manifest: &RecordingManifest,
    acoustic: Option<(&Model, &ParamStore)>,
) -> Result<Checkpoint> {
    let model_cfg = &cfg.model;
    let frontend = LogMelFrontend::new(&model_cfg.frontend)?;
    let mut ckpt = Checkpoint::new();
    for row in &manifest.rows {
        if model_cfg.variant.uses_audio() {
            let segments = segment_spectrograms(&manifest.waveform(row)?, &frontend, &model_cfg.fusion)?;
            for (k, mel) in segments.iter().enumerate() {
                ckpt.insert(&format!("cache.{}.mel.{k}", row.id), mel.frames().clone());
            }
            if let Some((Model::Fusion(f), store)) = acoustic {
                let m = build_matrix_from_segments(&segments, &row.demographics(), f.acoustic(), store)?;
                cache_matrix(&mut ckpt, &row.id, &m);
            }
        }
        if model_cfg.char_branch_enabled() {
            let text = manifest.char_text(row)?;
            let m = char_encode(text.trim(), &CharDictionary, model_cfg.linguistic.char_len_max);
            ckpt.insert(&format!("cache.{}.chars", row.id), m.matrix().clone());
        }
    }
    Ok(ckpt)
}

fn cmd_featurize(cfg: &RunConfig, o: &Overrides) -> Result<()> {
    check(cfg, true)?;
    let manifest = load_manifest(&cfg.manifest_path())?;
    let restored;
    let fresh;
    let acoustic = match (&o.checkpoint, cfg.model.variant) {
        (Some(p), _) => {
            restored = restore(cfg, p)?;
            Some((&restored.2, &restored.3))
        }
        (None, Variant::Fusion) => {
            let mut store = ParamStore::new();
            let vocab_size = build_vocabulary(&manifest, manifest.rows.iter())?.len();
            let (model, _) = fusion_mode_select(&cfg.model, vocab_size, &mut store, cfg.train.seed)?;
            fresh = (model, store);
            Some((&fresh.0, &fresh.1))
        }
        (None, _) => None,
    };
    let ckpt = featurize_rows(cfg, &manifest, acoustic)?;
    create_dir(&cfg.out_dir)?;
    let out = cfg.out_dir.join("features.ckpt");
    write_checkpoint(&out, &ckpt)?;
    println!("cached {} tensors for {} recordings in {}", ckpt.entries.len(), manifest.rows.len(), out.display());
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig) -> Result<()> {
    let suite = SuiteConfig { seed: cfg.train.seed, ..SuiteConfig::default() };
    let mut failed = Vec::new();
    for e in run_suite(&suite)? {
        let ok = e.max_rel_err < GRADCHECK_TOLERANCE;
        println!(
            "{:<22} max_rel_err {:.3e}  worst {}  coords {}  {}",
            e.module,
            e.max_rel_err,
            e.worst,
            e.coords_checked,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(e.module);
        }
    }
    if !failed.is_empty() {
        bail!("gradient check above {GRADCHECK_TOLERANCE:e} for {}", failed.join(", "));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let o = &cli.opts;
    let cfg = load_config(o, matches!(cli.command, Command::Synth))?;
    match cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Featurize => cmd_featurize(&cfg, o),
        Command::Train => cmd_train(&cfg),
        Command::Eval => cmd_eval(&cfg, o),
        Command::Gradcheck => cmd_gradcheck(&cfg),
        Command::Export => cmd_export(&cfg, o),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
