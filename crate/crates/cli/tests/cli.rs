use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn swinbert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swinbert")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, n: usize) -> String {
    let corpus = dir.join("corpus");
    let o = swinbert(&["synth", "--n", &n.to_string(), "--seed", "7", "--out", corpus.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    corpus.to_str().unwrap().to_string()
}

fn write_config(dir: &Path, corpus: &str, extra: &str) -> String {
    let p = dir.join("run.toml");
    let run = dir.join("run");
    fs::write(&p, format!("data_dir = {corpus:?}\nout_dir = {:?}\n{extra}", run.to_str().unwrap())).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn synth_train_eval_export() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 8);
    assert!(Path::new(&corpus).join("manifest.csv").is_file());
    let cfg = write_config(dir.path(), &corpus, "[train]\nepochs = 100\nseed = 7\n");

    let o = swinbert(&["train", "--config", &cfg, "--variant", "fusion"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    for f in ["final.ckpt", "epoch_001.ckpt", "loss.log", "vocab.txt", "config.toml"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_to_string(run.join("loss.log")).unwrap().lines().count(), 200);

    let o = swinbert(&["eval", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(run.join("metrics.txt")).unwrap();
    assert!(metrics.starts_with("[train] n=16\naccuracy  1.000000\n"), "{metrics}");

    let o = swinbert(&["export", "--config", &cfg, "--feature", "word"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(run.join("embeddings_word.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
    assert!(csv.starts_with("id,label,v0,"));
}

#[test]
fn featurize_caches_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 1);
    let cfg = write_config(dir.path(), &corpus, "");
    let o = swinbert(&["featurize", "--config", &cfg, "--variant", "fusion"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("run/features.ckpt").is_file());
    assert!(stdout(&o).contains("for 2 recordings"));
}

#[test]
fn missing_checkpoint_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 1);
    let cfg = write_config(dir.path(), &corpus, "");
    let missing = dir.path().join("nope.ckpt");
    let o = swinbert(&["eval", "--config", &cfg, "--checkpoint", missing.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nope.ckpt"), "{}", stderr(&o));
}

#[test]
fn invalid_config_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, format!("data_dir = {:?}\n[train]\nbatch_size = 0\n", dir.path().join("absent"))).unwrap();
    let o = swinbert(&["train", "--config", p.to_str().unwrap()]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.contains("batch_size") && e.contains("manifest"), "{e}");

    fs::write(&p, "colour = 3\n").unwrap();
    let o = swinbert(&["train", "--config", p.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn gradcheck_passes() {
    let o = swinbert(&["gradcheck"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.ends_with("ok")).count(), 7, "{out}");
}
