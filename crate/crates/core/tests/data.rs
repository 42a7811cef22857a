mod common;

use std::fs;
use std::path::Path;

use proptest::prelude::*;
use swinbert_core::acoustic::DemographicInfo;
use swinbert_core::data::{
    generate_synthetic, load_manifest, read_wav, write_manifest, write_wav, Label, RecordingManifest, Split, SynthSpec,
};
use swinbert_core::dsp::Waveform;

use common::{arb_rows, touch_files};

const FOUR_ROWS: &str = "id,wav,word_txt,char_txt,age,gender,label,split
a,wav/a.wav,txt/a.txt,,71,F,AD,train
b,wav/b.wav,txt/b.txt,txt/b.chars.txt,,M,HC,train
c,wav/c.wav,txt/c.txt,,64,,AD,test
d,wav/d.wav,txt/d.txt,,80,U,HC,test
";

fn four_row_corpus(dir: &Path) -> RecordingManifest {
    let m = RecordingManifest::parse(FOUR_ROWS, dir, Path::new("m.csv")).unwrap();
    touch_files(dir, &m.rows);
    fs::write(dir.join("manifest.csv"), FOUR_ROWS).unwrap();
    m
}

#[test]
fn four_row_manifest() {
    let dir = tempfile::tempdir().unwrap();
    four_row_corpus(dir.path());
    let m = load_manifest(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(m.rows.len(), 4);
    assert_eq!(m.split(Split::Test).count(), 2);
    assert_eq!(m.rows[1].demographics().age_bucket(), DemographicInfo::UNKNOWN_AGE_BUCKET);
    assert_eq!(m.rows[0].demographics().age_bucket(), 7);
    assert_eq!(m.base_dir, dir.path());
}

#[test]
fn missing_files_are_named() {
    let dir = tempfile::tempdir().unwrap();
    four_row_corpus(dir.path());
    fs::remove_file(dir.path().join("txt/c.txt")).unwrap();
    let e = load_manifest(&dir.path().join("manifest.csv")).unwrap_err().to_string();
    assert!(e.contains("c.txt") && e.contains("`c`"), "{e}");
}

#[test]
fn char_text_is_derived_when_absent() {
    let dir = tempfile::tempdir().unwrap();
    let m = four_row_corpus(dir.path());
    fs::write(dir.path().join("txt/a.txt"), "the boy  took\n").unwrap();
    assert_eq!(m.char_text(&m.rows[0]).unwrap(), "THE|BOY|TOOK");
}

#[test]
fn one_second_of_silence() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.wav");
    write_wav(&p, &Waveform::new(vec![0.0; 16000], 16000).unwrap()).unwrap();
    let w = read_wav(&p).unwrap();
    assert_eq!(w.len(), 16000);
    assert!(w.samples().iter().all(|&s| s == 0.0));
}

#[test]
fn non_conforming_wavs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for (name, channels, rate, bits) in [("stereo", 2, 16000, 16), ("8k", 1, 8000, 16), ("pcm8", 1, 16000, 8)] {
        let p = dir.path().join(format!("{name}.wav"));
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: bits,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..channels {
            if bits == 8 {
                w.write_sample(0i8).unwrap();
            } else {
                w.write_sample(0i16).unwrap();
            }
        }
        w.finalize().unwrap();
        let e = read_wav(&p).unwrap_err().to_string();
        assert!(e.contains(&format!("{name}.wav")), "{e}");
    }
}

#[test]
fn synthetic_corpus_is_balanced_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { n_per_class: 8, test_per_class: 2, ..SynthSpec::default() };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let m = generate_synthetic(&spec, &a).unwrap();
    generate_synthetic(&spec, &b).unwrap();
    assert_eq!(m.split(Split::Train).count(), 16);
    assert_eq!(m.split(Split::Train).filter(|r| r.label == Label::Ad).count(), 8);
    assert_eq!(m.split(Split::Test).count(), 4);
    let loaded = load_manifest(&a.join("manifest.csv")).unwrap();
    assert_eq!(loaded.rows, m.rows);
    let mut files: Vec<_> = walk(&a);
    files.sort();
    assert_eq!(files.len(), 1 + 20 * 3);
    for rel in files {
        assert_eq!(fs::read(a.join(&rel)).unwrap(), fs::read(b.join(&rel)).unwrap(), "{rel}");
    }
    for r in &loaded.rows {
        let w = loaded.waveform(r).unwrap();
        assert!(w.samples().iter().all(|s| s.abs() <= 1.0));
        let text = loaded.word_text(r).unwrap();
        let fillers = text.split_whitespace().filter(|w| ["uh", "um", "er"].contains(w)).count();
        assert_eq!(fillers > 0, r.label == Label::Ad, "{text}");
    }
    let other = generate_synthetic(&SynthSpec { seed: 8, ..spec }, &dir.path().join("c")).unwrap();
    assert_ne!(fs::read(dir.path().join("c/wav/ad_000.wav")).unwrap(), fs::read(a.join("wav/ad_000.wav")).unwrap());
    assert_eq!(other.rows.len(), 20);
}

fn walk(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p).into_iter().map(|s| format!("{}/{s}", p.file_name().unwrap().to_string_lossy())));
        } else {
            out.push(p.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn manifest_write_then_load_is_identity(rows in arb_rows()) {
        let dir = tempfile::tempdir().unwrap();
        touch_files(dir.path(), &rows);
        let m = RecordingManifest { rows, base_dir: dir.path().to_path_buf() };
        let p = dir.path().join("manifest.csv");
        write_manifest(&p, &m).unwrap();
        prop_assert_eq!(load_manifest(&p).unwrap(), m);
    }

    #[test]
    fn wav_round_trip_within_one_lsb(samples in prop::collection::vec(-1.0f64..=1.0, 1..2000)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        write_wav(&p, &Waveform::new(samples.clone(), 16000).unwrap()).unwrap();
        let back = read_wav(&p).unwrap();
        prop_assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }
}
