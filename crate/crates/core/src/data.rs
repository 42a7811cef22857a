//! Recording manifests, PCM16 WAV I/O and the seeded synthetic corpus.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acoustic::{DemographicInfo, Gender};
use crate::dsp::{FrontendConfig, LogMelFrontend, Waveform};
use crate::error::{Error, Result};
use crate::linguistic::char_transcript_from_words;

pub const MANIFEST_HEADER: [&str; 8] = ["id", "wav", "word_txt", "char_txt", "age", "gender", "label", "split"];
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// Healthy control, class 0.
    Hc,
    /// Alzheimer's dementia, class 1.
    Ad,
}

impl Label {
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        match self {
            Label::Hc => 0,
            Label::Ad => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Hc),
            1 => Some(Label::Ad),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Hc => "HC",
            Label::Ad => "AD",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "AD" => Ok(Label::Ad),
            "HC" => Ok(Label::Hc),
            _ => Err(format!("unknown label `{s}` (expected AD or HC)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}` (expected train or test)")),
        }
    }
}

/// One manifest row. Paths are kept as written, relative to the manifest's
/// directory unless absolute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub wav: PathBuf,
    pub word_txt: PathBuf,
    pub char_txt: Option<PathBuf>,
    pub age: Option<u32>,
    pub gender: Option<Gender>,
    pub label: Label,
    pub split: Split,
}

impl ManifestRow {
    pub fn demographics(&self) -> DemographicInfo {
        DemographicInfo { age: self.age, gender: self.gender }
    }
}

fn gender_str(g: Option<Gender>) -> &'static str {
    match g {
        None => "",
        Some(Gender::M) => "M",
        Some(Gender::F) => "F",
        Some(Gender::Unknown) => "U",
    }
}

fn parse_gender(s: &str) -> std::result::Result<Option<Gender>, String> {
    match s {
        "" => Ok(None),
        "M" | "m" => Ok(Some(Gender::M)),
        "F" | "f" => Ok(Some(Gender::F)),
        "U" | "u" => Ok(Some(Gender::Unknown)),
        _ => Err(format!("unknown gender `{s}`")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RecordingManifest {
    pub rows: Vec<ManifestRow>,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

impl RecordingManifest {
    /// Parses manifest text without touching referenced files.
    pub fn parse(text: &str, base_dir: &Path, origin: &Path) -> Result<Self> {
        let err = |reason: String| Error::Manifest { path: origin.to_path_buf(), reason };
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
        if header.iter().ne(MANIFEST_HEADER) {
            return Err(err(format!(
                "header must be exactly `{}`, got `{}`",
                MANIFEST_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let line = i + 2;
            let f = |k: usize| rec.get(k).unwrap_or("");
            let id = f(0).to_string();
            let at = |reason: String| err(format!("line {line} (id `{id}`): {reason}"));
            if id.is_empty() {
                return Err(at("empty id".into()));
            }
            if !seen.insert(id.clone()) {
                return Err(err(format!("duplicate id `{id}` at line {line}")));
            }
            if f(1).is_empty() || f(2).is_empty() {
                return Err(at("wav and word_txt are required".into()));
            }
            let age = match f(4) {
                "" => None,
                s => Some(s.parse::<u32>().map_err(|_| at(format!("bad age `{s}`")))?),
            };
            rows.push(ManifestRow {
                wav: PathBuf::from(f(1)),
                word_txt: PathBuf::from(f(2)),
                char_txt: (!f(3).is_empty()).then(|| PathBuf::from(f(3))),
                age,
                gender: parse_gender(f(5)).map_err(at)?,
                label: f(6).parse().map_err(at)?,
                split: f(7).parse().map_err(at)?,
                id,
            });
        }
        Ok(Self { rows, base_dir: base_dir.to_path_buf() })
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER).expect("in-memory write");
        for r in &self.rows {
            let age = r.age.map(|a| a.to_string()).unwrap_or_default();
            let char_txt = r.char_txt.as_ref().map(|p| p.to_string_lossy().into_owned()).unwrap_or_default();
            w.write_record([
                r.id.as_str(),
                &r.wav.to_string_lossy(),
                &r.word_txt.to_string_lossy(),
                &char_txt,
                &age,
                gender_str(r.gender),
                &r.label.to_string(),
                &r.split.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn word_text(&self, row: &ManifestRow) -> Result<String> {
        let p = self.resolve(&row.word_txt);
        fs::read_to_string(&p).map_err(|e| Error::io(p, e))
    }

    /// Char transcript file, or one derived from the word transcript.
    pub fn char_text(&self, row: &ManifestRow) -> Result<String> {
        match &row.char_txt {
            Some(c) => {
                let p = self.resolve(c);
                fs::read_to_string(&p).map_err(|e| Error::io(p, e))
            }
            None => Ok(char_transcript_from_words(&self.word_text(row)?)),
        }
    }

    pub fn waveform(&self, row: &ManifestRow) -> Result<Waveform> {
        read_wav(&self.resolve(&row.wav))
    }
}

/// Reads and validates a manifest; every referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<RecordingManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let m = RecordingManifest::parse(&text, &base, path)?;
    for r in &m.rows {
        for p in [Some(&r.wav), Some(&r.word_txt), r.char_txt.as_ref()].into_iter().flatten() {
            let full = m.resolve(p);
            if !full.is_file() {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    reason: format!("id `{}`: missing file {}", r.id, full.display()),
                });
            }
        }
    }
    Ok(m)
}

pub fn write_manifest(path: &Path, m: &RecordingManifest) -> Result<()> {
    fs::write(path, m.to_csv_string()).map_err(|e| Error::io(path, e))
}

/// Reads a RIFF PCM16 mono 16 kHz file, scaling samples by 1/32768.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let err = |reason: String| Error::Wav { path: path.to_path_buf(), reason };
    let mut r = hound::WavReader::open(path).map_err(|e| err(e.to_string()))?;
    let spec = r.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(err(format!(
            "expected 16-bit integer PCM, got {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.channels != 1 {
        return Err(err(format!("expected mono, got {} channels", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(err(format!("expected {SAMPLE_RATE} Hz, got {} Hz", spec.sample_rate)));
    }
    let samples = r
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| err(e.to_string()))?;
    Waveform::new(samples, spec.sample_rate).map_err(|e| err(e.to_string()))
}

/// Writes PCM16 mono, rounding `x·32768` and clamping to the i16 range.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let err = |e: hound::Error| Error::Wav { path: path.to_path_buf(), reason: e.to_string() };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut wr = hound::WavWriter::create(path, spec).map_err(err)?;
    for &s in w.samples() {
        let q = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        wr.write_sample(q).map_err(err)?;
    }
    wr.finalize().map_err(err)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_per_class: usize,
    /// Extra per-class recordings tagged `test`.
    pub test_per_class: usize,
    pub seed: u64,
    pub duration_s: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { n_per_class: 8, test_per_class: 0, seed: 7, duration_s: 3.0 }
    }
}

const PICTURE_WORDS: [&str; 20] = [
    "the",
    "boy",
    "is",
    "taking",
    "a",
    "cookie",
    "from",
    "jar",
    "mother",
    "washing",
    "dishes",
    "water",
    "overflowing",
    "sink",
    "girl",
    "stool",
    "falling",
    "window",
    "kitchen",
    "curtains",
];
const FILLERS: [&str; 3] = ["uh", "um", "er"];

fn synth_audio(rng: &mut ChaCha8Rng, label: Label, duration_s: f64) -> Result<Waveform> {
    let (lo, hi) = match label {
        Label::Ad => (150.0, 400.0),
        Label::Hc => (1500.0, 3500.0),
    };
    let tones: Vec<(f64, f64)> =
        (0..3).map(|_| (rng.random_range(lo..hi), rng.random_range(0.0..std::f64::consts::TAU))).collect();
    let n = (duration_s * SAMPLE_RATE as f64).round() as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let s: f64 = tones.iter().map(|(f, p)| 0.2 * (std::f64::consts::TAU * f * t + p).sin()).sum();
            s + rng.random_range(-0.01..0.01)
        })
        .collect();
    Waveform::new(samples, SAMPLE_RATE)
}

fn synth_text(rng: &mut ChaCha8Rng, label: Label) -> String {
    let n = rng.random_range(10..16);
    let mut words: Vec<&str> = (0..n).map(|_| *PICTURE_WORDS.choose(rng).expect("non-empty")).collect();
    if label == Label::Ad {
        for _ in 0..rng.random_range(4..8) {
            let at = rng.random_range(0..=words.len());
            words.insert(at, FILLERS.choose(rng).expect("non-empty"));
        }
    }
    words.join(" ")
}

fn mean_log_mel(w: &Waveform, frontend: &LogMelFrontend) -> Result<Vec<f64>> {
    let mel = frontend.log_mel(w)?;
    let (t, f) = (mel.num_frames(), mel.mel_bins());
    let mut m = vec![0.0; f];
    for i in 0..t {
        for (acc, v) in m.iter_mut().zip(mel.frames().row(i)) {
            *acc += v / t as f64;
        }
    }
    Ok(m)
}

/// Accuracy of the class-mean-difference linear probe on `features`.
pub fn linear_probe_accuracy(features: &[Vec<f64>], labels: &[Label]) -> f64 {
    let dim = features.first().map_or(0, Vec::len);
    let mean = |l: Label| {
        let rows: Vec<&Vec<f64>> = features.iter().zip(labels).filter(|(_, &y)| y == l).map(|(x, _)| x).collect();
        let mut m = vec![0.0; dim];
        for r in &rows {
            for (a, v) in m.iter_mut().zip(r.iter()) {
                *a += v / rows.len() as f64;
            }
        }
        m
    };
    let (ma, mh) = (mean(Label::Ad), mean(Label::Hc));
    let w: Vec<f64> = ma.iter().zip(&mh).map(|(a, h)| a - h).collect();
    let mid: Vec<f64> = ma.iter().zip(&mh).map(|(a, h)| (a + h) / 2.0).collect();
    let correct = features
        .iter()
        .zip(labels)
        .filter(|(x, &y)| {
            let s: f64 = x.iter().zip(&mid).zip(&w).map(|((v, m), w)| (v - m) * w).sum();
            (s > 0.0) == (y == Label::Ad)
        })
        .count();
    correct as f64 / features.len().max(1) as f64
}

/// Writes `wav/`, `txt/` and `manifest.csv` under `out_dir`. AD recordings
/// are low tones with filler-rich text, HC recordings high tones with
/// fluent text.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<RecordingManifest> {
    if spec.n_per_class == 0 {
        return Err(Error::invalid("synthetic corpus needs at least one recording per class"));
    }
    if !(spec.duration_s >= 1.0) {
        return Err(Error::invalid("synthetic recordings must last at least 1 s"));
    }
    for d in ["wav", "txt"] {
        let p = out_dir.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(p, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frontend = LogMelFrontend::new(&FrontendConfig::default())?;
    let mut rows = Vec::new();
    let mut probe = Vec::new();
    let mut probe_labels = Vec::new();
    let per_class = spec.n_per_class + spec.test_per_class;
    for label in [Label::Ad, Label::Hc] {
        for i in 0..per_class {
            let id = format!("{}_{i:03}", label.to_string().to_lowercase());
            let w = synth_audio(&mut rng, label, spec.duration_s)?;
            let text = synth_text(&mut rng, label);
            let wav = PathBuf::from(format!("wav/{id}.wav"));
            let word_txt = PathBuf::from(format!("txt/{id}.txt"));
            let char_txt = PathBuf::from(format!("txt/{id}.chars.txt"));
            write_wav(&out_dir.join(&wav), &w)?;
            for (p, body) in [(&word_txt, text.clone()), (&char_txt, char_transcript_from_words(&text))] {
                let full = out_dir.join(p);
                fs::write(&full, body + "\n").map_err(|e| Error::io(full, e))?;
            }
            let age = (i % 5 != 4).then(|| rng.random_range(55..85));
            let gender = Some(if rng.random_bool(0.5) { Gender::M } else { Gender::F });
            probe.push(mean_log_mel(&read_wav(&out_dir.join(&wav))?, &frontend)?);
            probe_labels.push(label);
            rows.push(ManifestRow {
                id,
                wav,
                word_txt,
                char_txt: Some(char_txt),
                age,
                gender,
                label,
                split: if i < spec.n_per_class { Split::Train } else { Split::Test },
            });
        }
    }
    let acc = linear_probe_accuracy(&probe, &probe_labels);
    if acc < 1.0 {
        return Err(Error::invalid(format!("synthetic classes not linearly separable (probe accuracy {acc:.3})")));
    }
    let m = RecordingManifest { rows, base_dir: out_dir.to_path_buf() };
    write_manifest(&out_dir.join("manifest.csv"), &m)?;
    Ok(m)
}
