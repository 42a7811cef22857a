#![allow(dead_code)]

use std::path::Path;

use proptest::prelude::*;
use swinbert_core::acoustic::Gender;
use swinbert_core::data::{generate_synthetic, load_manifest, Label, ManifestRow, Split, SynthSpec};
use swinbert_core::linguistic::Vocabulary;
use swinbert_core::model::{Example, ModelConfig, Variant};
use swinbert_core::train::{build_examples, build_vocabulary};

/// Synthetic corpus under `dir` featurised for `cfg`.
pub fn synth_examples(dir: &Path, spec: &SynthSpec, cfg: &ModelConfig) -> (Vec<Example>, Vocabulary) {
    generate_synthetic(spec, dir).unwrap();
    let m = load_manifest(&dir.join("manifest.csv")).unwrap();
    let vocab = build_vocabulary(&m, &m.rows).unwrap();
    let ex = build_examples(&m, &m.rows, cfg, Some(&vocab)).unwrap();
    (ex, vocab)
}

pub fn desk(variant: Variant) -> ModelConfig {
    ModelConfig::desk(variant)
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Rows with distinct ids and relative paths under `wav/` and `txt/`.
pub fn arb_rows() -> impl Strategy<Value = Vec<ManifestRow>> {
    prop::collection::btree_set("[a-z][a-z0-9_]{0,8}", 1..12).prop_flat_map(|ids| {
        let n = ids.len();
        (
            Just(ids.into_iter().collect::<Vec<_>>()),
            prop::collection::vec(
                (
                    any::<bool>(),
                    prop::option::of(0u32..121),
                    prop::option::of(prop::sample::select(vec![Gender::M, Gender::F, Gender::Unknown])),
                    any::<bool>(),
                    any::<bool>(),
                ),
                n,
            ),
        )
            .prop_map(|(ids, attrs)| {
                ids.into_iter()
                    .zip(attrs)
                    .map(|(id, (chars, age, gender, ad, train))| ManifestRow {
                        wav: format!("wav/{id}.wav").into(),
                        word_txt: format!("txt/{id}.txt").into(),
                        char_txt: chars.then(|| format!("txt/{id}.chars.txt").into()),
                        age,
                        gender,
                        label: if ad { Label::Ad } else { Label::Hc },
                        split: if train { Split::Train } else { Split::Test },
                        id,
                    })
                    .collect()
            })
    })
}

/// Creates every file `rows` reference, empty, under `dir`.
pub fn touch_files(dir: &Path, rows: &[ManifestRow]) {
    for d in ["wav", "txt"] {
        std::fs::create_dir_all(dir.join(d)).unwrap();
    }
    for r in rows {
        for p in [Some(&r.wav), Some(&r.word_txt), r.char_txt.as_ref()].into_iter().flatten() {
            std::fs::write(dir.join(p), b"").unwrap();
        }
    }
}
