use proptest::prelude::*;
use swinbert_core::linguistic::{
    char_encode, char_transcript_from_words, tokenize, CharDictionary, ConvBranch, LinguisticConfig, LinguisticModel,
    TokenSequence, Vocabulary, WordEncoder, CHAR_SYMBOLS, CLS_ID, SEP_ID,
};
use swinbert_core::tensor::{Graph, ParamStore};

fn small_cfg() -> LinguisticConfig {
    LinguisticConfig { char_len_max: 64, word_len_max: 32, ..LinguisticConfig::desk() }
}

fn vocab() -> Vocabulary {
    Vocabulary::build(["the boy is taking a cookie from the jar", "uh the mother is washing dishes"])
}

#[test]
fn long_string_truncates_to_l_max() {
    let text: String = "THE COOKIE JAR IS ON THE SHELF ".chars().cycle().take(5000).collect();
    let m = char_encode(&text, &CharDictionary, 3000);
    assert_eq!(m.matrix().shape(), &[3000, 32]);
    assert_eq!(m.true_length, 5000);
    for r in 0..3000 {
        assert_eq!(m.matrix().row(r).iter().sum::<f64>(), 1.0);
    }
}

#[test]
fn dictionary_decode_encode_is_identity() {
    assert_eq!(CharDictionary::SIZE, 32);
    for (i, s) in CHAR_SYMBOLS.iter().enumerate() {
        assert_eq!(CharDictionary.symbol(i), Some(*s));
        assert_eq!(CharDictionary.symbol_index(s), Some(i));
    }
    assert_eq!(char_transcript_from_words("the  cookie jar"), "THE|COOKIE|JAR");
}

#[test]
fn zero_char_matrix_gives_zero_feature() {
    let mut store = ParamStore::new();
    let branch = ConvBranch::new(&mut store, 3, "char", [32, 16, 8], 3, 16);
    let m = char_encode("", &CharDictionary, 40);
    let g = Graph::new();
    let f = branch.forward(&g, &store, g.constant(m.matrix().clone()).transpose().unwrap()).unwrap().value();
    assert_eq!(f.shape(), &[1, 16]);
    assert!(f.data().iter().all(|&v| v == 0.0));
    // width does not depend on transcript length
    for text in ["A", "THE|BOY|AND|THE|GIRL"] {
        let m = char_encode(text, &CharDictionary, 40);
        let f = branch.forward(&g, &store, g.constant(m.matrix().clone()).transpose().unwrap()).unwrap();
        assert_eq!(f.shape(), vec![1, 16]);
    }
}

#[test]
fn vocabulary_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("vocab.txt");
    let v = vocab();
    v.save(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().take(4).collect::<Vec<_>>(), ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]);
    assert_eq!(Vocabulary::load(&p).unwrap(), v);
    std::fs::write(&p, "the\nboy\n").unwrap();
    assert!(Vocabulary::load(&p).is_err());
}

#[test]
fn word_encoder_smoke_and_padding_invariance() {
    let cfg = small_cfg();
    let v = vocab();
    let mut store = ParamStore::new();
    let enc = WordEncoder::new(&cfg, v.len(), &mut store, 5).unwrap();
    let g = Graph::new();
    let minimal = tokenize("", &v, 32).unwrap();
    assert_eq!(minimal.ids, vec![CLS_ID, SEP_ID]);
    let f = enc.forward(&g, &store, &minimal).unwrap().value();
    assert_eq!(f.shape(), &[1, cfg.d_model]);
    assert!(f.is_finite());

    let t = tokenize("the boy is taking a cookie", &v, 32).unwrap();
    let a = enc.forward(&g, &store, &t).unwrap().value();
    let b = enc.forward(&g, &store, &t.padded(20)).unwrap().value();
    assert!(a.max_abs_diff(&b) < 1e-9);
}

#[test]
fn out_of_range_token_is_an_error() {
    let cfg = small_cfg();
    let mut store = ParamStore::new();
    let enc = WordEncoder::new(&cfg, 10, &mut store, 5).unwrap();
    let g = Graph::new();
    let bad = TokenSequence { ids: vec![CLS_ID, 10, SEP_ID], attention: vec![true; 3] };
    assert!(enc.forward(&g, &store, &bad).is_err());
}

#[test]
fn char_branch_parameter_count() {
    let v = vocab();
    let with = small_cfg();
    let without = LinguisticConfig { use_char_branch: false, ..small_cfg() };
    let (mut a, mut b) = (ParamStore::new(), ParamStore::new());
    let m_with = LinguisticModel::new(&with, v.len(), &mut a, 1).unwrap();
    LinguisticModel::new(&without, v.len(), &mut b, 1).unwrap();
    let [c0, c1, c2] = [with.char_channels[0], with.char_channels[1], with.char_channels[2]];
    let k = with.char_kernel;
    let d = with.char_feature_dim;
    let branch = (c1 * c0 * k + c1) + (c2 * c1 * k + c2) + (c2 * d + d);
    let widened = d * with.num_classes;
    assert_eq!(a.num_scalars() - b.num_scalars(), branch + widened);

    let g = Graph::new();
    let t = tokenize("the jar", &v, 32).unwrap();
    let chars = char_encode("THE|JAR", &CharDictionary, with.char_len_max);
    assert_eq!(m_with.forward(&g, &a, &t, Some(&chars)).unwrap().shape(), vec![1, 2]);
    assert!(m_with.forward(&g, &a, &t, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn char_matrix_row_sum_law(text in ".{0,80}", l_max in 1usize..60) {
        let m = char_encode(&text, &CharDictionary, l_max);
        let l = text.chars().count();
        prop_assert_eq!(m.true_length, l);
        prop_assert_eq!(m.matrix().shape(), &[l_max, 32]);
        for r in 0..l_max {
            let s: f64 = m.matrix().row(r).iter().sum();
            prop_assert_eq!(s, if r < l.min(l_max) { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn tokenizer_bounds(words in prop::collection::vec("[a-z]{1,6}", 0..80), max in 2usize..40) {
        let v = vocab();
        let t = tokenize(&words.join(" "), &v, max).unwrap();
        prop_assert!(t.len() <= max);
        prop_assert_eq!(t.ids[0], CLS_ID);
        prop_assert_eq!(*t.ids.last().unwrap(), SEP_ID);
        prop_assert!(t.ids.iter().all(|&i| i < v.len()));
    }
}
