use crate::tensor::Tensor;

/// The 32-symbol character alphabet, in index order.
pub const CHAR_SYMBOLS: [&str; 32] = [
    "<pad>", "<s>", "</s>", "<unk>", "|", "E", "T", "A", "O", "N", "I", "H", "S", "R", "D", "L", "U", "M", "W", "C",
    "F", "G", "Y", "P", "B", "V", "K", "'", "X", "J", "Q", "Z",
];

pub const CHAR_PAD: usize = 0;
pub const CHAR_UNK: usize = 3;
pub const CHAR_WORD_BOUNDARY: usize = 4;

/// Fixed character dictionary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CharDictionary;

impl CharDictionary {
    pub const SIZE: usize = CHAR_SYMBOLS.len();

    /// Index of a transcript character. Letters are case-insensitive, a
    /// space is a word boundary, everything else unknown is `<unk>`.
    pub fn index(&self, c: char) -> usize {
        let c = if c == ' ' { '|' } else { c.to_ascii_uppercase() };
        CHAR_SYMBOLS[4..].iter().position(|s| s.len() == 1 && s.starts_with(c)).map_or(CHAR_UNK, |i| i + 4)
    }

    /// Index of a whole symbol (including the bracketed specials).
    pub fn symbol_index(&self, symbol: &str) -> Option<usize> {
        CHAR_SYMBOLS.iter().position(|s| *s == symbol)
    }

    pub fn symbol(&self, index: usize) -> Option<&'static str> {
        CHAR_SYMBOLS.get(index).copied()
    }
}

/// Character-level transcript derived from word-level text: uppercase, with
/// spaces as `|`.
pub fn char_transcript_from_words(text: &str) -> String {
    text.split_whitespace().map(str::to_uppercase).collect::<Vec<_>>().join("|")
}

/// `L_max×32` one-hot matrix, zero rows past the transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct CharMatrix {
    matrix: Tensor,
    /// Character count of the transcript before truncation.
    pub true_length: usize,
}

impl CharMatrix {
    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn max_len(&self) -> usize {
        self.matrix.shape()[0]
    }

    /// Rows that carry a one-hot character.
    pub fn filled_rows(&self) -> usize {
        self.true_length.min(self.max_len())
    }
}

pub fn char_encode(text: &str, dict: &CharDictionary, max_len: usize) -> CharMatrix {
    let width = CharDictionary::SIZE;
    let mut data = vec![0.0; max_len.max(1) * width];
    let mut true_length = 0;
    for (i, c) in text.chars().enumerate() {
        if i < max_len {
            data[i * width + dict.index(c)] = 1.0;
        }
        true_length += 1;
    }
    let matrix = Tensor::new(&[max_len.max(1), width], data).expect("consistent shape");
    CharMatrix { matrix, true_length }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dictionary_lookup() {
        let d = CharDictionary;
        assert_eq!(CharDictionary::SIZE, 32);
        assert_eq!(d.index('H'), 11);
        assert_eq!(d.index('i'), 10);
        assert_eq!(d.index(' '), CHAR_WORD_BOUNDARY);
        assert_eq!(d.index('|'), CHAR_WORD_BOUNDARY);
        assert_eq!(d.index('\''), 27);
        assert_eq!(d.index('7'), CHAR_UNK);
        assert_eq!(d.index('é'), CHAR_UNK);
        assert_eq!(d.symbol_index("<pad>"), Some(CHAR_PAD));
    }

    #[test]
    fn dictionary_is_a_bijection() {
        let d = CharDictionary;
        for i in 0..32 {
            let s = d.symbol(i).unwrap();
            assert_eq!(d.symbol_index(s), Some(i));
            if s.len() == 1 {
                assert_eq!(d.index(s.chars().next().unwrap()), i);
            }
        }
        let mut sorted = CHAR_SYMBOLS.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 32);
    }

    #[test]
    fn encode_examples() {
        let d = CharDictionary;
        let m = char_encode("", &d, 16);
        assert_eq!(m.true_length, 0);
        assert!(m.matrix().data().iter().all(|&v| v == 0.0));

        let m = char_encode("HI THERE", &d, 16);
        assert_eq!(m.matrix().row(0)[11], 1.0);
        assert_eq!(m.matrix().row(1)[10], 1.0);
        assert_eq!(m.matrix().row(2)[4], 1.0);
        assert_eq!(m.true_length, 8);
        assert_eq!(m.matrix().row(8).iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn derived_char_transcript() {
        assert_eq!(char_transcript_from_words(" the  cookie jar "), "THE|COOKIE|JAR");
    }
}
