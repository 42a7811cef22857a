//! Linguistic encoder: a one-hot character CNN and a transformer word
//! encoder whose features are concatenated for classification.

mod chars;
mod config;
mod model;
mod vocab;

pub use chars::{
    char_encode, char_transcript_from_words, CharDictionary, CharMatrix, CHAR_PAD, CHAR_SYMBOLS, CHAR_UNK,
    CHAR_WORD_BOUNDARY,
};
pub use config::{LinguisticConfig, Pooling};
pub use model::{char_branch, ConvBranch, LinguisticModel, WordEncoder, CHAR_PREFIX, CLASSIFIER_PREFIX, WORD_PREFIX};
pub use vocab::{
    tokenize, TokenSequence, Vocabulary, CLS_ID, CLS_TOKEN, PAD_ID, PAD_TOKEN, SEP_ID, SEP_TOKEN, UNK_ID, UNK_TOKEN,
};
