//! Text tokenization, the trainable text encoder, and region-feature files.

mod features;
mod text;
mod tokenize;
mod vocab;

pub use features::{load_region_features, write_features, RegionFeatures, MAGIC, VERSION};
pub use text::{encode_text, TextEncoder, TextEncoderConfig, TextEncoding};
pub use tokenize::{detokenize, tokenize, TextFields, TokenSeq, SEQ_LEN};
pub use vocab::{words, Vocab, CLS, PAD, SEP, UNK};
