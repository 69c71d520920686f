use super::vocab::{words, Vocab, CLS, PAD, SEP};

/// Fixed sequence length, including the leading CLS position.
pub const SEQ_LEN: usize = 64;

/// Text fields of one meme in concatenation order.
#[derive(Debug, Clone, Copy, Default)]
pub struct TextFields<'a> {
    pub ocr: &'a str,
    pub entities: &'a [String],
    pub demographics: &'a [String],
}

/// Token ids padded or truncated to [`SEQ_LEN`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    /// 1 for real tokens (CLS included), 0 for padding.
    pub mask: Vec<u8>,
}

impl TokenSeq {
    /// Number of leading real tokens.
    pub fn real_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m == 1).count()
    }

    pub fn real_ids(&self) -> &[u32] {
        &self.ids[..self.real_len()]
    }
}

/// `[CLS] ocr [SEP] entities [SEP] demographics`, lowercased and split on
/// whitespace. Empty groups contribute no SEP.
pub fn tokenize(fields: TextFields<'_>, vocab: &Vocab) -> TokenSeq {
    let groups: [Vec<u32>; 3] = [
        words(fields.ocr).map(|w| vocab.id(&w)).collect(),
        fields.entities.iter().flat_map(|e| words(e)).map(|w| vocab.id(&w)).collect(),
        fields.demographics.iter().flat_map(|e| words(e)).map(|w| vocab.id(&w)).collect(),
    ];
    let mut ids = vec![CLS];
    for group in groups.iter().filter(|g| !g.is_empty()) {
        if ids.len() > 1 {
            ids.push(SEP);
        }
        ids.extend_from_slice(group);
    }
    ids.truncate(SEQ_LEN);
    let real = ids.len();
    ids.resize(SEQ_LEN, PAD);
    let mask = (0..SEQ_LEN).map(|i| u8::from(i < real)).collect();
    TokenSeq { ids, mask }
}

/// Words for the real, non-reserved tokens of `seq`.
pub fn detokenize(seq: &TokenSeq, vocab: &Vocab) -> Vec<String> {
    seq.real_ids()
        .iter()
        .filter(|&&id| id > SEP)
        .filter_map(|&id| vocab.token(id).map(str::to_string))
        .collect()
}
