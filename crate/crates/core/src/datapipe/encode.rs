use super::vocab::{TokenId, Vocabulary, END, NULL, START};

/// Default cap on words per sentence.
pub const DEFAULT_MAX_LEN: usize = 20;

/// Lays out `ids` as `START, ids[..max_len], END, NULL...` in exactly
/// `max_len + 2` slots.
pub fn encode_ids(ids: &[TokenId], max_len: usize) -> Vec<TokenId> {
    let kept = &ids[..ids.len().min(max_len)];
    let mut out = Vec::with_capacity(max_len + 2);
    out.push(START);
    out.extend_from_slice(kept);
    out.push(END);
    out.resize(max_len + 2, NULL);
    out
}

/// Whitespace-tokenizes, truncates to the first `max_len` words, maps
/// unknown words to `<UNK>` and pads.
pub fn encode_sentence(vocab: &Vocabulary, sentence: &str, max_len: usize) -> Vec<TokenId> {
    let ids: Vec<TokenId> = sentence
        .split_whitespace()
        .take(max_len)
        .map(|t| vocab.id(t))
        .collect();
    encode_ids(&ids, max_len)
}

/// The encoding of a sentence with no words: `START, END, NULL...`.
pub fn empty_sentence(max_len: usize) -> Vec<TokenId> {
    encode_ids(&[], max_len)
}

/// Word ids between `START` and the first `END` (or the end of the slice).
pub fn content_ids(encoded: &[TokenId]) -> &[TokenId] {
    let body = encoded.strip_prefix(&[START]).unwrap_or(encoded);
    let end = body.iter().position(|&t| t == END).unwrap_or(body.len());
    &body[..end]
}

pub fn decode_ids(vocab: &Vocabulary, ids: &[TokenId]) -> String {
    ids.iter()
        .map(|&id| vocab.token(id).unwrap_or("<?>"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Loss mask over the `max_len + 1` prediction slots: 1 up to and
/// including the slot that predicts `END`.
pub fn loss_mask(encoded: &[TokenId]) -> Vec<f64> {
    let slots = encoded.len().saturating_sub(1);
    let end = encoded.iter().position(|&t| t == END).unwrap_or(slots);
    (0..slots).map(|t| if t < end { 1.0 } else { 0.0 }).collect()
}
