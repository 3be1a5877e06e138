use crate::error::{invalid, Result};

/// Character-level corpus with a 90/10 train/validation split.
#[derive(Clone, Debug, PartialEq)]
pub struct TextCorpus {
    pub text: String,
    /// Sorted unique characters; a character's id is its index.
    pub vocab: Vec<char>,
    pub ids: Vec<usize>,
    /// First validation token.
    pub boundary: usize,
}

pub fn tokenize_chars(text: &str) -> Result<TextCorpus> {
    if text.is_empty() {
        return Err(invalid("tokenize_chars", "empty text"));
    }
    let mut vocab: Vec<char> = text.chars().collect();
    vocab.sort_unstable();
    vocab.dedup();
    let ids: Vec<usize> = text.chars().map(|c| vocab.binary_search(&c).expect("char in vocab")).collect();
    let boundary = ids.len() * 9 / 10;
    Ok(TextCorpus {
        text: text.to_string(),
        vocab,
        ids,
        boundary,
    })
}

impl TextCorpus {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn train(&self) -> &[usize] {
        &self.ids[..self.boundary]
    }

    pub fn val(&self) -> &[usize] {
        &self.ids[self.boundary..]
    }

    /// Ids of `s`, or the characters missing from the vocabulary.
    pub fn encode(&self, s: &str) -> std::result::Result<Vec<usize>, Vec<char>> {
        encode_with(&self.vocab, s)
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.vocab[i]).collect()
    }
}

/// Encodes `s` against a sorted vocabulary, listing unknown characters.
pub(crate) fn encode_with(vocab: &[char], s: &str) -> std::result::Result<Vec<usize>, Vec<char>> {
    let mut missing = Vec::new();
    let ids = s
        .chars()
        .filter_map(|c| match vocab.binary_search(&c) {
            Ok(i) => Some(i),
            Err(_) => {
                if !missing.contains(&c) {
                    missing.push(c);
                }
                None
            }
        })
        .collect();
    if missing.is_empty() {
        Ok(ids)
    } else {
        Err(missing)
    }
}
