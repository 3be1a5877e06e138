//! Saved language models and autoregressive sampling.

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use score_core::diffcore::{ParamStore, Tape, Tensor};
use score_core::dynamics::DepthConfig;
use score_core::models::{LanguageModel, ModelConfig};
use score_core::training::SequenceModel;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub depth: DepthConfig,
    pub vocab: Vec<char>,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Rebuilds the model with the saved weights.
    pub fn restore(&self) -> Result<(LanguageModel, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = LanguageModel::new(&mut store, self.vocab.len(), &self.model, self.depth, &mut rng)?;
        store.import(&self.params)?;
        Ok((model, store))
    }
}

/// Appends `length` sampled characters to `prompt` and returns the whole
/// text. Only the last `context` characters condition each step.
/// Temperature 0 decodes greedily.
pub fn generate(checkpoint: &Checkpoint, prompt: &str, length: usize, temperature: f64, seed: u64) -> Result<String> {
    if length == 0 {
        return Err(CliError::config("length must be at least 1"));
    }
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(CliError::config("temperature must be a non-negative number"));
    }
    if prompt.is_empty() {
        return Err(CliError::config("prompt must not be empty"));
    }
    let mut missing: Vec<char> = prompt.chars().filter(|c| checkpoint.vocab.binary_search(c).is_err()).collect();
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.dedup();
        return Err(CliError::OutOfVocabulary(missing));
    }
    let mut ids: Vec<usize> = prompt
        .chars()
        .map(|c| checkpoint.vocab.binary_search(&c).expect("checked above"))
        .collect();
    let (model, store) = checkpoint.restore()?;
    let context = model.context();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..length {
        let window = &ids[ids.len().saturating_sub(context)..];
        let mut tape = Tape::new();
        let logits = model.logits(&mut tape, &store, window, window.len())?;
        let logits = tape.value(logits);
        let last = logits.row(logits.rows() - 1);
        let next = if temperature == 0.0 {
            argmax(last)
        } else {
            let max = last.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = last.iter().map(|l| ((l - max) / temperature).exp()).collect();
            match WeightedIndex::new(&weights) {
                Ok(dist) => dist.sample(&mut rng),
                Err(_) => argmax(last),
            }
        };
        ids.push(next);
    }
    Ok(ids.iter().map(|&i| checkpoint.vocab[i]).collect())
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use score_core::dynamics::{IntegratorKind, Schedule, Wiring};

    use super::*;

    fn tiny() -> Checkpoint {
        let model = ModelConfig {
            width: 8,
            heads: 2,
            context: 4,
            ..ModelConfig::default()
        };
        let depth = DepthConfig::new(Wiring::Score, 2, IntegratorKind::Euler, Schedule::InverseK).unwrap();
        let vocab: Vec<char> = "\n abcde".chars().collect();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        LanguageModel::new(&mut store, vocab.len(), &model, depth, &mut rng).unwrap();
        Checkpoint {
            model,
            depth,
            vocab,
            params: store.export(),
        }
    }

    #[test]
    fn greedy_decoding_ignores_the_seed() {
        let ck = tiny();
        let a = generate(&ck, "abc", 12, 0.0, 1).unwrap();
        let b = generate(&ck, "abc", 12, 0.0, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.chars().count(), 15);
    }

    #[test]
    fn length_one_appends_one_character() {
        let ck = tiny();
        let out = generate(&ck, "ab", 1, 0.8, 0).unwrap();
        assert_eq!(out.chars().count(), 3);
        assert!(out.starts_with("ab"));
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let ck = tiny();
        let a = generate(&ck, "a", 30, 0.8, 7).unwrap();
        assert_eq!(a, generate(&ck, "a", 30, 0.8, 7).unwrap());
        assert!(a.chars().all(|c| ck.vocab.contains(&c)));
    }

    #[test]
    fn prompts_longer_than_the_context_are_truncated() {
        let ck = tiny();
        let out = generate(&ck, "abcdeabcde", 3, 0.0, 0).unwrap();
        assert_eq!(out.chars().count(), 13);
        assert_eq!(&out[..3], "abc");
        let tail = generate(&ck, "eabcde", 3, 0.0, 0).unwrap();
        assert_eq!(out[10..], tail[6..]);
    }

    #[test]
    fn out_of_vocabulary_characters_are_listed() {
        let ck = tiny();
        let err = generate(&ck, "aXbZX", 2, 0.5, 0).unwrap_err();
        match &err {
            CliError::OutOfVocabulary(chars) => assert_eq!(chars, &vec!['X', 'Z']),
            other => panic!("unexpected {other}"),
        }
        assert!(err.to_string().contains("'X', 'Z'"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let ck = tiny();
        assert!(generate(&ck, "a", 0, 0.5, 0).is_err());
        assert!(generate(&ck, "", 3, 0.5, 0).is_err());
        assert!(generate(&ck, "a", 3, -1.0, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_restores_weights() {
        let ck = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        std::fs::write(&path, serde_json::to_string(&ck).unwrap()).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let (_, store) = back.restore().unwrap();
        assert_eq!(store.export(), ck.params);
    }
}
