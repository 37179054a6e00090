//! Word-level vocabulary.
//!
//! Tokens are lowercased whitespace-separated words; punctuation stays
//! attached. Ids 0..4 are reserved for the special tokens.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Corpus;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const N_SPECIAL: usize = 4;

pub const SPECIAL_TOKENS: [&str; N_SPECIAL] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercased whitespace tokens of a sentence.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    min_freq: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    min_freq: usize,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds the vocabulary from every sentence in the corpus. Tokens with
    /// frequency at least `min_freq` are kept, ordered by descending
    /// frequency with ties broken lexicographically.
    pub fn build(corpus: &Corpus, min_freq: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        Self::from_texts(corpus.pairs.iter().map(|p| p.text.as_str()), min_freq)
    }

    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Result<Self> {
        if min_freq == 0 {
            return Err(Error::InvalidArgument("min_freq must be at least 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(tok, n)| *n >= min_freq && !SPECIAL_TOKENS.contains(&tok.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(tokens, min_freq))
    }

    fn from_tokens(id_to_token: Vec<String>, min_freq: usize) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .skip(N_SPECIAL)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.len() == N_SPECIAL
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id
            .get(&token.to_lowercase())
            .copied()
            .unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// `BOS`, one id per word (`UNK` when unknown), `EOS`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::with_capacity(text.len() / 4 + 2);
        ids.push(BOS);
        ids.extend(words(text).iter().map(|w| self.id(w)));
        ids.push(EOS);
        ids
    }

    /// Joins words with single spaces. `PAD`, `BOS` and `EOS` are dropped
    /// and `UNK` renders as `<unk>`.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id).ok_or(Error::TokenOutOfRange {
                id,
                size: self.len(),
            })?;
            if !matches!(id, PAD | BOS | EOS) {
                out.push(tok);
            }
        }
        Ok(out.join(" "))
    }

    /// Stable content hash, used to tie checkpoints to their vocabulary.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.min_freq as u64).to_le_bytes());
        for t in &self.id_to_token {
            h.update((t.len() as u64).to_le_bytes());
            h.update(t.as_bytes());
        }
        h.finalize().into()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&VocabFile {
            min_freq: self.min_freq,
            tokens: self.id_to_token.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(s)?;
        if file.tokens.len() < N_SPECIAL
            || file.tokens[..N_SPECIAL]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::InvalidArgument(
                "vocabulary file must start with the special tokens".into(),
            ));
        }
        let vocab = Self::from_tokens(file.tokens, file.min_freq);
        if vocab.token_to_id.len() != vocab.len() - N_SPECIAL {
            return Err(Error::InvalidArgument("duplicate token in vocabulary file".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
