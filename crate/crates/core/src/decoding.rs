//! Evaluation-time generation.
//!
//! Teacher-forced decoding feeds the gold prefix at every step and takes
//! the raw argmax. Free-running decoding is beam search from `BOS` over the
//! model's own outputs, with a CTRL-style repetition penalty and
//! no-repeat n-gram blocking applied to the logits at every step.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::WordFeature;
use crate::error::{Error, Result};
use crate::model::layers::log_softmax;
use crate::model::Params;
use crate::tokenizer::{BOS, EOS, PAD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// 1.0 disables the penalty.
    pub repetition_penalty: f64,
    /// 0 disables n-gram blocking.
    pub no_repeat_ngram: usize,
    /// Most tokens generated, `EOS` included.
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 5,
            repetition_penalty: 5.0,
            no_repeat_ngram: 2,
            max_len: 48,
        }
    }
}

impl DecodeConfig {
    /// Beam of one with both penalties disabled.
    pub fn greedy(max_len: usize) -> Self {
        DecodeConfig {
            beam_size: 1,
            repetition_penalty: 1.0,
            no_repeat_ngram: 0,
            max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if !(self.repetition_penalty >= 1.0 && self.repetition_penalty.is_finite()) {
            return Err(Error::Config(format!(
                "repetition_penalty must be >= 1, got {}",
                self.repetition_penalty
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("decode max_len must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodingMode {
    TeacherForced,
    FreeRunning,
}

impl DecodingMode {
    pub const ALL: [DecodingMode; 2] = [DecodingMode::FreeRunning, DecodingMode::TeacherForced];

    pub fn as_str(self) -> &'static str {
        match self {
            DecodingMode::TeacherForced => "teacher_forced",
            DecodingMode::FreeRunning => "free_running",
        }
    }
}

impl fmt::Display for DecodingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher_forced" => Ok(DecodingMode::TeacherForced),
            "free_running" => Ok(DecodingMode::FreeRunning),
            _ => Err(Error::InvalidArgument(format!("unknown decoding mode {s:?}"))),
        }
    }
}

/// Anything that scores the next token given a prefix starting with `BOS`.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn next_logits(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// A model bound to one encoded input sequence.
pub struct EncodedInput<'a> {
    params: &'a Params,
    memory: Array2<f64>,
}

impl<'a> EncodedInput<'a> {
    pub fn new(params: &'a Params, features: &[WordFeature]) -> Result<Self> {
        Ok(EncodedInput {
            params,
            memory: params.encode(features)?,
        })
    }
}

impl StepScorer for EncodedInput<'_> {
    fn vocab_size(&self) -> usize {
        self.params.config.vocab_size
    }

    fn next_logits(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let logits = self.params.decode_logits(&self.memory, prefix)?;
        Ok(logits.row(logits.nrows() - 1).to_vec())
    }
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Divides positive logits of previously generated tokens by `penalty` and
/// multiplies non-positive ones. Each distinct token is penalized once.
pub fn apply_repetition_penalty(logits: &[f64], history: &[usize], penalty: f64) -> Vec<f64> {
    let mut out = logits.to_vec();
    let mut seen = vec![false; logits.len()];
    for &tok in history {
        if tok < out.len() && !seen[tok] {
            seen[tok] = true;
            let v = out[tok];
            out[tok] = if v > 0.0 { v / penalty } else { v * penalty };
        }
    }
    out
}

/// Sets to -inf every token that would complete an n-gram already present
/// in `history`. `n == 0` disables the ban.
pub fn ban_repeated_ngrams(logits: &[f64], history: &[usize], n: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    if n == 0 || history.len() + 1 < n {
        return out;
    }
    let context = &history[history.len() + 1 - n..];
    for gram in history.windows(n) {
        if &gram[..n - 1] == context {
            if let Some(v) = out.get_mut(gram[n - 1]) {
                *v = f64::NEG_INFINITY;
            }
        }
    }
    out
}

/// Log-probabilities over the next token after masking `PAD`/`BOS` and
/// applying the repetition penalty and then the n-gram ban.
pub fn adjusted_log_probs(logits: &[f64], generated: &[usize], dc: &DecodeConfig) -> Vec<f64> {
    let mut masked = logits.to_vec();
    for special in [PAD, BOS] {
        if let Some(v) = masked.get_mut(special) {
            *v = f64::NEG_INFINITY;
        }
    }
    let penalized = if dc.repetition_penalty == 1.0 {
        masked
    } else {
        apply_repetition_penalty(&masked, generated, dc.repetition_penalty)
    };
    log_softmax(&ban_repeated_ngrams(&penalized, generated, dc.no_repeat_ngram))
}

/// Argmax prediction at every gold position; output is one shorter than `gold`.
pub fn teacher_forced_generate(params: &Params, features: &[WordFeature], gold: &[usize]) -> Result<Vec<usize>> {
    if gold.len() < 2 || gold[0] != BOS || gold[gold.len() - 1] != EOS {
        return Err(Error::InvalidArgument(
            "gold sequence must start with BOS and end with EOS".into(),
        ));
    }
    let logits = params.forward(features, &gold[..gold.len() - 1])?;
    Ok(argmax_rows(&logits))
}

/// Row-wise argmax with lowest-id tie-break.
pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| argmax(&row.to_vec()))
        .collect()
}

/// Plain argmax rollout from `BOS`, never emitting `PAD` or `BOS`.
pub fn greedy_generate(scorer: &impl StepScorer, max_len: usize) -> Result<Vec<usize>> {
    let mut prefix = vec![BOS];
    while prefix.len() <= max_len {
        let mut logits = scorer.next_logits(&prefix)?;
        logits[PAD] = f64::NEG_INFINITY;
        logits[BOS] = f64::NEG_INFINITY;
        let tok = argmax(&logits);
        prefix.push(tok);
        if tok == EOS {
            break;
        }
    }
    prefix.remove(0);
    Ok(prefix)
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    log_prob: f64,
}

impl Hypothesis {
    fn normalized(&self) -> f64 {
        self.log_prob / self.tokens.len() as f64
    }
}

/// Higher score first, then lexicographically smaller token sequence.
fn rank(a_score: f64, a: &[usize], b_score: f64, b: &[usize]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.cmp(b))
}

/// Length-normalized beam search.
///
/// Each step expands every live hypothesis by every token with a finite
/// adjusted log-probability and keeps the `beam_size` best candidates by
/// summed log-probability. Kept candidates ending in `EOS`, or reaching
/// `max_len`, are finished. Search stops when no live hypothesis remains or
/// `beam_size` hypotheses have finished; the finished hypothesis with the
/// best summed log-probability divided by its length wins.
pub fn beam_search(scorer: &impl StepScorer, dc: &DecodeConfig) -> Result<Vec<usize>> {
    dc.validate()?;
    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut prefix = Vec::with_capacity(dc.max_len + 1);

    for step in 1..=dc.max_len {
        let mut candidates = Vec::new();
        for hyp in &alive {
            prefix.clear();
            prefix.push(BOS);
            prefix.extend_from_slice(&hyp.tokens);
            let logits = scorer.next_logits(&prefix)?;
            for (tok, lp) in adjusted_log_probs(&logits, &hyp.tokens, dc).into_iter().enumerate() {
                if lp.is_finite() {
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(tok);
                    candidates.push(Hypothesis {
                        tokens,
                        log_prob: hyp.log_prob + lp,
                    });
                }
            }
        }
        candidates.sort_by(|a, b| rank(a.log_prob, &a.tokens, b.log_prob, &b.tokens));
        candidates.truncate(dc.beam_size);

        alive.clear();
        for c in candidates {
            if c.tokens.last() == Some(&EOS) || step == dc.max_len {
                finished.push(c);
            } else {
                alive.push(c);
            }
        }
        if alive.is_empty() || finished.len() >= dc.beam_size {
            break;
        }
    }

    let pool = if finished.is_empty() { alive } else { finished };
    Ok(pool
        .into_iter()
        .min_by(|a, b| rank(a.normalized(), &a.tokens, b.normalized(), &b.tokens))
        .map(|h| h.tokens)
        .unwrap_or_default())
}

/// Free-running generation for one input sequence.
pub fn beam_search_generate(params: &Params, features: &[WordFeature], dc: &DecodeConfig) -> Result<Vec<usize>> {
    if dc.max_len > params.config.max_len {
        return Err(Error::LengthOverflow {
            len: dc.max_len,
            max_len: params.config.max_len,
        });
    }
    beam_search(&EncodedInput::new(params, features)?, dc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};

    /// Next-token logits looked up by (last token, position).
    struct TableModel {
        vocab: usize,
        table: Vec<Vec<f64>>,
    }

    impl StepScorer for TableModel {
        fn vocab_size(&self) -> usize {
            self.vocab
        }

        fn next_logits(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            let last = *prefix.last().unwrap();
            Ok(self.table[(last * 7 + prefix.len()) % self.table.len()].clone())
        }
    }

    #[test]
    fn repetition_penalty_rule() {
        let logits = [2.0, -1.0, 0.5, 3.0];
        assert_eq!(apply_repetition_penalty(&logits, &[0, 1, 0], 1.0), logits.to_vec());
        let out = apply_repetition_penalty(&logits, &[0, 1, 0], 5.0);
        assert_eq!(out, vec![0.4, -5.0, 0.5, 3.0]);
    }

    #[test]
    fn ngram_ban_rule() {
        let (a, b, c) = (4, 5, 6);
        let logits = vec![0.0; 8];
        let out = ban_repeated_ngrams(&logits, &[a, b, c, a], 2);
        assert_eq!(out[b], f64::NEG_INFINITY);
        assert_eq!(out.iter().filter(|v| v.is_infinite()).count(), 1);

        assert_eq!(ban_repeated_ngrams(&logits, &[a], 2), logits);
        assert_eq!(ban_repeated_ngrams(&logits, &[a, b, c, a], 0), logits);

        let unigram = ban_repeated_ngrams(&logits, &[a, b], 1);
        assert!(unigram[a].is_infinite() && unigram[b].is_infinite());

        let trigram = ban_repeated_ngrams(&logits, &[a, b, c, a, b], 3);
        assert_eq!(trigram[c], f64::NEG_INFINITY);
        assert_eq!(trigram.iter().filter(|v| v.is_infinite()).count(), 1);
    }

    #[test]
    fn teacher_forcing_contract() {
        let cfg = ModelConfig {
            feature_dim: 4,
            d_model: 8,
            n_layers_enc: 1,
            n_heads: 2,
            n_layers_dec: 1,
            d_ff: 8,
            vocab_size: 9,
            max_len: 12,
        };
        let mut params = init_model(&cfg, 2).unwrap();
        let features = vec![WordFeature::new(vec![0.3, -0.2, 0.1, 0.9]); 3];
        let gold = [BOS, 4, 7, 5, EOS];

        let out = teacher_forced_generate(&params, &features, &gold).unwrap();
        assert_eq!(out.len(), gold.len() - 1);

        params.output.weight.fill(0.0);
        let out = teacher_forced_generate(&params, &features, &gold).unwrap();
        assert_eq!(out, vec![PAD; 4]);

        assert!(teacher_forced_generate(&params, &features, &[4, 5, EOS]).is_err());
        assert!(teacher_forced_generate(&params, &features, &[BOS]).is_err());
    }

    #[test]
    fn memorized_gold_is_reproduced() {
        let gold = [BOS, 4, 6, 5, EOS];
        let mut logits = Array2::zeros((gold.len() - 1, 8));
        for (t, &next) in gold[1..].iter().enumerate() {
            logits[[t, next]] = 1.0;
        }
        assert_eq!(argmax_rows(&logits), gold[1..].to_vec());
        assert_eq!(argmax_rows(&Array2::zeros((3, 8))), vec![PAD; 3]);
    }

    fn random_table(vocab: usize, rows: usize, seed: u64) -> TableModel {
        use rand::Rng;
        let mut rng = crate::rng::seeded(seed);
        TableModel {
            vocab,
            table: (0..rows)
                .map(|_| (0..vocab).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect(),
        }
    }

    #[test]
    fn beam_of_one_is_greedy() {
        for seed in 0..30 {
            let m = random_table(7, 13, seed);
            let greedy = greedy_generate(&m, 6).unwrap();
            let beam = beam_search(&m, &DecodeConfig::greedy(6)).unwrap();
            assert_eq!(greedy, beam, "seed {seed}");
        }
    }

    #[test]
    fn beam_beats_greedy_on_a_trap() {
        // vocab: PAD BOS EOS UNK w4. Greedy takes w4 first (0.6) but then
        // faces a flat distribution; UNK first (0.4) leads to a near-certain EOS.
        struct Trap;
        impl StepScorer for Trap {
            fn vocab_size(&self) -> usize {
                5
            }
            fn next_logits(&self, prefix: &[usize]) -> Result<Vec<f64>> {
                let ln = f64::ln;
                Ok(match prefix {
                    [BOS] => vec![0.0, 0.0, ln(1e-9), ln(0.4), ln(0.6)],
                    [BOS, 3] => vec![0.0, 0.0, ln(0.98), ln(0.01), ln(0.01)],
                    _ => vec![0.0, 0.0, ln(0.34), ln(0.33), ln(0.33)],
                })
            }
        }
        let greedy = greedy_generate(&Trap, 3).unwrap();
        assert_eq!(greedy[0], 4);
        let beam = beam_search(
            &Trap,
            &DecodeConfig {
                beam_size: 2,
                ..DecodeConfig::greedy(3)
            },
        )
        .unwrap();
        assert_eq!(beam, vec![3, EOS]);
    }

    #[test]
    fn outputs_respect_special_token_and_bigram_rules() {
        for seed in 0..20 {
            let m = random_table(9, 11, seed);
            let dc = DecodeConfig {
                beam_size: 3,
                repetition_penalty: 5.0,
                no_repeat_ngram: 2,
                max_len: 12,
            };
            let out = beam_search(&m, &dc).unwrap();
            assert!(!out.contains(&PAD) && !out.contains(&BOS));
            let eos = out.iter().filter(|&&t| t == EOS).count();
            assert!(eos == 0 || (eos == 1 && out.last() == Some(&EOS)));
            let bigrams: Vec<_> = out.windows(2).collect();
            let unique: std::collections::HashSet<_> = bigrams.iter().collect();
            assert_eq!(unique.len(), bigrams.len(), "seed {seed}: {out:?}");
        }
    }
}
