//! Beam search against exhaustive enumeration on toy scorers.

use std::collections::HashMap;

use noisegate::decoding::{beam_search, greedy_generate, DecodeConfig, StepScorer};
use noisegate::tokenizer::{BOS, EOS, PAD};
use noisegate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fixed random logits per prefix.
struct TableScorer {
    vocab: usize,
    seed: u64,
    cache: std::cell::RefCell<HashMap<Vec<usize>, Vec<f64>>>,
}

impl TableScorer {
    fn new(vocab: usize, seed: u64) -> Self {
        TableScorer {
            vocab,
            seed,
            cache: Default::default(),
        }
    }
}

impl StepScorer for TableScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_logits(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut cache = self.cache.borrow_mut();
        let logits = cache.entry(prefix.to_vec()).or_insert_with(|| {
            let h = prefix.iter().fold(self.seed, |h, &t| h.wrapping_mul(1_000_003).wrapping_add(t as u64 + 1));
            let mut rng = ChaCha8Rng::seed_from_u64(h);
            (0..self.vocab).map(|_| rng.random_range(-3.0..3.0)).collect()
        });
        Ok(logits.clone())
    }
}

/// Step log-probabilities, written out independently of the decoder.
fn step_log_probs(logits: &[f64], history: &[usize], dc: &DecodeConfig) -> Vec<f64> {
    let mut l = logits.to_vec();
    l[PAD] = f64::NEG_INFINITY;
    l[BOS] = f64::NEG_INFINITY;
    let mut distinct = history.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    for t in distinct {
        if l[t].is_finite() {
            l[t] = if l[t] > 0.0 { l[t] / dc.repetition_penalty } else { l[t] * dc.repetition_penalty };
        }
    }
    let n = dc.no_repeat_ngram;
    if n > 0 && history.len() + 1 >= n {
        for (tok, v) in l.iter_mut().enumerate() {
            let mut candidate = history.to_vec();
            candidate.push(tok);
            let last = &candidate[candidate.len() - n..];
            if candidate.windows(n).rev().skip(1).any(|g| g == last) {
                *v = f64::NEG_INFINITY;
            }
        }
    }
    let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = l.iter().map(|v| (v - max).exp()).sum();
    l.iter().map(|v| v - max - z.ln()).collect()
}

/// Best complete sequence by mean log-probability over all sequences that
/// end in `EOS` or reach `max_len`.
fn exhaustive(scorer: &TableScorer, dc: &DecodeConfig) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut stack = vec![(Vec::<usize>::new(), 0.0)];
    while let Some((tokens, lp)) = stack.pop() {
        let mut prefix = vec![BOS];
        prefix.extend(&tokens);
        let logits = scorer.next_logits(&prefix).unwrap();
        for (tok, step) in step_log_probs(&logits, &tokens, dc).into_iter().enumerate() {
            if !step.is_finite() {
                continue;
            }
            let mut next = tokens.clone();
            next.push(tok);
            let total = lp + step;
            if tok == EOS || next.len() == dc.max_len {
                let score = total / next.len() as f64;
                let better = match &best {
                    None => true,
                    Some((s, seq)) => score > *s || (score == *s && next < *seq),
                };
                if better {
                    best = Some((score, next));
                }
            } else {
                stack.push((next, total));
            }
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

/// Full-width beam against exhaustive search on `cases` random toy scorers.
pub fn check_full_width(cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..cases {
        let vocab = rng.random_range(4..=5);
        let max_len = rng.random_range(1..=6);
        let dc = DecodeConfig {
            beam_size: (vocab - 2usize).pow(max_len as u32),
            repetition_penalty: if case % 2 == 0 { 1.0 } else { rng.random_range(1.0..5.0) },
            no_repeat_ngram: case % 3,
            max_len,
        };
        let scorer = TableScorer::new(vocab, rng.random());
        let want = exhaustive(&scorer, &dc);
        let got = beam_search(&scorer, &dc).unwrap();
        assert_eq!(got, want, "case {case}: vocab {vocab} {dc:?}");
    }
}

pub fn check_beam_one_greedy(cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..cases {
        let vocab = rng.random_range(4..=5);
        let max_len = rng.random_range(1..=6);
        let scorer = TableScorer::new(vocab, rng.random());
        let greedy = greedy_generate(&scorer, max_len).unwrap();
        assert_eq!(beam_search(&scorer, &DecodeConfig::greedy(max_len)).unwrap(), greedy);
        assert!(greedy.len() <= max_len);
        assert!(!greedy.contains(&PAD) && !greedy.contains(&BOS));
    }
}

#[test]
fn full_width_beam_is_exhaustive() {
    check_full_width(80);
}

#[test]
fn beam_of_one_is_greedy() {
    check_beam_one_greedy(80);
}
