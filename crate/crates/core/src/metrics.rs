//! Corpus-level text metrics: cumulative BLEU-1..4, ROUGE-1 and WER.
//!
//! BLEU and WER pool counts over the whole corpus; ROUGE-1 is averaged over
//! sentence pairs. All scores are percentages. Scoring is on lowercased
//! whitespace tokens, single reference per hypothesis.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::words;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredPair {
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
}

impl ScoredPair {
    pub fn new(hypothesis: &str, reference: &str) -> Self {
        ScoredPair {
            hypothesis: words(hypothesis),
            reference: words(reference),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Cumulative BLEU-1 through BLEU-4.
    pub bleu: [f64; 4],
    pub rouge1_p: f64,
    pub rouge1_r: f64,
    pub rouge1_f: f64,
    /// May exceed 100 when hypotheses are longer than references.
    pub wer: f64,
}

/// Named scalar fields of a [`MetricsReport`], in report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Bleu1,
    Bleu2,
    Bleu3,
    Bleu4,
    Rouge1P,
    Rouge1R,
    Rouge1F,
    Wer,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Bleu1,
        Metric::Bleu2,
        Metric::Bleu3,
        Metric::Bleu4,
        Metric::Rouge1P,
        Metric::Rouge1R,
        Metric::Rouge1F,
        Metric::Wer,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Bleu1 => "bleu1",
            Metric::Bleu2 => "bleu2",
            Metric::Bleu3 => "bleu3",
            Metric::Bleu4 => "bleu4",
            Metric::Rouge1P => "rouge1_p",
            Metric::Rouge1R => "rouge1_r",
            Metric::Rouge1F => "rouge1_f",
            Metric::Wer => "wer",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Bleu1 => "BLEU-1",
            Metric::Bleu2 => "BLEU-2",
            Metric::Bleu3 => "BLEU-3",
            Metric::Bleu4 => "BLEU-4",
            Metric::Rouge1P => "ROUGE-1 P",
            Metric::Rouge1R => "ROUGE-1 R",
            Metric::Rouge1F => "ROUGE-1 F",
            Metric::Wer => "WER",
        }
    }
}

impl MetricsReport {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Bleu1 => self.bleu[0],
            Metric::Bleu2 => self.bleu[1],
            Metric::Bleu3 => self.bleu[2],
            Metric::Bleu4 => self.bleu[3],
            Metric::Rouge1P => self.rouge1_p,
            Metric::Rouge1R => self.rouge1_r,
            Metric::Rouge1F => self.rouge1_f,
            Metric::Wer => self.wer,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and total hypothesis n-grams for one pair.
fn clipped_matches(hyp: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let hyp_counts = ngram_counts(hyp, n);
    let ref_counts = ngram_counts(reference, n);
    let matched = hyp_counts
        .iter()
        .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    (matched, hyp.len().saturating_sub(n - 1))
}

/// Pooled modified n-gram precision over the corpus, as (matched, total).
pub fn pooled_precision(pairs: &[ScoredPair], n: usize) -> (usize, usize) {
    pairs.iter().fold((0, 0), |(m, t), p| {
        let (pm, pt) = clipped_matches(&p.hypothesis, &p.reference, n);
        (m + pm, t + pt)
    })
}

fn check_pairs(pairs: &[ScoredPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs to score".into()));
    }
    if let Some(i) = pairs.iter().position(|p| p.reference.is_empty()) {
        return Err(Error::InvalidArgument(format!("reference {i} is empty")));
    }
    Ok(())
}

/// Cumulative corpus BLEU-n with uniform weights and no smoothing.
pub fn bleu_corpus(pairs: &[ScoredPair], n: usize) -> Result<f64> {
    check_pairs(pairs)?;
    if !(1..=4).contains(&n) {
        return Err(Error::InvalidArgument(format!("BLEU order must be 1..=4, got {n}")));
    }
    let hyp_len: usize = pairs.iter().map(|p| p.hypothesis.len()).sum();
    let ref_len: usize = pairs.iter().map(|p| p.reference.len()).sum();
    if hyp_len == 0 {
        return Ok(0.0);
    }

    let mut log_sum = 0.0;
    for k in 1..=n {
        let (matched, total) = pooled_precision(pairs, k);
        if matched == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let brevity = (1.0 - ref_len as f64 / hyp_len as f64).min(0.0).exp();
    Ok(100.0 * brevity * (log_sum / n as f64).exp())
}

/// Sentence-averaged ROUGE-1 (precision, recall, F1).
pub fn rouge1_corpus(pairs: &[ScoredPair]) -> Result<(f64, f64, f64)> {
    check_pairs(pairs)?;
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for pair in pairs {
        let (overlap, _) = clipped_matches(&pair.hypothesis, &pair.reference, 1);
        let overlap = overlap as f64;
        let p = if pair.hypothesis.is_empty() {
            0.0
        } else {
            overlap / pair.hypothesis.len() as f64
        };
        let r = overlap / pair.reference.len() as f64;
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }
    let n = pairs.len() as f64;
    Ok((100.0 * p_sum / n, 100.0 * r_sum / n, 100.0 * f_sum / n))
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Pooled word error rate: total edits over total reference words.
pub fn wer_corpus(pairs: &[ScoredPair]) -> Result<f64> {
    check_pairs(pairs)?;
    let edits: usize = pairs
        .iter()
        .map(|p| levenshtein(&p.hypothesis, &p.reference))
        .sum();
    let ref_words: usize = pairs.iter().map(|p| p.reference.len()).sum();
    Ok(100.0 * edits as f64 / ref_words as f64)
}

/// Scores parallel hypothesis and reference sentences.
pub fn score_cell<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<MetricsReport> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let pairs: Vec<ScoredPair> = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| ScoredPair::new(h.as_ref(), r.as_ref()))
        .collect();
    score_pairs(&pairs)
}

pub fn score_pairs(pairs: &[ScoredPair]) -> Result<MetricsReport> {
    let mut bleu = [0.0; 4];
    for (i, b) in bleu.iter_mut().enumerate() {
        *b = bleu_corpus(pairs, i + 1)?;
    }
    let (rouge1_p, rouge1_r, rouge1_f) = rouge1_corpus(pairs)?;
    Ok(MetricsReport {
        bleu,
        rouge1_p,
        rouge1_r,
        rouge1_f,
        wer: wer_corpus(pairs)?,
    })
}
