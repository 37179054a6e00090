//! Corpus representation and preparation.
//!
//! A corpus is a list of sentence pairs: a sequence of per-word feature
//! vectors aligned with the sentence the subject was reading. Features are
//! stored band-major, eight frequency bands (theta1, theta2, alpha1, alpha2,
//! beta1, beta2, gamma1, gamma2) of `feature_dim / 8` values each.
//!
//! On disk a corpus is JSON Lines, one sentence per line:
//!
//! ```text
//! {"text": "he was born", "task": "SR1", "words": [{"features": [0.1, null, ...]}, ...]}
//! ```
//!
//! JSON has no NaN, so a missing value is written as `null` and read back as NaN.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Default per-word feature width of the word-level EEG features.
pub const DEFAULT_FEATURE_DIM: usize = 840;

/// Number of frequency bands in the feature layout.
pub const N_BANDS: usize = 8;

/// Band names in storage order.
pub const BANDS: [&str; N_BANDS] = [
    "theta1", "theta2", "alpha1", "alpha2", "beta1", "beta2", "gamma1", "gamma2",
];

/// Per-word feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WordFeature {
    pub values: Vec<f64>,
}

impl WordFeature {
    pub fn new(values: Vec<f64>) -> Self {
        WordFeature { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Values of one frequency band, or `None` when the width is not a
    /// multiple of the band count.
    pub fn band(&self, band: usize) -> Option<&[f64]> {
        if band >= N_BANDS || !self.values.len().is_multiple_of(N_BANDS) {
            return None;
        }
        let width = self.values.len() / N_BANDS;
        Some(&self.values[band * width..(band + 1) * width])
    }
}

/// Reading task a sentence was recorded under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceTask {
    #[serde(rename = "SR1")]
    Sr1,
    #[serde(rename = "NR1")]
    Nr1,
    #[serde(rename = "NR2")]
    Nr2,
    #[serde(rename = "TSR1")]
    Tsr1,
    #[serde(rename = "SYNTHETIC")]
    Synthetic,
}

impl SourceTask {
    pub const ALL: [SourceTask; 5] = [
        SourceTask::Sr1,
        SourceTask::Nr1,
        SourceTask::Nr2,
        SourceTask::Tsr1,
        SourceTask::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceTask::Sr1 => "SR1",
            SourceTask::Nr1 => "NR1",
            SourceTask::Nr2 => "NR2",
            SourceTask::Tsr1 => "TSR1",
            SourceTask::Synthetic => "SYNTHETIC",
        }
    }
}

impl fmt::Display for SourceTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SourceTask::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown task {s:?}")))
    }
}

/// One aligned (feature sequence, sentence) example.
#[derive(Debug, Clone, PartialEq)]
pub struct SentencePair {
    pub words: Vec<WordFeature>,
    pub text: String,
    pub source_task: SourceTask,
}

impl SentencePair {
    pub fn is_finite(&self) -> bool {
        self.words.iter().all(WordFeature::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub pairs: Vec<SentencePair>,
    pub feature_dim: usize,
}

impl Corpus {
    pub fn new(feature_dim: usize) -> Self {
        Corpus {
            pairs: Vec::new(),
            feature_dim,
        }
    }

    /// Builds a corpus, checking every word against `feature_dim`.
    pub fn from_pairs(pairs: Vec<SentencePair>, feature_dim: usize) -> Result<Self> {
        for (i, pair) in pairs.iter().enumerate() {
            for (j, word) in pair.words.iter().enumerate() {
                if word.dim() != feature_dim {
                    return Err(Error::FeatureDim {
                        expected: feature_dim,
                        found: word.dim(),
                        context: format!("pair {i}, word {j}"),
                    });
                }
            }
        }
        Ok(Corpus { pairs, feature_dim })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Distinct sentence texts in order of first appearance.
    pub fn distinct_texts(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.pairs
            .iter()
            .map(|p| p.text.as_str())
            .filter(|t| seen.insert(*t))
            .collect()
    }

    /// Pairs belonging to one source task, order preserved.
    pub fn by_task(&self, task: SourceTask) -> Corpus {
        Corpus {
            pairs: self
                .pairs
                .iter()
                .filter(|p| p.source_task == task)
                .cloned()
                .collect(),
            feature_dim: self.feature_dim,
        }
    }

    /// Tasks present in the corpus, in canonical order.
    pub fn tasks(&self) -> Vec<SourceTask> {
        let present: HashSet<_> = self.pairs.iter().map(|p| p.source_task).collect();
        SourceTask::ALL
            .into_iter()
            .filter(|t| present.contains(t))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

/// Whether a feature set comes from the recorded signal or from
/// standard-normal noise of the same shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Signal,
    Noise,
}

impl InputKind {
    pub const ALL: [InputKind; 2] = [InputKind::Signal, InputKind::Noise];

    pub fn as_str(self) -> &'static str {
        match self {
            InputKind::Signal => "signal",
            InputKind::Noise => "noise",
        }
    }
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "signal" | "eeg" => Ok(InputKind::Signal),
            "noise" | "random" => Ok(InputKind::Noise),
            _ => Err(Error::InvalidArgument(format!("unknown input kind {s:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WordRecord {
    features: Vec<Option<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    text: String,
    task: SourceTask,
    words: Vec<WordRecord>,
}

/// Reads a JSON-Lines corpus. The feature width is taken from the first
/// word of the first record; every later word must match it. Blank lines
/// are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut pairs = Vec::new();
    let mut feature_dim: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let format_err = |message: String| Error::Format {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let record: PairRecord =
            serde_json::from_str(&line).map_err(|e| format_err(e.to_string()))?;
        if record.text.trim().is_empty() {
            return Err(format_err("empty sentence text".into()));
        }
        if record.words.is_empty() {
            return Err(format_err("sentence has no words".into()));
        }
        let dim = *feature_dim.get_or_insert(record.words[0].features.len());
        if dim == 0 {
            return Err(format_err("zero-length feature vector".into()));
        }
        let mut words = Vec::with_capacity(record.words.len());
        for (j, w) in record.words.into_iter().enumerate() {
            if w.features.len() != dim {
                return Err(format_err(format!(
                    "word {j} has {} features, corpus has {dim}",
                    w.features.len()
                )));
            }
            words.push(WordFeature::new(
                w.features.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
            ));
        }
        pairs.push(SentencePair {
            words,
            text: record.text,
            source_task: record.task,
        });
    }

    match feature_dim {
        Some(feature_dim) => Ok(Corpus { pairs, feature_dim }),
        None => Err(Error::EmptyFile {
            path: path.to_path_buf(),
        }),
    }
}

/// Writes a corpus in the JSON-Lines format. Non-finite values become `null`.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for pair in &corpus.pairs {
        let record = PairRecord {
            text: pair.text.clone(),
            task: pair.source_task,
            words: pair
                .words
                .iter()
                .map(|w| WordRecord {
                    features: w
                        .values
                        .iter()
                        .map(|v| v.is_finite().then_some(*v))
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Keeps exactly the pairs whose features are all finite. NaN and
/// infinities both disqualify a sentence.
pub fn filter_invalid(corpus: &Corpus) -> Corpus {
    Corpus {
        pairs: corpus
            .pairs
            .iter()
            .filter(|p| p.is_finite())
            .cloned()
            .collect(),
        feature_dim: corpus.feature_dim,
    }
}

/// Train/dev/test proportions over distinct sentence texts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            dev: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.dev, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "split ratios must be non-negative: {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios must sum to 1: {parts:?}"
            )));
        }
        Ok(())
    }

    /// Number of (dev, test) texts out of `n` distinct texts. Floor-sized,
    /// but never zero for a nonzero ratio so that model selection and
    /// evaluation always have data. Train absorbs the rest.
    fn held_out_sizes(&self, n: usize) -> (usize, usize) {
        let size = |ratio: f64| {
            if ratio <= 0.0 {
                0
            } else {
                ((ratio * n as f64 + 1e-9).floor() as usize).max(1)
            }
        };
        (size(self.dev), size(self.test))
    }
}

/// Partitions a corpus by distinct sentence text: every pair sharing a
/// text lands in the same split. Texts are shuffled with a seeded
/// permutation, then dev and test take floor-sized slices and train keeps
/// the remainder. Pair order inside each split follows the input.
pub fn split_corpus(corpus: &Corpus, ratios: SplitRatios, seed: u64) -> Result<SplitDataset> {
    ratios.validate()?;
    let mut texts = corpus.distinct_texts();
    if texts.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 distinct sentences to split, found {}",
            texts.len()
        )));
    }
    texts.shuffle(&mut seeded(seed));

    let (n_dev, n_test) = ratios.held_out_sizes(texts.len());
    if n_dev + n_test >= texts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} distinct sentences leave nothing for training",
            texts.len()
        )));
    }
    #[derive(Clone, Copy)]
    enum Part {
        Train,
        Dev,
        Test,
    }
    let assignment: HashMap<&str, Part> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let part = if i < n_dev {
                Part::Dev
            } else if i < n_dev + n_test {
                Part::Test
            } else {
                Part::Train
            };
            (*t, part)
        })
        .collect();

    let mut split = SplitDataset {
        train: Corpus::new(corpus.feature_dim),
        dev: Corpus::new(corpus.feature_dim),
        test: Corpus::new(corpus.feature_dim),
    };
    for pair in &corpus.pairs {
        let target = match assignment[pair.text.as_str()] {
            Part::Train => &mut split.train,
            Part::Dev => &mut split.dev,
            Part::Test => &mut split.test,
        };
        target.pairs.push(pair.clone());
    }
    Ok(split)
}

/// Splits each source task separately, then merges the per-task splits.
///
/// A text that occurs under several tasks follows the split it received in
/// the first task (canonical task order) that contains it, so the merged
/// splits stay disjoint by text.
pub fn split_per_task(corpus: &Corpus, ratios: SplitRatios, seed: u64) -> Result<SplitDataset> {
    let tasks = corpus.tasks();
    if tasks.len() <= 1 {
        return split_corpus(corpus, ratios, seed);
    }
    let mut owner: HashMap<String, usize> = HashMap::new();
    let mut per_task = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let split = split_corpus(&corpus.by_task(*task), ratios, seed.wrapping_add(i as u64))?;
        for (part, c) in [&split.train, &split.dev, &split.test].into_iter().enumerate() {
            for p in &c.pairs {
                owner.entry(p.text.clone()).or_insert(part);
            }
        }
        per_task.push(split);
    }
    let mut merged = SplitDataset {
        train: Corpus::new(corpus.feature_dim),
        dev: Corpus::new(corpus.feature_dim),
        test: Corpus::new(corpus.feature_dim),
    };
    for split in per_task {
        for c in [split.train, split.dev, split.test] {
            for p in c.pairs {
                let dest = match owner[&p.text] {
                    0 => &mut merged.train,
                    1 => &mut merged.dev,
                    _ => &mut merged.test,
                };
                dest.pairs.push(p);
            }
        }
    }
    Ok(merged)
}

/// Concatenates corpora, keeping each pair's task label.
pub fn merge_tasks(corpora: &[Corpus]) -> Result<Corpus> {
    let first = corpora
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to merge".into()))?;
    let mut merged = Corpus::new(first.feature_dim);
    for (i, c) in corpora.iter().enumerate() {
        if c.feature_dim != first.feature_dim {
            return Err(Error::FeatureDim {
                expected: first.feature_dim,
                found: c.feature_dim,
                context: format!("corpus {i} in merge"),
            });
        }
        merged.pairs.extend(c.pairs.iter().cloned());
    }
    Ok(merged)
}

/// Same texts and word counts, every feature value replaced by an
/// independent standard-normal draw.
pub fn make_noise_like(corpus: &Corpus, seed: u64) -> Corpus {
    let mut rng = seeded(seed);
    let pairs = corpus
        .pairs
        .iter()
        .map(|p| SentencePair {
            words: p
                .words
                .iter()
                .map(|w| {
                    WordFeature::new((0..w.dim()).map(|_| rng.sample(StandardNormal)).collect())
                })
                .collect(),
            text: p.text.clone(),
            source_task: p.source_task,
        })
        .collect();
    Corpus {
        pairs,
        feature_dim: corpus.feature_dim,
    }
}

/// Kind of synthetic control corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    /// Each word's features are a noisy one-hot template of that word, so
    /// the input determines the sentence.
    Informative,
    /// Features are standard-normal and carry no information about the text.
    Uninformative,
}

impl FromStr for ControlKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "informative" => Ok(ControlKind::Informative),
            "uninformative" => Ok(ControlKind::Uninformative),
            _ => Err(Error::InvalidArgument(format!("unknown control kind {s:?}"))),
        }
    }
}

impl fmt::Display for ControlKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControlKind::Informative => "informative",
            ControlKind::Uninformative => "uninformative",
        })
    }
}

/// Norm scale of the additive noise on informative templates.
pub const TEMPLATE_NOISE_STD: f64 = 0.1;

const CONTROL_WORDS: [&str; 48] = [
    "he", "she", "was", "born", "in", "the", "city", "and", "later", "moved", "to", "a",
    "small", "town", "where", "worked", "as", "teacher", "for", "many", "years", "before",
    "becoming", "writer", "his", "her", "first", "novel", "won", "prize", "after", "death",
    "family", "lived", "near", "river", "with", "two", "sons", "elected", "house", "member",
    "party", "studied", "law", "at", "college", "served",
];

/// Fixed Markov grammar over the control vocabulary.
///
/// Words sit on one fixed cycle. Any word can start a sentence, the first
/// one more often than the rest. The next word is the word's cycle
/// successor with probability 0.9, otherwise a fixed second successor.
/// The structure depends only on the vocabulary size, so all control
/// corpora of one size share a grammar and only the sampled sentences vary
/// with the seed.
#[derive(Debug, Clone)]
struct ControlGrammar {
    words: Vec<String>,
    successors: Vec<[usize; 2]>,
    starts: Vec<usize>,
}

impl ControlGrammar {
    const GRAMMAR_SEED: u64 = 0x6e6f_6973_6567_6174;
    const MIN_LEN: usize = 3;
    const MAX_LEN: usize = 6;
    /// Probability of the first of a word's two successors.
    const MAJOR_PROB: f64 = 0.9;
    /// Extra probability of opening with the first word, so free-running
    /// decoding has a clear most likely opening to collapse onto.
    const COMMON_START_PROB: f64 = 0.2;
    /// Chance of ending the sentence after each word once it has
    /// `MIN_LEN` words.
    const STOP_PROB: f64 = 0.25;

    fn new(vocab_size: usize) -> Self {
        let words = (0..vocab_size)
            .map(|i| match CONTROL_WORDS.get(i) {
                Some(w) => (*w).to_string(),
                None => format!("word{i}"),
            })
            .collect();
        let mut rng = seeded(Self::GRAMMAR_SEED ^ vocab_size as u64);
        let mut cycle: Vec<usize> = (0..vocab_size).collect();
        cycle.shuffle(&mut rng);
        let mut successors = vec![[0; 2]; vocab_size];
        for (pos, &w) in cycle.iter().enumerate() {
            let major = cycle[(pos + 1) % vocab_size];
            let others: Vec<usize> = (0..vocab_size).filter(|&j| j != w && j != major).collect();
            successors[w] = [major, *others.choose(&mut rng).expect("vocab_size >= 4")];
        }
        ControlGrammar {
            words,
            successors,
            starts: (0..vocab_size).collect(),
        }
    }

    /// Samples one sentence as word indices; no word repeats.
    fn sample(&self, rng: &mut impl Rng) -> Vec<usize> {
        let first = if rng.random_bool(Self::COMMON_START_PROB) {
            self.starts[0]
        } else {
            *self.starts.choose(rng).expect("non-empty start set")
        };
        let mut sentence = vec![first];
        while sentence.len() < Self::MAX_LEN {
            if sentence.len() >= Self::MIN_LEN && rng.random_bool(Self::STOP_PROB) {
                break;
            }
            let last = *sentence.last().unwrap();
            let open: Vec<usize> = self.successors[last]
                .iter()
                .copied()
                .filter(|w| !sentence.contains(w))
                .collect();
            match open.as_slice() {
                [] => break,
                [w] => sentence.push(*w),
                [major, minor, ..] => sentence.push(if rng.random_bool(Self::MAJOR_PROB) { *major } else { *minor }),
            }
        }
        sentence
    }
}

/// Generates a synthetic control corpus of `n_sentences` pairs.
///
/// Both kinds draw the same sentences for the same seed. Informative
/// features embed the one-hot vocabulary index of each word in the first
/// `vocab_size` coordinates plus isotropic Gaussian noise whose expected
/// norm is [`TEMPLATE_NOISE_STD`]; uninformative features are standard normal.
pub fn gen_synthetic_control(
    kind: ControlKind,
    n_sentences: usize,
    vocab_size: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<Corpus> {
    gen_synthetic_readings(kind, n_sentences, 1, vocab_size, feature_dim, seed)
}

/// Like [`gen_synthetic_control`], but every sentence is recorded by
/// `readers` readers, each with independently drawn features, the way one
/// sentence is read by several subjects. The corpus has
/// `n_sentences * readers` pairs; readings of a sentence are adjacent.
pub fn gen_synthetic_readings(
    kind: ControlKind,
    n_sentences: usize,
    readers: usize,
    vocab_size: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<Corpus> {
    if vocab_size < 4 {
        return Err(Error::InvalidArgument(format!(
            "control vocab_size must be at least 4, got {vocab_size}"
        )));
    }
    if feature_dim == 0 {
        return Err(Error::InvalidArgument("feature_dim must be positive".into()));
    }
    if kind == ControlKind::Informative && feature_dim < vocab_size {
        return Err(Error::InvalidArgument(format!(
            "informative control needs feature_dim >= vocab_size ({feature_dim} < {vocab_size})"
        )));
    }

    let grammar = ControlGrammar::new(vocab_size);
    let mut text_rng = seeded(seed);
    let mut feature_rng = seeded(seed ^ 0xfea7_u64.rotate_left(40));
    let per_coord_std = TEMPLATE_NOISE_STD / (feature_dim as f64).sqrt();

    let mut pairs = Vec::with_capacity(n_sentences * readers);
    for _ in 0..n_sentences {
        let sentence = grammar.sample(&mut text_rng);
        let text = sentence
            .iter()
            .map(|&w| grammar.words[w].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        for _ in 0..readers {
            let words = sentence
                .iter()
                .map(|&w| {
                    let values = (0..feature_dim)
                        .map(|d| {
                            let z: f64 = feature_rng.sample(StandardNormal);
                            match kind {
                                ControlKind::Uninformative => z,
                                ControlKind::Informative => {
                                    let template = if d == w { 1.0 } else { 0.0 };
                                    template + per_coord_std * z
                                }
                            }
                        })
                        .collect();
                    WordFeature::new(values)
                })
                .collect();
            pairs.push(SentencePair {
                words,
                text: text.clone(),
                source_task: SourceTask::Synthetic,
            });
        }
    }
    Ok(Corpus { pairs, feature_dim })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(text: &str, words: Vec<Vec<f64>>) -> SentencePair {
        SentencePair {
            words: words.into_iter().map(WordFeature::new).collect(),
            text: text.to_string(),
            source_task: SourceTask::Sr1,
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_three_line_file() {
        let f = write_lines(&[
            r#"{"text": "a b", "task": "SR1", "words": [{"features": [1,2,3,4]}, {"features": [0,0,0,0]}]}"#,
            r#"{"text": "c", "task": "NR1", "words": [{"features": [1,2,3,null]}]}"#,
            r#"{"text": "d e", "task": "TSR1", "words": [{"features": [1,1,1,1]}, {"features": [2,2,2,2]}]}"#,
        ]);
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.feature_dim, 4);
        assert!(corpus.pairs[1].words[0].values[3].is_nan());
        assert_eq!(corpus.pairs[2].source_task, SourceTask::Tsr1);
    }

    #[test]
    fn load_reports_line_of_bad_width() {
        let f = write_lines(&[
            r#"{"text": "a", "task": "SR1", "words": [{"features": [1,2,3,4]}]}"#,
            r#"{"text": "b", "task": "SR1", "words": [{"features": [1,2,3,4,5]}]}"#,
            r#"{"text": "c", "task": "SR1", "words": [{"features": [1,2,3,4]}]}"#,
        ]);
        match load_corpus(f.path()) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_malformed_and_empty() {
        let f = write_lines(&[
            r#"{"text": "a", "task": "SR1", "words": [{"features": [1]}]}"#,
            r#"{"text": "b", "task": "SR1", "words": [{"features": [1]}"#,
        ]);
        assert!(matches!(load_corpus(f.path()), Err(Error::Format { line: 2, .. })));

        let f = write_lines(&[r#"{"text": "a", "task": "XX", "words": [{"features": [1]}]}"#]);
        assert!(matches!(load_corpus(f.path()), Err(Error::Format { line: 1, .. })));

        let f = write_lines(&[]);
        assert!(matches!(load_corpus(f.path()), Err(Error::EmptyFile { .. })));

        assert!(matches!(
            load_corpus("/definitely/not/here.jsonl"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn filter_drops_nan_and_infinity() {
        let corpus = Corpus::from_pairs(
            vec![
                pair("a", vec![vec![1.0, 2.0]]),
                pair("b", vec![vec![1.0, f64::NAN]]),
                pair("c", vec![vec![1.0, 2.0], vec![0.0, 0.0]]),
                pair("d", vec![vec![f64::INFINITY, 0.0]]),
                pair("e", vec![vec![0.0, f64::NEG_INFINITY]]),
            ],
            2,
        )
        .unwrap();
        let filtered = filter_invalid(&corpus);
        let texts: Vec<_> = filtered.pairs.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts, ["a", "c"]);

        // scanning oracle: a pair survives iff no value fails is_finite
        for p in &corpus.pairs {
            let clean = p
                .words
                .iter()
                .flat_map(|w| w.values.iter())
                .all(|v| !v.is_nan() && !v.is_infinite());
            assert_eq!(clean, filtered.pairs.iter().any(|q| q.text == p.text));
        }

        let clean = filter_invalid(&filtered);
        assert_eq!(clean, filtered);
    }

    fn single_pair_corpus(texts: &[&str]) -> Corpus {
        Corpus::from_pairs(
            texts.iter().map(|t| pair(t, vec![vec![0.0]])).collect(),
            1,
        )
        .unwrap()
    }

    #[test]
    fn split_ten_sentences_eight_one_one() {
        let texts: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let corpus = single_pair_corpus(&refs);
        let split = split_corpus(&corpus, SplitRatios::default(), 3).unwrap();
        assert_eq!(
            (split.train.len(), split.dev.len(), split.test.len()),
            (8, 1, 1)
        );
        let again = split_corpus(&corpus, SplitRatios::default(), 3).unwrap();
        assert_eq!(split, again);
    }

    #[test]
    fn split_keeps_repeated_text_together() {
        let mut texts: Vec<String> = (0..12).map(|i| format!("s{i}")).collect();
        texts.push("s5".into());
        texts.push("s5".into());
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let corpus = single_pair_corpus(&refs);
        for seed in 0..20 {
            let split = split_corpus(&corpus, SplitRatios::default(), seed).unwrap();
            let counts: Vec<usize> = [&split.train, &split.dev, &split.test]
                .iter()
                .map(|c| c.pairs.iter().filter(|p| p.text == "s5").count())
                .collect();
            assert!(counts.contains(&3), "seed {seed}: {counts:?}");
        }
    }

    #[test]
    fn split_errors() {
        let corpus = single_pair_corpus(&["a", "b", "a"]);
        assert!(split_corpus(&corpus, SplitRatios::default(), 0).is_err());
        let corpus = single_pair_corpus(&["a", "b", "c", "d"]);
        let bad = SplitRatios {
            train: 0.5,
            dev: 0.1,
            test: 0.1,
        };
        assert!(split_corpus(&corpus, bad, 0).is_err());
    }

    #[test]
    fn split_per_task_keeps_shared_texts_disjoint() {
        let mut pairs = Vec::new();
        for i in 0..20 {
            let mut p = pair(&format!("s{i}"), vec![vec![0.0]]);
            p.source_task = SourceTask::Sr1;
            pairs.push(p);
            let mut q = pair(&format!("s{}", i + 10), vec![vec![0.0]]);
            q.source_task = SourceTask::Tsr1;
            pairs.push(q);
        }
        let corpus = Corpus::from_pairs(pairs, 1).unwrap();
        let split = split_per_task(&corpus, SplitRatios::default(), 9).unwrap();
        let sets: Vec<HashSet<&str>> = [&split.train, &split.dev, &split.test]
            .iter()
            .map(|c| c.pairs.iter().map(|p| p.text.as_str()).collect())
            .collect();
        assert!(sets[0].is_disjoint(&sets[1]));
        assert!(sets[0].is_disjoint(&sets[2]));
        assert!(sets[1].is_disjoint(&sets[2]));
        assert_eq!(split.train.len() + split.dev.len() + split.test.len(), 40);
    }

    #[test]
    fn merge_concatenates_and_checks_width() {
        let a = single_pair_corpus(&["a", "b"]);
        let b = single_pair_corpus(&["c", "d", "e"]);
        let merged = merge_tasks(&[a.clone(), b]).unwrap();
        assert_eq!(merged.len(), 5);
        assert!(merge_tasks(&[]).is_err());
        let wide = Corpus::from_pairs(vec![pair("x", vec![vec![0.0, 0.0]])], 2).unwrap();
        assert!(merge_tasks(&[a, wide]).is_err());
    }

    #[test]
    fn noise_preserves_shape() {
        let corpus = Corpus::from_pairs(
            vec![
                pair("one", vec![vec![0.0; 3]; 5]),
                pair("two", vec![vec![0.0; 3]; 2]),
                pair("three", vec![vec![0.0; 3]; 7]),
            ],
            3,
        )
        .unwrap();
        let noisy = make_noise_like(&corpus, 11);
        for (a, b) in corpus.pairs.iter().zip(&noisy.pairs) {
            assert_eq!(a.text, b.text);
            assert_eq!(a.words.len(), b.words.len());
            assert_eq!(a.source_task, b.source_task);
        }
        assert_eq!(noisy, make_noise_like(&corpus, 11));
        assert_ne!(noisy, make_noise_like(&corpus, 12));
    }

    #[test]
    fn noise_sample_statistics() {
        let corpus = Corpus::from_pairs(vec![pair("x", vec![vec![0.0; 100]; 1000])], 100).unwrap();
        let noisy = make_noise_like(&corpus, 5);
        let values: Vec<f64> = noisy.pairs[0]
            .words
            .iter()
            .flat_map(|w| w.values.iter().copied())
            .collect();
        assert_eq!(values.len(), 100_000);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.02, "mean {mean}");
        assert!((0.99..=1.01).contains(&var.sqrt()), "std {}", var.sqrt());
    }

    #[test]
    fn band_view() {
        let w = WordFeature::new((0..16).map(f64::from).collect());
        assert_eq!(w.band(1), Some(&[2.0, 3.0][..]));
        assert_eq!(w.band(8), None);
        assert_eq!(WordFeature::new(vec![0.0; 5]).band(0), None);
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    /// (mean same-word cosine, min same-word cosine, mean different-word cosine)
    fn similarity_scan(corpus: &Corpus) -> (f64, f64, f64) {
        let tokens: Vec<(&str, &[f64])> = corpus
            .pairs
            .iter()
            .flat_map(|p| {
                p.text
                    .split_whitespace()
                    .zip(p.words.iter().map(|w| w.values.as_slice()))
            })
            .collect();
        let (mut same, mut same_n, mut same_min, mut diff, mut diff_n) =
            (0.0, 0usize, f64::INFINITY, 0.0, 0usize);
        for i in 0..tokens.len() {
            for j in i + 1..tokens.len() {
                let c = cosine(tokens[i].1, tokens[j].1);
                if tokens[i].0 == tokens[j].0 {
                    same += c;
                    same_n += 1;
                    same_min = same_min.min(c);
                } else {
                    diff += c;
                    diff_n += 1;
                }
            }
        }
        (same / same_n as f64, same_min, diff / diff_n as f64)
    }

    #[test]
    fn informative_control_encodes_words() {
        let corpus = gen_synthetic_control(ControlKind::Informative, 50, 20, 32, 1).unwrap();
        assert_eq!(corpus.len(), 50);
        for p in &corpus.pairs {
            assert_eq!(p.words.len(), p.text.split_whitespace().count());
        }
        let (same_mean, same_min, _) = similarity_scan(&corpus);
        assert!(same_mean > 0.9, "{same_mean}");
        assert!(same_min > 0.9, "{same_min}");
    }

    #[test]
    fn uninformative_control_carries_no_word_identity() {
        let corpus = gen_synthetic_control(ControlKind::Uninformative, 50, 20, 32, 1).unwrap();
        let (same_mean, _, diff_mean) = similarity_scan(&corpus);
        assert!((same_mean - diff_mean).abs() < 0.05, "{same_mean} vs {diff_mean}");

        let informative = gen_synthetic_control(ControlKind::Informative, 50, 20, 32, 1).unwrap();
        let texts = |c: &Corpus| c.pairs.iter().map(|p| p.text.clone()).collect::<Vec<_>>();
        assert_eq!(texts(&corpus), texts(&informative));
    }

    #[test]
    fn control_edge_cases() {
        let empty = gen_synthetic_control(ControlKind::Informative, 0, 20, 32, 1).unwrap();
        assert!(empty.is_empty());
        assert!(gen_synthetic_control(ControlKind::Informative, 5, 3, 32, 1).is_err());
        assert!(gen_synthetic_control(ControlKind::Informative, 5, 40, 32, 1).is_err());
        assert!(gen_synthetic_control(ControlKind::Uninformative, 5, 40, 32, 1).is_ok());
    }

    #[test]
    fn control_sentences_never_repeat_words() {
        let corpus = gen_synthetic_control(ControlKind::Uninformative, 200, 20, 8, 4).unwrap();
        for p in &corpus.pairs {
            let words: Vec<_> = p.text.split_whitespace().collect();
            let unique: HashSet<_> = words.iter().collect();
            assert_eq!(unique.len(), words.len(), "{}", p.text);
        }
    }
}
