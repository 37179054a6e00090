//! Run configuration file (TOML).
//!
//! ```toml
//! seed = 7
//! output_dir = "runs"
//! samples = 3              # sample sentences kept per cell
//! min_freq = 1             # vocabulary cutoff
//!
//! [data]
//! corpora = ["corpus_sr1.jsonl", "corpus_nr1.jsonl"]   # relative to this file
//! tasks = ["SR1", "NR1"]   # optional filter; all tasks when absent
//! ratios = { train = 0.8, dev = 0.1, test = 0.1 }
//!
//! [control]                # optional; replaces [data] corpora with a synthetic corpus
//! kind = "informative"     # or "uninformative"
//! n_sentences = 50
//! readers = 8              # recordings per sentence
//! vocab_size = 30
//! feature_dim = 32
//!
//! [model]                  # ModelConfig; feature_dim and vocab_size come from the data
//! [train]                  # TrainConfig; its seed is replaced by the top-level seed
//! [decode]                 # DecodeConfig
//! [thresholds]             # parity = 3.0, learning = 10.0
//! ```
//!
//! Every section and key is optional. The desk-scale learning rate is 1e-2
//! rather than 2e-5: plain SGD at 2e-5 does not move a randomly initialized
//! model of this size within 30 epochs. `TrainConfig::full_size` keeps 2e-5.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    filter_invalid, gen_synthetic_readings, load_corpus, merge_tasks, split_corpus, split_per_task,
    ControlKind, Corpus, SourceTask, SplitDataset, SplitRatios,
};
use crate::error::{Error, Result};
use crate::harness::HarnessConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct DataConfig {
    pub corpora: Vec<PathBuf>,
    pub tasks: Option<Vec<SourceTask>>,
    pub ratios: SplitRatios,
}


#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub kind: ControlKind,
    pub n_sentences: usize,
    /// Recordings per sentence, each with its own features.
    pub readers: usize,
    pub vocab_size: usize,
    pub feature_dim: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            kind: ControlKind::Informative,
            n_sentences: 50,
            readers: 8,
            vocab_size: 30,
            feature_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed: drives the split, initialization, noise and shuffling.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub control: Option<ControlConfig>,
    #[serde(flatten)]
    pub harness: HarnessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            control: None,
            harness: HarnessConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.harness.train.seed = config.seed;
        Ok(config)
    }

    /// Loads a config file. Relative corpus paths are resolved against the
    /// file's directory and must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for corpus in &mut config.data.corpora {
            if corpus.is_relative() {
                *corpus = base.join(&*corpus);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.harness.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.data.ratios.validate()?;
        self.harness.validate()?;
        match &self.control {
            Some(c) if c.n_sentences < 3 || c.readers == 0 => {
                return Err(Error::Config(
                    "control needs at least 3 sentences and 1 reader".into(),
                ))
            }
            Some(_) => {}
            None => {
                if self.data.corpora.is_empty() {
                    return Err(Error::Config(
                        "no corpora listed and no [control] section".into(),
                    ));
                }
                for p in &self.data.corpora {
                    if !p.exists() {
                        return Err(Error::Config(format!("corpus {} does not exist", p.display())));
                    }
                }
            }
        }
        Ok(())
    }

    /// The synthetic control corpus, or the filtered and merged real corpora.
    pub fn load_corpus(&self) -> Result<Corpus> {
        if let Some(c) = &self.control {
            return gen_synthetic_readings(c.kind, c.n_sentences, c.readers, c.vocab_size, c.feature_dim, self.seed);
        }
        let mut corpora = Vec::with_capacity(self.data.corpora.len());
        for p in &self.data.corpora {
            corpora.push(filter_invalid(&load_corpus(p)?));
        }
        let merged = merge_tasks(&corpora)?;
        Ok(match &self.data.tasks {
            None => merged,
            Some(tasks) => {
                let parts: Vec<Corpus> = tasks.iter().map(|&t| merged.by_task(t)).collect();
                merge_tasks(&parts)?
            }
        })
    }

    /// Splits the corpus; real corpora are split per task.
    pub fn load_split(&self) -> Result<SplitDataset> {
        let corpus = self.load_corpus()?;
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("corpus is empty after filtering".into()));
        }
        if self.control.is_some() {
            split_corpus(&corpus, self.data.ratios, self.seed)
        } else {
            split_per_task(&corpus, self.data.ratios, self.seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_needs_data() {
        let config = RunConfig::from_toml("").unwrap();
        assert_eq!(config.harness, HarnessConfig::default());
        assert!(matches!(config.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn sections_and_seed() {
        let config = RunConfig::from_toml(
            r#"
            seed = 11
            samples = 2
            [control]
            kind = "uninformative"
            n_sentences = 40
            [train]
            epochs = 5
            seed = 999
            [decode]
            beam_size = 3
            [thresholds]
            parity = 2.5
            "#,
        )
        .unwrap();
        config.validate().unwrap();
        assert_eq!(config.harness.train.seed, 11);
        assert_eq!(config.harness.train.epochs, 5);
        assert_eq!(config.harness.decode.beam_size, 3);
        assert_eq!(config.harness.thresholds.parity, 2.5);
        assert_eq!(config.harness.thresholds.learning, 10.0);
        assert_eq!(config.harness.samples, 2);
        let c = config.control.unwrap();
        assert_eq!((c.kind, c.n_sentences, c.vocab_size), (ControlKind::Uninformative, 40, 30));
        let split = config.load_split().unwrap();
        assert_eq!(split.train.len() + split.dev.len() + split.test.len(), 40 * 8);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::from_toml("seed = \"x\"").is_err());
        let config = RunConfig::from_toml("[control]\n[train]\nepochs = 0").unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn missing_corpus_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[data]\ncorpora = [\"nope.jsonl\"]\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("nope.jsonl"), "{err}");
    }
}
