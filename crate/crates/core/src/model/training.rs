use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{example_loss_and_grad, grad, init_model, sgd_step, ModelConfig, Params};
use crate::data::{make_noise_like, Corpus, InputKind, SplitDataset, WordFeature};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::tokenizer::Vocabulary;

pub const STREAM_TRAIN_NOISE: u64 = 1;
pub const STREAM_DEV_NOISE: u64 = 2;
pub const STREAM_SHUFFLE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// The full-size setting uses 2e-5; plain SGD at that rate barely moves
    /// a randomly initialized desk-scale model in 30 epochs, so the desk
    /// default is much larger.
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            learning_rate: 1e-2,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Batch 32, learning rate 2e-5, 30 epochs.
    pub fn full_size(seed: u64) -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 2e-5,
            epochs: 30,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// A feature sequence with its encoded target (`BOS .. EOS`).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<WordFeature>,
    pub ids: Vec<usize>,
}

impl Example {
    pub fn from_corpus(corpus: &Corpus, vocab: &Vocabulary) -> Vec<Example> {
        corpus
            .pairs
            .iter()
            .map(|p| Example {
                features: p.words.clone(),
                ids: vocab.encode(&p.text),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch.
    pub train_loss: f64,
    /// Loss on the dev split after the epoch.
    pub dev_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// Snapshot with the lowest dev loss.
    pub params: Params,
    pub history: Vec<EpochStats>,
    /// Losses of the freshly initialized model, before any update.
    pub initial_train_loss: f64,
    pub initial_dev_loss: f64,
    /// 1-based epoch the snapshot was taken after.
    pub best_epoch: usize,
    pub train_input: InputKind,
}

impl TrainedModel {
    pub fn best_dev_loss(&self) -> f64 {
        self.history[self.best_epoch - 1].dev_loss
    }
}

/// Mean per-example loss.
pub fn evaluate_loss(params: &Params, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no examples to evaluate".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        total += example_loss_and_grad(params, &ex.features, &ex.ids, None, 1.0)?;
    }
    Ok(total / examples.len() as f64)
}

/// Trains with mini-batch SGD and keeps the lowest-dev-loss snapshot.
///
/// With `train_input == Noise`, the train and dev features are replaced by
/// noise corpora drawn once from seeds derived from `tc.seed`. Batches are
/// reshuffled every epoch; the last partial batch is kept.
pub fn train(
    config: &ModelConfig,
    tc: &TrainConfig,
    split: &SplitDataset,
    vocab: &Vocabulary,
    train_input: InputKind,
) -> Result<TrainedModel> {
    tc.validate()?;
    config.validate()?;
    if config.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "model vocab_size {} does not match vocabulary size {}",
            config.vocab_size,
            vocab.len()
        )));
    }
    if split.train.is_empty() || split.dev.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs non-empty train and dev splits".into(),
        ));
    }

    let (train_corpus, dev_corpus) = match train_input {
        InputKind::Signal => (split.train.clone(), split.dev.clone()),
        InputKind::Noise => (
            make_noise_like(&split.train, derive_seed(tc.seed, STREAM_TRAIN_NOISE)),
            make_noise_like(&split.dev, derive_seed(tc.seed, STREAM_DEV_NOISE)),
        ),
    };
    let train_set = Example::from_corpus(&train_corpus, vocab);
    let dev_set = Example::from_corpus(&dev_corpus, vocab);

    let mut params = init_model(config, tc.seed)?;
    let initial_train_loss = evaluate_loss(&params, &train_set)?;
    let initial_dev_loss = evaluate_loss(&params, &dev_set)?;

    let mut rng = seeded(derive_seed(tc.seed, STREAM_SHUFFLE));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(tc.epochs);
    let mut best: Option<(usize, f64, Params)> = None;

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<(&[WordFeature], &[usize])> = chunk
                .iter()
                .map(|&i| (train_set[i].features.as_slice(), train_set[i].ids.as_slice()))
                .collect();
            let (batch_loss, grads) = grad(&params, &batch).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Divergence {
                    epoch,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: batch_loss,
                });
            }
            sgd_step(&mut params, &grads, tc.learning_rate)?;
            loss_sum += batch_loss;
            n_batches += 1;
        }
        let train_loss = loss_sum / n_batches as f64;
        let dev_loss = evaluate_loss(&params, &dev_set)?;
        if !dev_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: dev_loss,
            });
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            dev_loss,
        });
        if best.as_ref().is_none_or(|(_, b, _)| dev_loss < *b) {
            best = Some((epoch, dev_loss, params.clone()));
        }
    }

    let (best_epoch, _, params) = best.expect("at least one epoch");
    Ok(TrainedModel {
        params,
        history,
        initial_train_loss,
        initial_dev_loss,
        best_epoch,
        train_input,
    })
}

/// Dev examples exactly as training saw them, for re-evaluating a snapshot.
#[cfg(test)]
pub(crate) fn dev_examples(
    tc: &TrainConfig,
    split: &SplitDataset,
    vocab: &Vocabulary,
    train_input: InputKind,
) -> Vec<Example> {
    let dev = match train_input {
        InputKind::Signal => split.dev.clone(),
        InputKind::Noise => make_noise_like(&split.dev, derive_seed(tc.seed, STREAM_DEV_NOISE)),
    };
    Example::from_corpus(&dev, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_control, split_corpus, ControlKind, SplitRatios};

    fn control_split(kind: ControlKind) -> (SplitDataset, Vocabulary) {
        let corpus = gen_synthetic_control(kind, 50, 20, 32, 7).unwrap();
        let split = split_corpus(&corpus, SplitRatios::default(), 7).unwrap();
        let vocab = Vocabulary::build(&split.train, 1).unwrap();
        (split, vocab)
    }

    fn small_config(vocab: &Vocabulary) -> ModelConfig {
        ModelConfig {
            feature_dim: 32,
            d_model: 16,
            n_layers_enc: 1,
            n_heads: 2,
            n_layers_dec: 1,
            d_ff: 32,
            vocab_size: vocab.len(),
            max_len: 16,
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let (split, vocab) = control_split(ControlKind::Informative);
        let tc = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(train(&small_config(&vocab), &tc, &split, &vocab, InputKind::Signal).is_err());
    }

    #[test]
    fn vocab_size_must_match() {
        let (split, vocab) = control_split(ControlKind::Informative);
        let cfg = ModelConfig { vocab_size: vocab.len() + 1, ..small_config(&vocab) };
        let tc = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert!(matches!(
            train(&cfg, &tc, &split, &vocab, InputKind::Signal),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn training_is_deterministic_and_keeps_best_snapshot() {
        let (split, vocab) = control_split(ControlKind::Informative);
        let tc = TrainConfig { epochs: 4, seed: 3, ..TrainConfig::default() };
        let cfg = small_config(&vocab);
        let a = train(&cfg, &tc, &split, &vocab, InputKind::Noise).unwrap();
        let b = train(&cfg, &tc, &split, &vocab, InputKind::Noise).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 4);

        let min = a.history.iter().map(|h| h.dev_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_dev_loss(), min);
        let dev = dev_examples(&tc, &split, &vocab, InputKind::Noise);
        let again = evaluate_loss(&a.params, &dev).unwrap();
        assert!((again - min).abs() < 1e-9);
    }

    #[test]
    fn huge_learning_rate_diverges_with_epoch() {
        let (split, vocab) = control_split(ControlKind::Informative);
        let tc = TrainConfig { epochs: 3, learning_rate: 1e6, ..TrainConfig::default() };
        match train(&small_config(&vocab), &tc, &split, &vocab, InputKind::Signal) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {:?}", other.map(|m| m.history)),
        }
    }
}
