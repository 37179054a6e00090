//! Transformer encoder-decoder trained from scratch.
//!
//! The encoder projects each word's feature vector to `d_model` with a
//! linear layer, adds sinusoidal positions and runs pre-norm
//! self-attention blocks. The decoder embeds the target prefix, runs
//! causal self-attention and cross-attention over the encoder output, and
//! projects to vocabulary logits. All arithmetic is `f64`; gradients are
//! computed by hand-written backprop (see [`layers`]) and verified against
//! central differences in the test suite.

pub mod checkpoint;
pub mod layers;
pub mod training;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::WordFeature;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tokenizer::PAD;
use layers::{positional_encoding, DecoderLayer, DecoderLayerCache, EncoderLayer, EncoderLayerCache};
pub use layers::{Attention, FeedForward, LayerNorm, Linear};
pub use training::{evaluate_loss, train, EpochStats, Example, TrainConfig, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub d_model: usize,
    pub n_layers_enc: usize,
    pub n_heads: usize,
    pub n_layers_dec: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    /// Longest encoder input and decoder prefix accepted.
    pub max_len: usize,
}

impl Default for ModelConfig {
    /// Desk-scale defaults. `vocab_size` is normally filled in from the
    /// vocabulary built over the training split.
    fn default() -> Self {
        ModelConfig {
            feature_dim: crate::data::DEFAULT_FEATURE_DIM,
            d_model: 64,
            n_layers_enc: 2,
            n_heads: 4,
            n_layers_dec: 2,
            d_ff: 256,
            vocab_size: 16,
            max_len: 64,
        }
    }
}

impl ModelConfig {
    /// Full-size shape: six encoder layers with eight heads.
    pub fn full_size(feature_dim: usize, vocab_size: usize) -> Self {
        ModelConfig {
            feature_dim,
            d_model: 512,
            n_layers_enc: 6,
            n_heads: 8,
            n_layers_dec: 6,
            d_ff: 2048,
            vocab_size,
            max_len: 64,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("d_model", self.d_model),
            ("n_layers_enc", self.n_layers_enc),
            ("n_heads", self.n_heads),
            ("n_layers_dec", self.n_layers_dec),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// All trainable tensors of the model. Also used for gradients, which
/// share the same named shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub config: ModelConfig,
    pub input_proj: Linear,
    pub encoder: Vec<EncoderLayer>,
    pub encoder_norm: LayerNorm,
    /// `vocab_size x d_model`
    pub token_embedding: Array2<f64>,
    pub decoder: Vec<DecoderLayer>,
    pub decoder_norm: LayerNorm,
    pub output: Linear,
}

pub type Gradients = Params;

macro_rules! named_tensors {
    ($self:ident, $($ref:tt)+) => {{
        type Out<'a> = Vec<(String, $($ref)+ Array2<f64>)>;
        fn linear<'a>(out: &mut Out<'a>, prefix: &str, l: $($ref)+ Linear) {
            let Linear { weight, bias } = l;
            out.push((format!("{prefix}.weight"), weight));
            out.push((format!("{prefix}.bias"), bias));
        }
        fn norm<'a>(out: &mut Out<'a>, prefix: &str, n: $($ref)+ LayerNorm) {
            let LayerNorm { scale, offset } = n;
            out.push((format!("{prefix}.scale"), scale));
            out.push((format!("{prefix}.offset"), offset));
        }
        fn attention<'a>(out: &mut Out<'a>, prefix: &str, a: $($ref)+ Attention) {
            let Attention { query, key, value, output } = a;
            linear(out, &format!("{prefix}.query"), query);
            linear(out, &format!("{prefix}.key"), key);
            linear(out, &format!("{prefix}.value"), value);
            linear(out, &format!("{prefix}.output"), output);
        }
        fn feed_forward<'a>(out: &mut Out<'a>, prefix: &str, f: $($ref)+ FeedForward) {
            let FeedForward { up, down } = f;
            linear(out, &format!("{prefix}.up"), up);
            linear(out, &format!("{prefix}.down"), down);
        }

        let mut out: Out<'_> = Vec::new();
        let Params { config: _, input_proj, encoder, encoder_norm, token_embedding, decoder, decoder_norm, output } = $self;
        linear(&mut out, "input_proj", input_proj);
        for (i, layer) in encoder.into_iter().enumerate() {
            let EncoderLayer { attn_norm, self_attn, ff_norm, ff } = layer;
            norm(&mut out, &format!("encoder.{i}.attn_norm"), attn_norm);
            attention(&mut out, &format!("encoder.{i}.self_attn"), self_attn);
            norm(&mut out, &format!("encoder.{i}.ff_norm"), ff_norm);
            feed_forward(&mut out, &format!("encoder.{i}.ff"), ff);
        }
        norm(&mut out, "encoder_norm", encoder_norm);
        out.push(("token_embedding".to_string(), token_embedding));
        for (i, layer) in decoder.into_iter().enumerate() {
            let DecoderLayer { self_norm, self_attn, cross_norm, cross_attn, ff_norm, ff } = layer;
            norm(&mut out, &format!("decoder.{i}.self_norm"), self_norm);
            attention(&mut out, &format!("decoder.{i}.self_attn"), self_attn);
            norm(&mut out, &format!("decoder.{i}.cross_norm"), cross_norm);
            attention(&mut out, &format!("decoder.{i}.cross_attn"), cross_attn);
            norm(&mut out, &format!("decoder.{i}.ff_norm"), ff_norm);
            feed_forward(&mut out, &format!("decoder.{i}.ff"), ff);
        }
        norm(&mut out, "decoder_norm", decoder_norm);
        linear(&mut out, "output", output);
        out
    }};
}

/// Intermediate values kept by [`Params::forward_cached`] for backprop.
pub(crate) struct ForwardCache {
    features: Array2<f64>,
    encoder: Vec<EncoderLayerCache>,
    encoder_norm: layers::LayerNormCache,
    prefix: Vec<usize>,
    decoder: Vec<DecoderLayerCache>,
    decoder_norm: layers::LayerNormCache,
    decoder_final: Array2<f64>,
}

/// Xavier-uniform weights, zero biases, unit layer-norm scales.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<Params> {
    config.validate()?;
    let mut rng = seeded(seed);
    let d = config.d_model;
    Ok(Params {
        config: *config,
        input_proj: Linear::new(config.feature_dim, d, &mut rng),
        encoder: (0..config.n_layers_enc)
            .map(|_| EncoderLayer::new(d, config.d_ff, &mut rng))
            .collect(),
        encoder_norm: LayerNorm::new(d),
        // unit scale, so token identity is not drowned out by the
        // positional encoding
        token_embedding: Array2::from_shape_simple_fn((config.vocab_size, d), || {
            rng.sample::<f64, _>(StandardNormal)
        }),
        decoder: (0..config.n_layers_dec)
            .map(|_| DecoderLayer::new(d, config.d_ff, &mut rng))
            .collect(),
        decoder_norm: LayerNorm::new(d),
        output: Linear::new(d, config.vocab_size, &mut rng),
    })
}

pub(crate) fn features_matrix(features: &[WordFeature], feature_dim: usize) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((features.len(), feature_dim));
    for (i, w) in features.iter().enumerate() {
        if w.dim() != feature_dim {
            return Err(Error::FeatureDim {
                expected: feature_dim,
                found: w.dim(),
                context: format!("model input word {i}"),
            });
        }
        m.row_mut(i).assign(&ndarray::ArrayView1::from(&w.values));
    }
    Ok(m)
}

impl Params {
    /// Zero tensors with the same shapes.
    pub fn zeros_like(&self) -> Params {
        Params {
            config: self.config,
            input_proj: self.input_proj.zeros_like(),
            encoder: self.encoder.iter().map(EncoderLayer::zeros_like).collect(),
            encoder_norm: self.encoder_norm.zeros_like(),
            token_embedding: Array2::zeros(self.token_embedding.raw_dim()),
            decoder: self.decoder.iter().map(DecoderLayer::zeros_like).collect(),
            decoder_norm: self.decoder_norm.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    /// Every tensor with its dotted name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        named_tensors!(self, &'a)
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        named_tensors!(self, &'a mut)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_len {
            return Err(Error::LengthOverflow {
                len,
                max_len: self.config.max_len,
            });
        }
        Ok(())
    }

    /// Encoder output for one feature sequence, `words x d_model`.
    pub fn encode(&self, features: &[WordFeature]) -> Result<Array2<f64>> {
        self.check_len(features.len())?;
        let x = features_matrix(features, self.config.feature_dim)?;
        let mut h = self.input_proj.forward(&x) + positional_encoding(x.nrows(), self.config.d_model);
        for layer in &self.encoder {
            h = layer.forward(&h, self.config.n_heads).0;
        }
        Ok(self.encoder_norm.forward(&h).0)
    }

    /// Decoder logits for a prefix given an encoder output.
    pub fn decode_logits(&self, memory: &Array2<f64>, prefix: &[usize]) -> Result<Array2<f64>> {
        self.check_len(prefix.len())?;
        let mut h = self.embed(prefix)?;
        for layer in &self.decoder {
            h = layer.forward(&h, memory, self.config.n_heads).0;
        }
        Ok(self.output.forward(&self.decoder_norm.forward(&h).0))
    }

    /// Logits of shape `prefix.len() x vocab_size`; row t scores the token
    /// following `prefix[..=t]`.
    pub fn forward(&self, features: &[WordFeature], prefix: &[usize]) -> Result<Array2<f64>> {
        let memory = self.encode(features)?;
        self.decode_logits(&memory, prefix)
    }

    fn embed(&self, prefix: &[usize]) -> Result<Array2<f64>> {
        let mut h = positional_encoding(prefix.len(), self.config.d_model);
        for (t, &id) in prefix.iter().enumerate() {
            if id >= self.config.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    size: self.config.vocab_size,
                });
            }
            let mut row = h.row_mut(t);
            row += &self.token_embedding.row(id);
        }
        Ok(h)
    }

    pub(crate) fn forward_cached(&self, features: &[WordFeature], prefix: &[usize]) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_len(features.len())?;
        self.check_len(prefix.len())?;
        let x = features_matrix(features, self.config.feature_dim)?;
        let heads = self.config.n_heads;

        let mut h = self.input_proj.forward(&x) + positional_encoding(x.nrows(), self.config.d_model);
        let mut encoder = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (next, cache) = layer.forward(&h, heads);
            encoder.push(cache);
            h = next;
        }
        let (memory, encoder_norm) = self.encoder_norm.forward(&h);

        let mut g = self.embed(prefix)?;
        let mut decoder = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let (next, cache) = layer.forward(&g, &memory, heads);
            decoder.push(cache);
            g = next;
        }
        let (decoder_final, decoder_norm) = self.decoder_norm.forward(&g);
        let logits = self.output.forward(&decoder_final);
        Ok((
            logits,
            ForwardCache {
                features: x,
                encoder,
                encoder_norm,
                prefix: prefix.to_vec(),
                decoder,
                decoder_norm,
                decoder_final,
            },
        ))
    }

    /// Accumulates the gradient of a loss with logit gradient `dlogits` into `grads`.
    pub(crate) fn backward(&self, cache: &ForwardCache, dlogits: &Array2<f64>, grads: &mut Params) {
        let dfinal = self.output.backward(&cache.decoder_final, dlogits, &mut grads.output);
        let mut dg = self
            .decoder_norm
            .backward(&cache.decoder_norm, &dfinal, &mut grads.decoder_norm);
        let mut dmemory = Array2::zeros((cache.features.nrows(), self.config.d_model));
        for ((layer, c), grad) in self
            .decoder
            .iter()
            .zip(&cache.decoder)
            .zip(grads.decoder.iter_mut())
            .rev()
        {
            let (dx, dm) = layer.backward(c, &dg, grad);
            dg = dx;
            dmemory += &dm;
        }
        for (t, &id) in cache.prefix.iter().enumerate() {
            let mut row = grads.token_embedding.row_mut(id);
            row += &dg.row(t);
        }

        let mut dh = self
            .encoder_norm
            .backward(&cache.encoder_norm, &dmemory, &mut grads.encoder_norm);
        for ((layer, c), grad) in self
            .encoder
            .iter()
            .zip(&cache.encoder)
            .zip(grads.encoder.iter_mut())
            .rev()
        {
            dh = layer.backward(c, &dh, grad);
        }
        self.input_proj
            .backward(&cache.features, &dh, &mut grads.input_proj);
    }
}

/// Mean token cross-entropy over the non-`PAD` targets.
pub fn loss(logits: &Array2<f64>, targets: &[usize]) -> Result<f64> {
    Ok(loss_and_grad(logits, targets)?.0)
}

/// Cross-entropy and its gradient with respect to the logits.
pub(crate) fn loss_and_grad(logits: &Array2<f64>, targets: &[usize]) -> Result<(f64, Array2<f64>)> {
    if targets.len() != logits.nrows() {
        return Err(Error::InvalidArgument(format!(
            "{} targets for {} logit rows",
            targets.len(),
            logits.nrows()
        )));
    }
    let counted = targets.iter().filter(|&&t| t != PAD).count();
    if counted == 0 {
        return Err(Error::InvalidArgument("no non-PAD targets".into()));
    }
    let vocab = logits.ncols();
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for (t, &target) in targets.iter().enumerate() {
        if target == PAD {
            continue;
        }
        if target >= vocab {
            return Err(Error::TokenOutOfRange { id: target, size: vocab });
        }
        let row = logits.row(t);
        let logp = layers::log_softmax(row.as_slice().expect("standard layout"));
        total -= logp[target];
        let mut drow = dlogits.row_mut(t);
        for (d, lp) in drow.iter_mut().zip(&logp) {
            *d = lp.exp() / counted as f64;
        }
        drow[target] -= 1.0 / counted as f64;
    }
    Ok((total / counted as f64, dlogits))
}

/// Loss of one encoded example: targets are the ids shifted by one.
pub(crate) fn example_loss_and_grad(params: &Params, features: &[WordFeature], ids: &[usize], grads: Option<&mut Params>, scale: f64) -> Result<f64> {
    if ids.len() < 2 {
        return Err(Error::InvalidArgument("target sequence needs at least BOS and EOS".into()));
    }
    let (prefix, targets) = (&ids[..ids.len() - 1], &ids[1..]);
    match grads {
        None => loss(&params.forward(features, prefix)?, targets),
        Some(grads) => {
            let (logits, cache) = params.forward_cached(features, prefix)?;
            let (l, mut dlogits) = loss_and_grad(&logits, targets)?;
            dlogits *= scale;
            params.backward(&cache, &dlogits, grads);
            Ok(l)
        }
    }
}

/// Gradient of the mean per-example loss over a batch of
/// (features, BOS..EOS ids) examples. Returns the mean loss too.
pub fn grad(params: &Params, batch: &[(&[WordFeature], &[usize])]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grads = params.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (features, ids) in batch {
        total += example_loss_and_grad(params, features, ids, Some(&mut grads), scale)?;
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite {
            tensor: format!("gradient of {name}"),
        });
    }
    Ok((total * scale, grads))
}

/// Plain SGD: `param -= lr * grad`.
pub fn sgd_step(params: &mut Params, grads: &Gradients, lr: f64) -> Result<()> {
    let grad_tensors = grads.tensors();
    let mut tensors = params.tensors_mut();
    if tensors.len() != grad_tensors.len() {
        return Err(Error::InvalidArgument("gradient layout does not match params".into()));
    }
    for ((name, p), (gname, g)) in tensors.iter_mut().zip(grad_tensors) {
        if p.shape() != g.shape() || *name != gname {
            return Err(Error::InvalidArgument(format!("shape mismatch for {name}")));
        }
        p.scaled_add(-lr, g);
    }
    Ok(())
}
