//! Transformer building blocks with explicit backward passes.
//!
//! Activations are `(positions, features)` matrices. Every `forward` that is
//! used in training returns a cache; the matching `backward` consumes it,
//! accumulates parameter gradients into a same-shaped gradient struct and
//! returns the gradient with respect to the layer input.

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

/// Row-wise numerically stable softmax, in place.
pub(crate) fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Log-softmax of one row of logits.
pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![f64::NEG_INFINITY; logits.len()];
    }
    let log_sum = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|v| v - log_sum).collect()
}

/// Sinusoidal position table, `len x d_model`.
pub fn positional_encoding(len: usize, d_model: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d_model), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d_model as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in x out`
    pub weight: Array2<f64>,
    /// `1 x out`
    pub bias: Array2<f64>,
}

impl Linear {
    pub(crate) fn new(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: xavier(fan_in, fan_out, rng),
            bias: Array2::zeros((1, fan_out)),
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Linear {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array2::zeros(self.bias.raw_dim()),
        }
    }

    pub(crate) fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    pub(crate) fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub scale: Array2<f64>,
    pub offset: Array2<f64>,
}

pub(crate) struct LayerNormCache {
    normalized: Array2<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub(crate) fn new(dim: usize) -> Self {
        LayerNorm {
            scale: Array2::ones((1, dim)),
            offset: Array2::zeros((1, dim)),
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        LayerNorm {
            scale: Array2::zeros(self.scale.raw_dim()),
            offset: Array2::zeros(self.offset.raw_dim()),
        }
    }

    pub(crate) fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let dim = x.ncols() as f64;
        let mut normalized = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in normalized.rows_mut() {
            let mean = row.sum() / dim;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dim;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let y = &normalized * &self.scale + &self.offset;
        (y, LayerNormCache { normalized, inv_std })
    }

    pub(crate) fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.scale += &(dy * &cache.normalized).sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.offset += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));

        let dim = dy.ncols() as f64;
        let dnorm = dy * &self.scale;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (r, mut out) in dx.rows_mut().into_iter().enumerate() {
            let g = dnorm.row(r);
            let xhat = cache.normalized.row(r);
            let sum_g = g.sum();
            let sum_gx = g.dot(&xhat);
            let inv = cache.inv_std[r];
            Zip::from(&mut out).and(&g).and(&xhat).for_each(|o, &gi, &xi| {
                *o = inv / dim * (dim * gi - sum_g - xi * sum_gx);
            });
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Position-wise feed-forward block: `down(gelu(up(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

pub(crate) struct FeedForwardCache {
    input: Array2<f64>,
    pre_activation: Array2<f64>,
    activation: Array2<f64>,
}

impl FeedForward {
    pub(crate) fn new(d_model: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            up: Linear::new(d_model, d_ff, rng),
            down: Linear::new(d_ff, d_model, rng),
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        FeedForward {
            up: self.up.zeros_like(),
            down: self.down.zeros_like(),
        }
    }

    pub(crate) fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, FeedForwardCache) {
        let pre_activation = self.up.forward(x);
        let activation = pre_activation.mapv(gelu);
        let y = self.down.forward(&activation);
        (
            y,
            FeedForwardCache {
                input: x.clone(),
                pre_activation,
                activation,
            },
        )
    }

    pub(crate) fn backward(&self, cache: &FeedForwardCache, dy: &Array2<f64>, grad: &mut FeedForward) -> Array2<f64> {
        let mut dact = self.down.backward(&cache.activation, dy, &mut grad.down);
        Zip::from(&mut dact)
            .and(&cache.pre_activation)
            .for_each(|d, &x| *d *= gelu_grad(x));
        self.up.backward(&cache.input, &dact, &mut grad.up)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

pub(crate) struct AttentionCache {
    query_input: Array2<f64>,
    kv_input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    heads: Array2<f64>,
}

impl Attention {
    pub(crate) fn new(d_model: usize, rng: &mut impl Rng) -> Self {
        Attention {
            query: Linear::new(d_model, d_model, rng),
            key: Linear::new(d_model, d_model, rng),
            value: Linear::new(d_model, d_model, rng),
            output: Linear::new(d_model, d_model, rng),
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Attention {
            query: self.query.zeros_like(),
            key: self.key.zeros_like(),
            value: self.value.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    /// Attends from `query_input` rows over `kv_input` rows. With `causal`,
    /// row i only sees key rows `0..=i`.
    pub(crate) fn forward(
        &self,
        query_input: &Array2<f64>,
        kv_input: &Array2<f64>,
        n_heads: usize,
        causal: bool,
    ) -> (Array2<f64>, AttentionCache) {
        let q = self.query.forward(query_input);
        let k = self.key.forward(kv_input);
        let v = self.value.forward(kv_input);
        let d_model = q.ncols();
        let head_dim = d_model / n_heads;
        let scale = 1.0 / (head_dim as f64).sqrt();

        let mut heads = Array2::zeros((q.nrows(), d_model));
        let mut probs = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let cols = s![.., h * head_dim..(h + 1) * head_dim];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            if causal {
                for ((i, j), v) in scores.indexed_iter_mut() {
                    if j > i {
                        *v = f64::NEG_INFINITY;
                    }
                }
            }
            softmax_rows(&mut scores);
            heads.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let out = self.output.forward(&heads);
        (
            out,
            AttentionCache {
                query_input: query_input.clone(),
                kv_input: kv_input.clone(),
                q,
                k,
                v,
                probs,
                heads,
            },
        )
    }

    /// Returns (d query_input, d kv_input).
    pub(crate) fn backward(
        &self,
        cache: &AttentionCache,
        dy: &Array2<f64>,
        grad: &mut Attention,
    ) -> (Array2<f64>, Array2<f64>) {
        let dheads = self.output.backward(&cache.heads, dy, &mut grad.output);
        let n_heads = cache.probs.len();
        let d_model = cache.q.ncols();
        let head_dim = d_model / n_heads;
        let scale = 1.0 / (head_dim as f64).sqrt();

        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * head_dim..(h + 1) * head_dim];
            let dout = dheads.slice(cols);
            let mut dvh = dv.slice_mut(cols);
            dvh += &p.t().dot(&dout);

            let dp = dout.dot(&cache.v.slice(cols).t());
            let mut ds = dp;
            for (mut ds_row, p_row) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot = ds_row.dot(&p_row);
                Zip::from(&mut ds_row)
                    .and(&p_row)
                    .for_each(|d, &pi| *d = pi * (*d - dot) * scale);
            }
            let mut dqh = dq.slice_mut(cols);
            dqh += &ds.dot(&cache.k.slice(cols));
            let mut dkh = dk.slice_mut(cols);
            dkh += &ds.t().dot(&cache.q.slice(cols));
        }

        let d_query_input = self.query.backward(&cache.query_input, &dq, &mut grad.query);
        let mut d_kv_input = self.key.backward(&cache.kv_input, &dk, &mut grad.key);
        d_kv_input += &self.value.backward(&cache.kv_input, &dv, &mut grad.value);
        (d_query_input, d_kv_input)
    }
}

/// Pre-norm encoder block: self-attention then feed-forward, each residual.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub self_attn: Attention,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
}

pub(crate) struct EncoderLayerCache {
    attn_norm: LayerNormCache,
    self_attn: AttentionCache,
    ff_norm: LayerNormCache,
    ff: FeedForwardCache,
}

impl EncoderLayer {
    pub(crate) fn new(d_model: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        EncoderLayer {
            attn_norm: LayerNorm::new(d_model),
            self_attn: Attention::new(d_model, rng),
            ff_norm: LayerNorm::new(d_model),
            ff: FeedForward::new(d_model, d_ff, rng),
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        EncoderLayer {
            attn_norm: self.attn_norm.zeros_like(),
            self_attn: self.self_attn.zeros_like(),
            ff_norm: self.ff_norm.zeros_like(),
            ff: self.ff.zeros_like(),
        }
    }

    pub(crate) fn forward(&self, x: &Array2<f64>, n_heads: usize) -> (Array2<f64>, EncoderLayerCache) {
        let (a, attn_norm) = self.attn_norm.forward(x);
        let (attn, self_attn) = self.self_attn.forward(&a, &a, n_heads, false);
        let x2 = x + &attn;
        let (b, ff_norm) = self.ff_norm.forward(&x2);
        let (f, ff) = self.ff.forward(&b);
        (
            x2 + &f,
            EncoderLayerCache {
                attn_norm,
                self_attn,
                ff_norm,
                ff,
            },
        )
    }

    pub(crate) fn backward(&self, cache: &EncoderLayerCache, dy: &Array2<f64>, grad: &mut EncoderLayer) -> Array2<f64> {
        let db = self.ff.backward(&cache.ff, dy, &mut grad.ff);
        let dx2 = dy + &self.ff_norm.backward(&cache.ff_norm, &db, &mut grad.ff_norm);
        let (dq, dkv) = self.self_attn.backward(&cache.self_attn, &dx2, &mut grad.self_attn);
        let da = dq + &dkv;
        dx2 + &self.attn_norm.backward(&cache.attn_norm, &da, &mut grad.attn_norm)
    }
}

/// Pre-norm decoder block: causal self-attention, cross-attention over the
/// encoder memory, feed-forward.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub self_norm: LayerNorm,
    pub self_attn: Attention,
    pub cross_norm: LayerNorm,
    pub cross_attn: Attention,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
}

pub(crate) struct DecoderLayerCache {
    self_norm: LayerNormCache,
    self_attn: AttentionCache,
    cross_norm: LayerNormCache,
    cross_attn: AttentionCache,
    ff_norm: LayerNormCache,
    ff: FeedForwardCache,
}

impl DecoderLayer {
    pub(crate) fn new(d_model: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        DecoderLayer {
            self_norm: LayerNorm::new(d_model),
            self_attn: Attention::new(d_model, rng),
            cross_norm: LayerNorm::new(d_model),
            cross_attn: Attention::new(d_model, rng),
            ff_norm: LayerNorm::new(d_model),
            ff: FeedForward::new(d_model, d_ff, rng),
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        DecoderLayer {
            self_norm: self.self_norm.zeros_like(),
            self_attn: self.self_attn.zeros_like(),
            cross_norm: self.cross_norm.zeros_like(),
            cross_attn: self.cross_attn.zeros_like(),
            ff_norm: self.ff_norm.zeros_like(),
            ff: self.ff.zeros_like(),
        }
    }

    pub(crate) fn forward(
        &self,
        x: &Array2<f64>,
        memory: &Array2<f64>,
        n_heads: usize,
    ) -> (Array2<f64>, DecoderLayerCache) {
        let (a, self_norm) = self.self_norm.forward(x);
        let (sa, self_attn) = self.self_attn.forward(&a, &a, n_heads, true);
        let x2 = x + &sa;
        let (c, cross_norm) = self.cross_norm.forward(&x2);
        let (ca, cross_attn) = self.cross_attn.forward(&c, memory, n_heads, false);
        let x3 = x2 + &ca;
        let (b, ff_norm) = self.ff_norm.forward(&x3);
        let (f, ff) = self.ff.forward(&b);
        (
            x3 + &f,
            DecoderLayerCache {
                self_norm,
                self_attn,
                cross_norm,
                cross_attn,
                ff_norm,
                ff,
            },
        )
    }

    /// Returns (d input, d memory).
    pub(crate) fn backward(
        &self,
        cache: &DecoderLayerCache,
        dy: &Array2<f64>,
        grad: &mut DecoderLayer,
    ) -> (Array2<f64>, Array2<f64>) {
        let db = self.ff.backward(&cache.ff, dy, &mut grad.ff);
        let dx3 = dy + &self.ff_norm.backward(&cache.ff_norm, &db, &mut grad.ff_norm);
        let (dc, dmemory) = self.cross_attn.backward(&cache.cross_attn, &dx3, &mut grad.cross_attn);
        let dx2 = &dx3 + &self.cross_norm.backward(&cache.cross_norm, &dc, &mut grad.cross_norm);
        let (dq, dkv) = self.self_attn.backward(&cache.self_attn, &dx2, &mut grad.self_attn);
        let da = dq + &dkv;
        let dx = dx2 + &self.self_norm.backward(&cache.self_norm, &da, &mut grad.self_norm);
        (dx, dmemory)
    }
}
