//! Contextual token encoders: a small trainable pre-norm transformer with
//! exact reverse-mode gradients, and a frozen file-backed embedding
//! provider for representations computed elsewhere.

mod provider;
mod tape;

pub use provider::StaticProvider;
pub use tape::ForwardTape;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tokenizer::Family;

pub(crate) const LN_EPS: f64 = 1e-5;

/// Hyperparameters of the toy transformer encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    /// Embedding-table rows; must cover the trained vocabulary.
    pub vocab_size: usize,
    pub family: Family,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_seq_len: 128,
            vocab_size: 256,
            family: Family::A,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.max_seq_len == 0 {
            return Err(Error::Config(
                "encoder dimensions must all be positive".into(),
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config(
                "vocab_size must cover the reserved tokens".into(),
            ));
        }
        Ok(())
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// One transformer layer's trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub wq: Array2<T>,
    pub wk: Array2<T>,
    pub wv: Array2<T>,
    pub wo: Array2<T>,
    pub ln1_gain: Array1<T>,
    pub ln1_bias: Array1<T>,
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
    pub ln2_gain: Array1<T>,
    pub ln2_bias: Array1<T>,
}

/// All trainable tensors of the toy encoder. The same structure doubles as
/// the gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub token_embedding: Array2<T>,
    pub position_embedding: Array2<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_ln_gain: Array1<T>,
    pub final_ln_bias: Array1<T>,
}

/// Final-layer hidden state per token position, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEncoding<T> {
    data: Array2<T>,
}

impl<T: Scalar> SequenceEncoding<T> {
    pub fn new(data: Array2<T>) -> Self {
        SequenceEncoding { data }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, T> {
        self.data.row(i)
    }

    pub fn as_array(&self) -> &Array2<T> {
        &self.data
    }
}

/// Anything that turns a piece-id sequence into per-token vectors.
pub trait TokenEncoder<T: Scalar> {
    fn encode_ids(&self, piece_ids: &[u32]) -> Result<SequenceEncoding<T>>;
    fn dim(&self) -> usize;
}

/// Borrowed toy-encoder view with frozen weights.
pub struct FrozenEncoder<'a, T> {
    pub params: &'a EncoderParams<T>,
    pub config: &'a EncoderConfig,
}

impl<T: Scalar> TokenEncoder<T> for FrozenEncoder<'_, T> {
    fn encode_ids(&self, piece_ids: &[u32]) -> Result<SequenceEncoding<T>> {
        encode(self.params, self.config, piece_ids)
    }

    fn dim(&self) -> usize {
        self.config.d_model
    }
}

fn xavier<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| {
        T::from_f64(rng.random_range(-a..a)).unwrap()
    })
}

/// Seeded initialization: weights ~ U(−a, a) with a = √(6/(fan_in+fan_out)),
/// layer-norm gains 1, all biases 0.
pub fn init_params<T: Scalar>(config: &EncoderConfig) -> Result<EncoderParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.d_model;
    let ff = config.d_ff();

    let token_embedding = xavier(&mut rng, config.vocab_size, d);
    let position_embedding = xavier(&mut rng, config.max_seq_len, d);
    let layers = (0..config.n_layers)
        .map(|_| LayerParams {
            wq: xavier(&mut rng, d, d),
            wk: xavier(&mut rng, d, d),
            wv: xavier(&mut rng, d, d),
            wo: xavier(&mut rng, d, d),
            ln1_gain: Array1::ones(d),
            ln1_bias: Array1::zeros(d),
            w1: xavier(&mut rng, d, ff),
            b1: Array1::zeros(ff),
            w2: xavier(&mut rng, ff, d),
            b2: Array1::zeros(d),
            ln2_gain: Array1::ones(d),
            ln2_bias: Array1::zeros(d),
        })
        .collect();

    Ok(EncoderParams {
        token_embedding,
        position_embedding,
        layers,
        final_ln_gain: Array1::ones(d),
        final_ln_bias: Array1::zeros(d),
    })
}

impl<T: Scalar> EncoderParams<T> {
    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            token_embedding: Array2::zeros(self.token_embedding.dim()),
            position_embedding: Array2::zeros(self.position_embedding.dim()),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    wq: Array2::zeros(l.wq.dim()),
                    wk: Array2::zeros(l.wk.dim()),
                    wv: Array2::zeros(l.wv.dim()),
                    wo: Array2::zeros(l.wo.dim()),
                    ln1_gain: Array1::zeros(l.ln1_gain.dim()),
                    ln1_bias: Array1::zeros(l.ln1_bias.dim()),
                    w1: Array2::zeros(l.w1.dim()),
                    b1: Array1::zeros(l.b1.dim()),
                    w2: Array2::zeros(l.w2.dim()),
                    b2: Array1::zeros(l.b2.dim()),
                    ln2_gain: Array1::zeros(l.ln2_gain.dim()),
                    ln2_bias: Array1::zeros(l.ln2_bias.dim()),
                })
                .collect(),
            final_ln_gain: Array1::zeros(self.final_ln_gain.dim()),
            final_ln_bias: Array1::zeros(self.final_ln_bias.dim()),
        }
    }

    /// Tensors in the fixed declared order used for serialization, hashing,
    /// and optimizer state.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out: Vec<(String, ArrayViewD<'_, T>)> = vec![
            (
                "token_embedding".into(),
                self.token_embedding.view().into_dyn(),
            ),
            (
                "position_embedding".into(),
                self.position_embedding.view().into_dyn(),
            ),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.wq"), l.wq.view().into_dyn()));
            out.push((format!("layer{i}.wk"), l.wk.view().into_dyn()));
            out.push((format!("layer{i}.wv"), l.wv.view().into_dyn()));
            out.push((format!("layer{i}.wo"), l.wo.view().into_dyn()));
            out.push((format!("layer{i}.ln1_gain"), l.ln1_gain.view().into_dyn()));
            out.push((format!("layer{i}.ln1_bias"), l.ln1_bias.view().into_dyn()));
            out.push((format!("layer{i}.w1"), l.w1.view().into_dyn()));
            out.push((format!("layer{i}.b1"), l.b1.view().into_dyn()));
            out.push((format!("layer{i}.w2"), l.w2.view().into_dyn()));
            out.push((format!("layer{i}.b2"), l.b2.view().into_dyn()));
            out.push((format!("layer{i}.ln2_gain"), l.ln2_gain.view().into_dyn()));
            out.push((format!("layer{i}.ln2_bias"), l.ln2_bias.view().into_dyn()));
        }
        out.push(("final_ln_gain".into(), self.final_ln_gain.view().into_dyn()));
        out.push(("final_ln_bias".into(), self.final_ln_bias.view().into_dyn()));
        out
    }

    /// Mutable views over the same tensors, in the same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        let mut out: Vec<ArrayViewMutD<'_, T>> = vec![
            self.token_embedding.view_mut().into_dyn(),
            self.position_embedding.view_mut().into_dyn(),
        ];
        for l in &mut self.layers {
            out.push(l.wq.view_mut().into_dyn());
            out.push(l.wk.view_mut().into_dyn());
            out.push(l.wv.view_mut().into_dyn());
            out.push(l.wo.view_mut().into_dyn());
            out.push(l.ln1_gain.view_mut().into_dyn());
            out.push(l.ln1_bias.view_mut().into_dyn());
            out.push(l.w1.view_mut().into_dyn());
            out.push(l.b1.view_mut().into_dyn());
            out.push(l.w2.view_mut().into_dyn());
            out.push(l.b2.view_mut().into_dyn());
            out.push(l.ln2_gain.view_mut().into_dyn());
            out.push(l.ln2_bias.view_mut().into_dyn());
        }
        out.push(self.final_ln_gain.view_mut().into_dyn());
        out.push(self.final_ln_bias.view_mut().into_dyn());
        out
    }

    /// SHA-256 over shapes and element bits in declared order. Detects any
    /// single-bit parameter change.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (name, view) in self.tensors() {
            hasher.update(name.as_bytes());
            for dim in view.shape() {
                hasher.update((*dim as u64).to_le_bytes());
            }
            for v in view.iter() {
                hasher.update(v.to_f64().unwrap_or(f64::NAN).to_bits().to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

/// Bidirectional pre-norm transformer forward pass.
pub fn encode<T: Scalar>(
    params: &EncoderParams<T>,
    config: &EncoderConfig,
    piece_ids: &[u32],
) -> Result<SequenceEncoding<T>> {
    Ok(tape::forward(params, config, piece_ids)?.into_encoding())
}

/// Runs the forward pass and keeps the intermediates needed for backward.
pub fn encode_forward<'a, T: Scalar>(
    params: &'a EncoderParams<T>,
    config: &'a EncoderConfig,
    piece_ids: &[u32],
) -> Result<ForwardTape<'a, T>> {
    tape::forward(params, config, piece_ids)
}

/// Exact reverse-mode gradients of [`encode`] with respect to every
/// parameter tensor, given the upstream gradient on the output rows.
pub fn encode_backward<T: Scalar>(
    params: &EncoderParams<T>,
    config: &EncoderConfig,
    piece_ids: &[u32],
    upstream: &Array2<T>,
) -> Result<EncoderParams<T>> {
    let tape = tape::forward(params, config, piece_ids)?;
    let mut grads = params.zeros_like();
    tape.backward(upstream, &mut grads)?;
    Ok(grads)
}
