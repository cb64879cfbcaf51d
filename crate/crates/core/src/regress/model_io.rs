//! Trained-model bundle and its single-file serialization.
//!
//! Layout: `GZMODEL1` magic, a little-endian u32 header length, a JSON
//! header (config, vocabulary, frequency table, augmentation statistics,
//! and the tensor manifest), then raw little-endian f32 tensor data in the
//! declared order: encoder tensors, head weight, head bias. The loader
//! validates the manifest against the header's config before reading.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::encoder::{FrozenEncoder, TokenEncoder};
use crate::error::{Error, Result};
use crate::features::{
    augment, bare, build_context, pool, AugmentNorm, ContextMode, FrequencyTable, PoolingStrategy,
};
use crate::scalar::Scalar;
use crate::sweep::RunConfig;
use crate::tokenizer::{tokenize_sequence, SubwordVocab};

use super::{Prediction, RegressionHead};

const MAGIC: &[u8; 8] = b"GZMODEL1";
const FORMAT_VERSION: u32 = 1;

/// Everything needed to predict on new data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<T> {
    pub config: RunConfig,
    pub vocab: SubwordVocab,
    pub params: crate::encoder::EncoderParams<T>,
    pub head: RegressionHead<T>,
    pub frequency_table: FrequencyTable,
    pub augment_norm: AugmentNorm,
}

#[derive(Serialize, Deserialize)]
struct VocabSpec {
    pieces: Vec<String>,
    continuation_marker: String,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    v: u32,
    config: RunConfig,
    vocab: VocabSpec,
    frequency_table: FrequencyTable,
    augment_norm: AugmentNorm,
    tensors: Vec<TensorSpec>,
}

impl<T: Scalar> TrainedModel<T> {
    fn tensor_manifest(&self) -> Vec<TensorSpec> {
        let mut manifest: Vec<TensorSpec> = self
            .params
            .tensors()
            .iter()
            .map(|(name, view)| TensorSpec {
                name: name.clone(),
                shape: view.shape().to_vec(),
            })
            .collect();
        manifest.push(TensorSpec {
            name: "head.weight".into(),
            shape: self.head.weight.shape().to_vec(),
        });
        manifest.push(TensorSpec {
            name: "head.bias".into(),
            shape: self.head.bias.shape().to_vec(),
        });
        manifest
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            v: FORMAT_VERSION,
            config: self.config.clone(),
            vocab: VocabSpec {
                pieces: self.vocab.pieces().to_vec(),
                continuation_marker: self.vocab.continuation_marker().to_string(),
            },
            frequency_table: self.frequency_table.clone(),
            augment_norm: self.augment_norm.clone(),
            tensors: self.tensor_manifest(),
        };
        let header_bytes = serde_json::to_vec(&header)?;

        let mut file = std::fs::File::create(path)?;
        file.write_all(MAGIC)?;
        file.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        file.write_all(&header_bytes)?;

        let mut buf = Vec::new();
        for (_, view) in self.params.tensors() {
            for v in view.iter() {
                buf.extend_from_slice(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes());
            }
        }
        for v in self.head.weight.iter().chain(self.head.bias.iter()) {
            buf.extend_from_slice(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes());
        }
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let mut len_bytes = [0u8; 4];
        file.read_exact(&mut len_bytes)?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;
        if header.v != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {}",
                header.v
            )));
        }
        header.config.validate()?;
        let vocab =
            SubwordVocab::from_pieces(&header.vocab.pieces, &header.vocab.continuation_marker)?;

        // shapes implied by the config must match the stored manifest
        let expected = expected_manifest(&header.config);
        if header.tensors != expected {
            return Err(Error::Format(
                "tensor manifest does not match the config's declared shapes".into(),
            ));
        }

        let mut read_tensor = |shape: &[usize]| -> Result<ArrayD<T>> {
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; 4 * n];
            file.read_exact(&mut bytes)?;
            let values: Vec<T> = bytes
                .chunks_exact(4)
                .map(|c| {
                    let raw = f32::from_le_bytes(c.try_into().expect("four bytes"));
                    T::from_f32(raw).expect("f32 converts")
                })
                .collect();
            ArrayD::from_shape_vec(IxDyn(shape), values)
                .map_err(|e| Error::Format(format!("bad tensor shape: {e}")))
        };

        let mut params = crate::encoder::init_params::<T>(&header.config.encoder)?;
        {
            let mut views = params.tensors_mut();
            for (view, spec) in views.iter_mut().zip(&header.tensors) {
                let data = read_tensor(&spec.shape)?;
                view.assign(&data);
            }
        }
        let head_w = read_tensor(&[header.config.input_dim(), 4])?;
        let head_b = read_tensor(&[4])?;
        let head = RegressionHead {
            weight: head_w
                .into_dimensionality::<ndarray::Ix2>()
                .map_err(|e| Error::Format(format!("head weight: {e}")))?,
            bias: head_b
                .into_dimensionality::<ndarray::Ix1>()
                .map_err(|e| Error::Format(format!("head bias: {e}")))?,
        };

        Ok(TrainedModel {
            config: header.config,
            vocab,
            params,
            head,
            frequency_table: header.frequency_table,
            augment_norm: header.augment_norm,
        })
    }

    /// Clipped predictions for every word of a dataset, in record order.
    pub fn predict_dataset(&self, ds: &Dataset<T>) -> Result<Vec<Prediction<T>>> {
        let encoder = FrozenEncoder {
            params: &self.params,
            config: &self.config.encoder,
        };
        predict_records(
            &encoder,
            &self.head,
            &self.vocab,
            self.config.context,
            self.config.pooling,
            self.config.augmented,
            &self.frequency_table,
            &self.augment_norm,
            ds,
        )
    }
}

fn expected_manifest(config: &RunConfig) -> Vec<TensorSpec> {
    let d = config.encoder.d_model;
    let ff = config.encoder.d_ff();
    let mut manifest = vec![
        TensorSpec {
            name: "token_embedding".into(),
            shape: vec![config.encoder.vocab_size, d],
        },
        TensorSpec {
            name: "position_embedding".into(),
            shape: vec![config.encoder.max_seq_len, d],
        },
    ];
    for i in 0..config.encoder.n_layers {
        for (suffix, shape) in [
            ("wq", vec![d, d]),
            ("wk", vec![d, d]),
            ("wv", vec![d, d]),
            ("wo", vec![d, d]),
            ("ln1_gain", vec![d]),
            ("ln1_bias", vec![d]),
            ("w1", vec![d, ff]),
            ("b1", vec![ff]),
            ("w2", vec![ff, d]),
            ("b2", vec![d]),
            ("ln2_gain", vec![d]),
            ("ln2_bias", vec![d]),
        ] {
            manifest.push(TensorSpec {
                name: format!("layer{i}.{suffix}"),
                shape,
            });
        }
    }
    manifest.push(TensorSpec {
        name: "final_ln_gain".into(),
        shape: vec![d],
    });
    manifest.push(TensorSpec {
        name: "final_ln_bias".into(),
        shape: vec![d],
    });
    manifest.push(TensorSpec {
        name: "head.weight".into(),
        shape: vec![config.input_dim(), 4],
    });
    manifest.push(TensorSpec {
        name: "head.bias".into(),
        shape: vec![4],
    });
    manifest
}

/// The shared inference pipeline: context → tokenize → encode → pool →
/// (augment) → head. Works with any [`TokenEncoder`], including the static
/// provider.
#[allow(clippy::too_many_arguments)]
pub fn predict_records<T: Scalar, E: TokenEncoder<T>>(
    encoder: &E,
    head: &RegressionHead<T>,
    vocab: &SubwordVocab,
    context: ContextMode,
    pooling: PoolingStrategy,
    augmented: bool,
    table: &FrequencyTable,
    norm: &AugmentNorm,
    ds: &Dataset<T>,
) -> Result<Vec<Prediction<T>>> {
    let mut predictions = Vec::with_capacity(ds.len());
    for sentence in ds.sentences() {
        let words: Vec<String> = sentence.iter().map(|r| r.word.clone()).collect();
        for record in sentence {
            let ctx = build_context(&words, record.word_index, context)?;
            let (piece_ids, alignment) = tokenize_sequence(vocab, ctx);
            let target = alignment.last().expect("context is never empty");
            let encoding = encoder.encode_ids(&piece_ids)?;
            let pooled = pool(&encoding, &target.span, pooling)?;
            let fv = if augmented {
                augment(&pooled, &record.word, &record.language, table, norm)
            } else {
                bare(&pooled, &record.word, &record.language)
            };
            predictions.push(head.predict(&fv.values)?);
        }
    }
    Ok(predictions)
}

/// Gold targets in the same order [`predict_records`] emits predictions.
pub fn gold_targets<T: Scalar>(ds: &Dataset<T>) -> Vec<[T; 4]> {
    ds.records().iter().map(|r| r.features()).collect()
}
