//! Frozen file-backed embedding provider.
//!
//! File format: a `dim <d>` header line, then `key<TAB>v1 v2 ... vd` lines.
//! Keys are `piece:<id>` (context-free vector for a piece) or
//! `ctx:<hex-hash>:<position>` (vector for one position of one exact
//! sequence, keyed by a hash of its piece ids). Lookups fall back from the
//! contextual key to the piece key to the zero vector, so partial dumps
//! still run end to end.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{encode, EncoderConfig, EncoderParams, SequenceEncoding, TokenEncoder};

#[derive(Debug, Clone, PartialEq)]
pub struct StaticProvider<T> {
    dim: usize,
    piece_vectors: BTreeMap<u32, Vec<T>>,
    context_vectors: BTreeMap<(String, usize), Vec<T>>,
}

/// First 16 hex chars of SHA-256 over the little-endian piece ids.
pub fn context_hash(piece_ids: &[u32]) -> String {
    let mut hasher = Sha256::new();
    for id in piece_ids {
        hasher.update(id.to_le_bytes());
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl<T: Scalar> StaticProvider<T> {
    pub fn new(dim: usize) -> Self {
        StaticProvider {
            dim,
            piece_vectors: BTreeMap::new(),
            context_vectors: BTreeMap::new(),
        }
    }

    pub fn insert_piece(&mut self, id: u32, vector: Vec<T>) -> Result<()> {
        self.check_dim(vector.len())?;
        self.piece_vectors.insert(id, vector);
        Ok(())
    }

    pub fn insert_context(&mut self, piece_ids: &[u32], position: usize, vector: Vec<T>) -> Result<()> {
        self.check_dim(vector.len())?;
        self.context_vectors
            .insert((context_hash(piece_ids), position), vector);
        Ok(())
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::Shape(format!(
                "vector length {len} does not match provider dim {}",
                self.dim
            )));
        }
        Ok(())
    }

    /// Captures a toy encoder's outputs for the given sequences, so they can
    /// be replayed after reload.
    pub fn from_encoder_outputs(
        params: &EncoderParams<T>,
        config: &EncoderConfig,
        sequences: &[Vec<u32>],
    ) -> Result<Self> {
        let mut provider = StaticProvider::new(config.d_model);
        for seq in sequences {
            let enc = encode(params, config, seq)?;
            for pos in 0..enc.rows() {
                provider.insert_context(seq, pos, enc.row(pos).to_vec())?;
            }
        }
        Ok(provider)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("dim {}\n", self.dim);
        for (id, v) in &self.piece_vectors {
            out.push_str(&format!("piece:{id}\t{}\n", join_values(v)));
        }
        for ((hash, pos), v) in &self.context_vectors {
            out.push_str(&format!("ctx:{hash}:{pos}\t{}\n", join_values(v)));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format("empty provider file".into()))?;
        let dim: usize = header
            .strip_prefix("dim ")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::Format(format!("expected `dim <d>` header, got {header:?}")))?;

        let mut provider = StaticProvider::new(dim);
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let (key, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("line {lineno}: missing tab separator")))?;
            let vector = values
                .split(' ')
                .map(|v| {
                    v.parse::<T>()
                        .map_err(|_| Error::Format(format!("line {lineno}: bad value {v:?}")))
                })
                .collect::<Result<Vec<T>>>()?;
            if vector.len() != dim {
                return Err(Error::Shape(format!(
                    "line {lineno}: vector length {} does not match dim {dim}",
                    vector.len()
                )));
            }
            if let Some(id) = key.strip_prefix("piece:") {
                let id: u32 = id
                    .parse()
                    .map_err(|_| Error::Format(format!("line {lineno}: bad piece id {id:?}")))?;
                provider.piece_vectors.insert(id, vector);
            } else if let Some(rest) = key.strip_prefix("ctx:") {
                let (hash, pos) = rest
                    .split_once(':')
                    .ok_or_else(|| Error::Format(format!("line {lineno}: bad ctx key {key:?}")))?;
                let pos: usize = pos
                    .parse()
                    .map_err(|_| Error::Format(format!("line {lineno}: bad position {pos:?}")))?;
                provider
                    .context_vectors
                    .insert((hash.to_string(), pos), vector);
            } else {
                return Err(Error::Format(format!("line {lineno}: unknown key {key:?}")));
            }
        }
        Ok(provider)
    }
}

fn join_values<T: Scalar>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

impl<T: Scalar> TokenEncoder<T> for StaticProvider<T> {
    /// Per position: stored contextual vector if present, else the piece's
    /// context-free vector, else zero.
    fn encode_ids(&self, piece_ids: &[u32]) -> Result<SequenceEncoding<T>> {
        let hash = context_hash(piece_ids);
        let mut data = Array2::zeros((piece_ids.len(), self.dim));
        for (pos, id) in piece_ids.iter().enumerate() {
            let vector = self
                .context_vectors
                .get(&(hash.clone(), pos))
                .or_else(|| self.piece_vectors.get(id));
            if let Some(v) = vector {
                data.row_mut(pos).assign(&Array1::from_vec(v.clone()));
            }
        }
        Ok(SequenceEncoding::new(data))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
