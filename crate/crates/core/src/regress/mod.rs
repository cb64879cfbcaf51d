//! The 4-output regression head, training losses, optimizer, and the two
//! training regimes: `classifier` (frozen encoder, head only) and `whole`
//! (end-to-end fine-tuning through pooling and the encoder).

mod adam;
mod model_io;
mod train;

pub use adam::Adam;
pub use model_io::{gold_targets, predict_records, TrainedModel};
pub use train::{
    example_loss, forward_backward_example, train, PreparedExample, TrainLog, TrainOutput,
};

use std::fmt;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which parameters a training run may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Encoder frozen; only the regression layer trains.
    Classifier,
    /// Encoder fine-tuned jointly with the regression layer.
    Whole,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::Classifier => "classifier",
            Regime::Whole => "whole",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Training loss; evaluation is always MAE, so L1 is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
}

/// Optimization hyperparameters shared by both regimes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::Classifier,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 16,
            seed: 0,
            loss: LossKind::L1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Linear map from a feature vector to the four gaze attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionHead<T> {
    /// (input_dim × 4)
    pub weight: Array2<T>,
    /// (4)
    pub bias: Array1<T>,
}

impl<T: Scalar> RegressionHead<T> {
    /// Seeded uniform init with the same fan-based bound the encoder uses.
    pub fn init(input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = (6.0 / (input_dim + 4) as f64).sqrt();
        let weight = Array2::from_shape_fn((input_dim, 4), |_| {
            T::from_f64(rng.random_range(-a..a)).unwrap()
        });
        RegressionHead {
            weight,
            bias: Array1::zeros(4),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Unclipped Wᵀx + b.
    pub fn predict_raw(&self, x: &Array1<T>) -> Result<[T; 4]> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "feature vector length {} does not match head input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        let y = self.weight.t().dot(x) + &self.bias;
        Ok([y[0], y[1], y[2], y[3]])
    }

    /// Clipped prediction, as a submission file would contain.
    pub fn predict(&self, x: &Array1<T>) -> Result<Prediction<T>> {
        Ok(Prediction::from_raw(self.predict_raw(x)?))
    }
}

/// The four predicted attributes, clipped into [0, 100] at inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction<T> {
    pub ffd_avg: T,
    pub ffd_std: T,
    pub trt_avg: T,
    pub trt_std: T,
}

impl<T: Scalar> Prediction<T> {
    pub fn from_raw(raw: [T; 4]) -> Self {
        let hundred = T::from_f64(100.0).unwrap();
        let clip = |v: T| v.max(T::zero()).min(hundred);
        Prediction {
            ffd_avg: clip(raw[0]),
            ffd_std: clip(raw[1]),
            trt_avg: clip(raw[2]),
            trt_std: clip(raw[3]),
        }
    }

    pub fn as_array(&self) -> [T; 4] {
        [self.ffd_avg, self.ffd_std, self.trt_avg, self.trt_std]
    }
}

/// Mean over the four attributes of |pred−gold| (L1) or (pred−gold)² (L2),
/// on unclipped outputs.
pub fn loss<T: Scalar>(pred_unclipped: &[T; 4], gold: &[T; 4], kind: LossKind) -> T {
    let quarter = T::from_f64(0.25).unwrap();
    let mut acc = T::zero();
    for (p, g) in pred_unclipped.iter().zip(gold.iter()) {
        let d = *p - *g;
        acc += match kind {
            LossKind::L1 => d.abs(),
            LossKind::L2 => d * d,
        };
    }
    acc * quarter
}

/// d loss / d pred, per attribute.
pub fn loss_gradient<T: Scalar>(pred_unclipped: &[T; 4], gold: &[T; 4], kind: LossKind) -> [T; 4] {
    let quarter = T::from_f64(0.25).unwrap();
    let two = T::from_f64(2.0).unwrap();
    let mut out = [T::zero(); 4];
    for (o, (p, g)) in out.iter_mut().zip(pred_unclipped.iter().zip(gold.iter())) {
        let d = *p - *g;
        *o = match kind {
            LossKind::L1 => {
                if d > T::zero() {
                    quarter
                } else if d < T::zero() {
                    -quarter
                } else {
                    T::zero()
                }
            }
            LossKind::L2 => two * d * quarter,
        };
    }
    out
}
