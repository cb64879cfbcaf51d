//! The 48-configuration experiment grid and its execution.

mod report;
mod runner;

pub use report::{build_report, FailedRun, ReportMeta, SweepReport};
pub use runner::{fit, prepare_examples, run_single, run_sweep, sha256_hex, RunArtifacts, SweepData};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::features::{ContextMode, PoolingStrategy};
use crate::regress::{Regime, TrainConfig};
use crate::tokenizer::Family;

/// One point of the grid: the five experiment axes plus training and
/// encoder hyperparameters. The canonical name is a pure function of the
/// axes, e.g. `bert_sys2_augmented_sum_classifier`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    pub context: ContextMode,
    pub family: Family,
    pub regime: Regime,
    pub pooling: PoolingStrategy,
    pub augmented: bool,
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
}

impl RunConfig {
    pub fn from_axes(
        context: ContextMode,
        family: Family,
        regime: Regime,
        pooling: PoolingStrategy,
        augmented: bool,
        mut train: TrainConfig,
        mut encoder: EncoderConfig,
    ) -> Self {
        train.regime = regime;
        encoder.family = family;
        let mut config = RunConfig {
            name: String::new(),
            context,
            family,
            regime,
            pooling,
            augmented,
            train,
            encoder,
        };
        config.name = config.canonical_name();
        config
    }

    pub fn canonical_name(&self) -> String {
        format!(
            "{}_{}_{}_{}_{}",
            self.family.label(),
            self.context.label(),
            if self.augmented { "augmented" } else { "unaugmented" },
            self.pooling.label(),
            self.regime.label()
        )
    }

    /// Fills an omitted name with the canonical one.
    pub fn ensure_name(&mut self) {
        if self.name.is_empty() {
            self.name = self.canonical_name();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name != self.canonical_name() {
            return Err(Error::Config(format!(
                "config name {:?} does not match its axes ({:?} expected)",
                self.name,
                self.canonical_name()
            )));
        }
        if self.family != self.encoder.family {
            return Err(Error::Config(
                "family axis disagrees with encoder.family".into(),
            ));
        }
        if self.regime != self.train.regime {
            return Err(Error::Config(
                "regime axis disagrees with train.regime".into(),
            ));
        }
        self.train.validate()?;
        self.encoder.validate()?;
        Ok(())
    }

    /// Regression-head input width under this config.
    pub fn input_dim(&self) -> usize {
        self.encoder.d_model + if self.augmented { 2 } else { 0 }
    }
}

/// Per-run seed: first eight bytes of SHA-256 over the global seed and the
/// config name, so results do not depend on scheduling.
pub fn derive_run_seed(global_seed: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}

/// The full Cartesian product of the five axes (48 configs), sorted by
/// canonical name. Per-run seeds are derived from the base train seed.
pub fn enumerate_grid(base_train: &TrainConfig, base_encoder: &EncoderConfig) -> Vec<RunConfig> {
    let mut grid = Vec::with_capacity(48);
    for context in [ContextMode::Sys1, ContextMode::Sys2] {
        for family in [Family::A, Family::B] {
            for regime in [Regime::Classifier, Regime::Whole] {
                for pooling in PoolingStrategy::ALL {
                    for augmented in [false, true] {
                        let mut config = RunConfig::from_axes(
                            context,
                            family,
                            regime,
                            pooling,
                            augmented,
                            base_train.clone(),
                            base_encoder.clone(),
                        );
                        let seed = derive_run_seed(base_train.seed, &config.name);
                        config.train.seed = seed;
                        config.encoder.seed = seed;
                        grid.push(config);
                    }
                }
            }
        }
    }
    grid.sort_by(|a, b| a.name.cmp(&b.name));
    grid
}
