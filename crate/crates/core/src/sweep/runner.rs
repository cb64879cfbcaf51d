//! Per-config execution and the bounded-parallelism sweep.
//!
//! Every run is self-contained: it retrains its vocabulary, derives its
//! seeds from its config, trains, and evaluates on the test split. Runs
//! never share mutable state, so results are identical for any worker
//! count, and one failing run never aborts the rest.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::corpus::{load_dataset, Dataset, SplitTag};
use crate::encoder::init_params;
use crate::error::{Error, Result};
use crate::eval::{mae, MaeSummary, RunOutcome, RunResult};
use crate::features::{
    build_context, build_frequency_table, fit_augment_norm, AugmentNorm, FrequencyTable,
};
use crate::regress::{gold_targets, train, PreparedExample, TrainLog, TrainedModel};
use crate::scalar::Scalar;
use crate::tokenizer::{tokenize_sequence, train_vocab, SubwordVocab};

use super::RunConfig;

/// The three splits a sweep works over.
#[derive(Debug, Clone)]
pub struct SweepData<T> {
    pub train: Dataset<T>,
    pub dev: Dataset<T>,
    pub test: Dataset<T>,
}

impl<T: Scalar> SweepData<T> {
    /// Loads `train.csv`, `dev.csv`, `test.csv` from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Ok(SweepData {
            train: load_dataset(&dir.join("train.csv"), SplitTag::Train)?,
            dev: load_dataset(&dir.join("dev.csv"), SplitTag::Dev)?,
            test: load_dataset(&dir.join("test.csv"), SplitTag::Test)?,
        })
    }

    /// SHA-256 over the canonical CSV text of all three splits.
    pub fn fingerprint(&self) -> String {
        let mut text = self.train.to_csv_string();
        text.push_str(&self.dev.to_csv_string());
        text.push_str(&self.test.to_csv_string());
        sha256_hex(text.as_bytes())
    }
}

/// Hex digest used for data fingerprints.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Turns every word of a dataset into a training example under one config's
/// context mode, tokenizer, and augmentation statistics.
pub fn prepare_examples<T: Scalar>(
    run: &RunConfig,
    vocab: &SubwordVocab,
    table: &FrequencyTable,
    norm: &AugmentNorm,
    ds: &Dataset<T>,
) -> Result<Vec<PreparedExample<T>>> {
    let mut examples = Vec::with_capacity(ds.len());
    for sentence in ds.sentences() {
        let words: Vec<String> = sentence.iter().map(|r| r.word.clone()).collect();
        for record in sentence {
            let ctx = build_context(&words, record.word_index, run.context)?;
            let (piece_ids, alignment) = tokenize_sequence(vocab, ctx);
            if piece_ids.len() > run.encoder.max_seq_len {
                return Err(Error::Shape(format!(
                    "sentence ({}, {}) needs {} tokens, max_seq_len is {}",
                    record.language,
                    record.sentence_id,
                    piece_ids.len(),
                    run.encoder.max_seq_len
                )));
            }
            let target = alignment.last().expect("context is never empty");
            let lex = norm.lexical_features(&record.word, &record.language, table);
            examples.push(PreparedExample {
                span: target.span.clone(),
                piece_ids,
                lexical: [
                    T::from_f64(lex[0]).unwrap(),
                    T::from_f64(lex[1]).unwrap(),
                ],
                gold: record.features(),
            });
        }
    }
    Ok(examples)
}

/// Everything a finished run produced beyond its metrics.
pub struct RunArtifacts<T> {
    pub model: TrainedModel<T>,
    pub log: TrainLog,
    pub dev_mae: Option<MaeSummary>,
}

/// Trains one configuration on the training split: retrains the vocabulary,
/// fits the lexical statistics, and runs the configured regime. Dev MAE is
/// logged, never acted on.
pub fn fit<T: Scalar>(
    run: &RunConfig,
    train_ds: &Dataset<T>,
    dev_ds: Option<&Dataset<T>>,
) -> Result<RunArtifacts<T>> {
    run.validate()?;
    let corpus: Vec<&str> = train_ds.records().iter().map(|r| r.word.as_str()).collect();
    let vocab = train_vocab(&corpus, run.encoder.vocab_size, run.family)?;
    let table = build_frequency_table(train_ds)?;
    let norm = fit_augment_norm(train_ds, &table)?;
    let examples = prepare_examples(run, &vocab, &table, &norm, train_ds)?;
    let params = init_params::<T>(&run.encoder)?;
    let out = train(run, &examples, params)?;

    let model = TrainedModel {
        config: run.clone(),
        vocab,
        params: out.params,
        head: out.head,
        frequency_table: table,
        augment_norm: norm,
    };

    let dev_mae = match dev_ds {
        Some(dev) if !dev.is_empty() => {
            let preds = model.predict_dataset(dev)?;
            let summary = mae(&preds, &gold_targets(dev))?;
            log::debug!("{}: dev MAE {:.4}", run.name, summary.overall);
            Some(summary)
        }
        _ => None,
    };

    Ok(RunArtifacts {
        model,
        log: out.log,
        dev_mae,
    })
}

/// Trains and evaluates one configuration. The returned result carries
/// test-split MAEs.
pub fn run_single<T: Scalar>(
    run: &RunConfig,
    data: &SweepData<T>,
) -> Result<(RunResult, RunArtifacts<T>)> {
    let started = Instant::now();
    let artifacts = fit(run, &data.train, Some(&data.dev))?;

    let preds = artifacts.model.predict_dataset(&data.test)?;
    let golds = gold_targets(&data.test);
    let test_mae = mae(&preds, &golds)?;
    log::debug!("{}: test MAE {:.4}", run.name, test_mae.overall);

    let result = RunResult {
        config: run.clone(),
        mae: test_mae,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((result, artifacts))
}

/// Executes a grid on a bounded worker pool. Failures are recorded per run;
/// the sweep only errors if every run failed. Output order is canonical
/// (sorted by name) regardless of scheduling.
pub fn run_sweep<T: Scalar>(
    grid: &[RunConfig],
    data: &SweepData<T>,
    parallelism: usize,
) -> Result<Vec<RunOutcome>> {
    if parallelism == 0 {
        return Err(Error::Config("parallelism must be at least 1".into()));
    }
    if grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let mut outcomes: Vec<RunOutcome> = pool.install(|| {
        grid.par_iter()
            .map(|run| match run_single(run, data) {
                Ok((result, _)) => RunOutcome::Success(result),
                Err(e) => RunOutcome::Failure {
                    config: run.clone(),
                    error: e.to_string(),
                },
            })
            .collect()
    });
    outcomes.sort_by(|a, b| a.name().cmp(b.name()));

    if outcomes.iter().all(|o| o.as_success().is_none()) {
        let first_error = outcomes
            .iter()
            .find_map(|o| match o {
                RunOutcome::Failure { error, .. } => Some(error.clone()),
                RunOutcome::Success(_) => None,
            })
            .unwrap_or_default();
        return Err(Error::Numerical(format!(
            "all {} runs failed; first error: {first_error}",
            outcomes.len()
        )));
    }
    Ok(outcomes)
}
