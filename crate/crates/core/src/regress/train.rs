//! Mini-batch Adam training for both regimes.
//!
//! `classifier` freezes the encoder, precomputes every pooled feature
//! vector once, and fits only the head. `whole` re-encodes each example
//! every step and backpropagates through pooling into all encoder tensors.

use std::ops::Range;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{encode, encode_forward, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::features::{pool, pooling_backward, PoolingStrategy};
use crate::scalar::Scalar;
use crate::sweep::RunConfig;

use super::{loss, loss_gradient, Adam, LossKind, Regime, RegressionHead};

/// Distinct stream for example shuffling so it never aliases weight init.
const SHUFFLE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// One training example: the tokenized context with its target span,
/// z-scored lexical features, and the four gold values.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample<T> {
    pub piece_ids: Vec<u32>,
    pub span: Range<usize>,
    pub lexical: [T; 2],
    pub gold: [T; 4],
}

/// Per-epoch mean training loss plus freeze-contract evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epoch_mean_loss: Vec<f64>,
    pub encoder_hash_before: String,
    pub encoder_hash_after: String,
}

#[derive(Debug)]
pub struct TrainOutput<T> {
    pub params: EncoderParams<T>,
    pub head: RegressionHead<T>,
    pub log: TrainLog,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn feature_vector<T: Scalar>(
    pooled: &Array1<T>,
    lexical: &[T; 2],
    augmented: bool,
) -> Array1<T> {
    if augmented {
        let mut values = Vec::with_capacity(pooled.len() + 2);
        values.extend(pooled.iter().copied());
        values.extend_from_slice(lexical);
        Array1::from_vec(values)
    } else {
        pooled.clone()
    }
}

/// Forward one example and, when `enc_grads` is given, backpropagate the
/// loss through the head, pooling, and encoder. Returns the loss, the head
/// input vector, and dL/d(head output).
pub fn forward_backward_example<T: Scalar>(
    params: &EncoderParams<T>,
    enc_cfg: &EncoderConfig,
    head: &RegressionHead<T>,
    example: &PreparedExample<T>,
    pooling: PoolingStrategy,
    augmented: bool,
    kind: LossKind,
    enc_grads: Option<&mut EncoderParams<T>>,
) -> Result<(T, Array1<T>, [T; 4])> {
    let tape = encode_forward(params, enc_cfg, &example.piece_ids)?;
    let encoding = crate::encoder::SequenceEncoding::new(tape.output().clone());
    let pooled = pool(&encoding, &example.span, pooling)?;
    let x = feature_vector(&pooled, &example.lexical, augmented);
    let raw = head.predict_raw(&x)?;
    let value = loss(&raw, &example.gold, kind);
    let dy = loss_gradient(&raw, &example.gold, kind);

    if let Some(grads) = enc_grads {
        // dL/dx, truncated to the pooled part: lexical features carry no
        // encoder gradient.
        let dy_vec = Array1::from_vec(dy.to_vec());
        let dx = head.weight.dot(&dy_vec);
        let d_pooled = Array1::from_iter(dx.iter().copied().take(pooled.len()));
        let rows_grad =
            pooling_backward(&d_pooled, encoding.rows(), &example.span, pooling)?;
        tape.backward(&rows_grad, grads)?;
    }
    Ok((value, x, dy))
}

/// Loss of one example under a fixed head; the finite-difference oracle in
/// the tests drives this.
pub fn example_loss<T: Scalar>(
    params: &EncoderParams<T>,
    enc_cfg: &EncoderConfig,
    head: &RegressionHead<T>,
    example: &PreparedExample<T>,
    pooling: PoolingStrategy,
    augmented: bool,
    kind: LossKind,
) -> Result<T> {
    forward_backward_example(params, enc_cfg, head, example, pooling, augmented, kind, None)
        .map(|(value, _, _)| value)
}

/// Trains under `run`'s regime. The classifier regime takes the encoder by
/// value and returns it untouched, so its freeze contract is structural;
/// both hashes land in the log as evidence.
pub fn train<T: Scalar>(
    run: &RunConfig,
    examples: &[PreparedExample<T>],
    params: EncoderParams<T>,
) -> Result<TrainOutput<T>> {
    run.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    let hash_before = hex(&params.content_hash());
    let mut head = RegressionHead::init(run.input_dim(), run.train.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(run.train.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_mean_loss = Vec::with_capacity(run.train.epochs);

    let mut params = params;
    match run.regime {
        Regime::Classifier => {
            // frozen encoder: every feature vector is computed exactly once
            let mut features = Vec::with_capacity(examples.len());
            for ex in examples {
                let encoding = encode(&params, &run.encoder, &ex.piece_ids)?;
                let pooled = pool(&encoding, &ex.span, run.pooling)?;
                features.push(feature_vector(&pooled, &ex.lexical, run.augmented));
            }
            let views = [head.weight.view().into_dyn(), head.bias.view().into_dyn()];
            let mut adam = Adam::new(run.train.learning_rate, &views);

            for epoch in 0..run.train.epochs {
                order.shuffle(&mut shuffle_rng);
                let mut epoch_loss = 0.0f64;
                for (batch_index, batch) in order.chunks(run.train.batch_size).enumerate() {
                    let mut dw = ndarray::Array2::<T>::zeros(head.weight.dim());
                    let mut db = Array1::<T>::zeros(4);
                    let mut batch_loss = T::zero();
                    for &i in batch {
                        let x = &features[i];
                        let raw = head.predict_raw(x)?;
                        batch_loss += loss(&raw, &examples[i].gold, run.train.loss);
                        let dy = loss_gradient(&raw, &examples[i].gold, run.train.loss);
                        for (j, &dyj) in dy.iter().enumerate() {
                            db[j] += dyj;
                            let mut col = dw.column_mut(j);
                            col.zip_mut_with(x, |w, &xi| *w += xi * dyj);
                        }
                    }
                    let scale = T::from_usize(batch.len()).unwrap().recip();
                    dw.mapv_inplace(|g| g * scale);
                    db.mapv_inplace(|g| g * scale);
                    let mean_loss = (batch_loss * scale).to_f64().unwrap_or(f64::NAN);
                    if !mean_loss.is_finite() {
                        return Err(Error::Numerical(format!(
                            "non-finite loss at epoch {epoch} batch {batch_index}"
                        )));
                    }
                    epoch_loss += mean_loss * batch.len() as f64;
                    adam.step(
                        &mut [head.weight.view_mut().into_dyn(), head.bias.view_mut().into_dyn()],
                        &[dw.view().into_dyn(), db.view().into_dyn()],
                    )?;
                }
                epoch_mean_loss.push(epoch_loss / examples.len() as f64);
            }
        }
        Regime::Whole => {
            let mut enc_views = params.tensors().into_iter().map(|(_, v)| v).collect::<Vec<_>>();
            enc_views.push(head.weight.view().into_dyn());
            enc_views.push(head.bias.view().into_dyn());
            let mut adam = Adam::new(run.train.learning_rate, &enc_views);
            drop(enc_views);

            for epoch in 0..run.train.epochs {
                order.shuffle(&mut shuffle_rng);
                let mut epoch_loss = 0.0f64;
                for (batch_index, batch) in order.chunks(run.train.batch_size).enumerate() {
                    let mut enc_grads = params.zeros_like();
                    let mut dw = ndarray::Array2::<T>::zeros(head.weight.dim());
                    let mut db = Array1::<T>::zeros(4);
                    let mut batch_loss = T::zero();
                    for &i in batch {
                        let (value, x, dy) = forward_backward_example(
                            &params,
                            &run.encoder,
                            &head,
                            &examples[i],
                            run.pooling,
                            run.augmented,
                            run.train.loss,
                            Some(&mut enc_grads),
                        )?;
                        batch_loss += value;
                        for (j, &dyj) in dy.iter().enumerate() {
                            db[j] += dyj;
                            let mut col = dw.column_mut(j);
                            col.zip_mut_with(&x, |w, &xi| *w += xi * dyj);
                        }
                    }
                    let scale = T::from_usize(batch.len()).unwrap().recip();
                    for mut view in enc_grads.tensors_mut() {
                        view.mapv_inplace(|g| g * scale);
                    }
                    dw.mapv_inplace(|g| g * scale);
                    db.mapv_inplace(|g| g * scale);
                    let mean_loss = (batch_loss * scale).to_f64().unwrap_or(f64::NAN);
                    if !mean_loss.is_finite() {
                        return Err(Error::Numerical(format!(
                            "non-finite loss at epoch {epoch} batch {batch_index}"
                        )));
                    }
                    epoch_loss += mean_loss * batch.len() as f64;

                    let mut grad_views =
                        enc_grads.tensors().into_iter().map(|(_, v)| v).collect::<Vec<_>>();
                    grad_views.push(dw.view().into_dyn());
                    grad_views.push(db.view().into_dyn());
                    let mut param_views = params.tensors_mut();
                    param_views.push(head.weight.view_mut().into_dyn());
                    param_views.push(head.bias.view_mut().into_dyn());
                    adam.step(&mut param_views, &grad_views)?;
                }
                epoch_mean_loss.push(epoch_loss / examples.len() as f64);
            }
        }
    }

    let hash_after = hex(&params.content_hash());
    Ok(TrainOutput {
        params,
        head,
        log: TrainLog {
            epoch_mean_loss,
            encoder_hash_before: hash_before,
            encoder_hash_after: hash_after,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;
    use crate::features::ContextMode;
    use crate::regress::TrainConfig;
    use crate::sweep::RunConfig;
    use crate::tokenizer::Family;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn small_run(regime: Regime, seed: u64) -> RunConfig {
        let train = TrainConfig {
            regime,
            learning_rate: 1e-3,
            epochs: 5,
            batch_size: 8,
            seed,
            loss: LossKind::L1,
        };
        let encoder = EncoderConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 12,
            vocab_size: 24,
            family: Family::A,
            seed,
        };
        RunConfig::from_axes(
            ContextMode::Sys2,
            Family::A,
            regime,
            PoolingStrategy::Mean,
            true,
            train,
            encoder,
        )
    }

    fn synthetic_examples(n: usize, seed: u64) -> Vec<PreparedExample<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.random_range(2..6usize);
                let piece_ids: Vec<u32> =
                    std::iter::once(1).chain((0..len).map(|_| rng.random_range(2..24u32))).collect();
                let start = rng.random_range(1..piece_ids.len());
                let span = start..piece_ids.len();
                let lexical = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                // targets correlated with the lexical features plus noise
                let base = 40.0 + 20.0 * lexical[0] - 10.0 * lexical[1];
                let gold = [
                    base + rng.random_range(-2.0..2.0),
                    base / 2.0 + rng.random_range(-2.0..2.0),
                    base * 1.2 + rng.random_range(-2.0..2.0),
                    base / 3.0 + rng.random_range(-2.0..2.0),
                ];
                PreparedExample {
                    piece_ids,
                    span,
                    lexical,
                    gold,
                }
            })
            .collect()
    }

    #[test]
    fn classifier_regime_leaves_encoder_bit_identical() {
        let run = small_run(Regime::Classifier, 5);
        let params = init_params::<f64>(&run.encoder).unwrap();
        let examples = synthetic_examples(30, 5);
        let out = train(&run, &examples, params).unwrap();
        assert_eq!(out.log.encoder_hash_before, out.log.encoder_hash_after);
    }

    #[test]
    fn whole_regime_changes_encoder_params() {
        let run = small_run(Regime::Whole, 6);
        let params = init_params::<f64>(&run.encoder).unwrap();
        let examples = synthetic_examples(30, 6);
        let out = train(&run, &examples, params).unwrap();
        assert_ne!(out.log.encoder_hash_before, out.log.encoder_hash_after);
    }

    #[test]
    fn loss_decreases_on_a_learnable_fixture() {
        for regime in [Regime::Classifier, Regime::Whole] {
            let mut run = small_run(regime, 7);
            run.train.epochs = 8;
            let params = init_params::<f64>(&run.encoder).unwrap();
            let examples = synthetic_examples(50, 7);
            let out = train(&run, &examples, params).unwrap();
            let first = out.log.epoch_mean_loss.first().copied().unwrap();
            let last = out.log.epoch_mean_loss.last().copied().unwrap();
            assert!(
                last < first,
                "{regime:?}: loss went {first} -> {last} over epochs {:?}",
                out.log.epoch_mean_loss
            );
        }
    }

    #[test]
    fn training_is_deterministic() {
        let run = small_run(Regime::Whole, 9);
        let examples = synthetic_examples(20, 9);
        let a = train(&run, &examples, init_params::<f64>(&run.encoder).unwrap()).unwrap();
        let b = train(&run, &examples, init_params::<f64>(&run.encoder).unwrap()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.head, b.head);
        assert_eq!(a.log.epoch_mean_loss, b.log.epoch_mean_loss);
    }

    #[test]
    fn empty_examples_are_a_config_error() {
        let run = small_run(Regime::Classifier, 1);
        let params = init_params::<f64>(&run.encoder).unwrap();
        assert!(matches!(
            train(&run, &[], params),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn diverging_loss_aborts_with_epoch_and_batch() {
        let mut run = small_run(Regime::Whole, 11);
        run.train.learning_rate = 1e200;
        run.train.epochs = 20;
        let params = init_params::<f64>(&run.encoder).unwrap();
        let examples = synthetic_examples(20, 11);
        match train(&run, &examples, params) {
            Err(Error::Numerical(msg)) => {
                assert!(msg.contains("epoch"), "{msg}");
                assert!(msg.contains("batch"), "{msg}");
            }
            other => panic!("expected numerical failure, got {other:?}"),
        }
    }

    /// Directional end-to-end gradient check through head + pooling +
    /// encoder; the acceptance suite runs the ≥100-coordinate version.
    #[test]
    fn end_to_end_encoder_gradients_match_finite_differences() {
        let run = small_run(Regime::Whole, 13);
        let mut enc_cfg = run.encoder.clone();
        enc_cfg.d_model = 8;
        enc_cfg.n_heads = 2;
        let params = init_params::<f64>(&enc_cfg).unwrap();
        let head = RegressionHead::init(10, 13);
        let example = PreparedExample {
            piece_ids: vec![1, 4, 7, 7, 3],
            span: 2..5,
            lexical: [0.4, -1.1],
            gold: [55.0, 20.0, 70.0, 25.0],
        };

        for kind in [LossKind::L1, LossKind::L2] {
            let mut grads = params.zeros_like();
            forward_backward_example(
                &params,
                &enc_cfg,
                &head,
                &example,
                PoolingStrategy::Mean,
                true,
                kind,
                Some(&mut grads),
            )
            .unwrap();

            let objective = |p: &EncoderParams<f64>| {
                example_loss(p, &enc_cfg, &head, &example, PoolingStrategy::Mean, true, kind)
                    .unwrap()
            };

            let eps = 1e-4;
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let n_tensors = params.tensors().len();
            for _ in 0..20 {
                let ti = rng.random_range(0..n_tensors);
                let n = params.tensors()[ti].1.len();
                let ei = rng.random_range(0..n);
                let mut plus = params.clone();
                plus.tensors_mut()[ti].as_slice_mut().unwrap()[ei] += eps;
                let mut minus = params.clone();
                minus.tensors_mut()[ti].as_slice_mut().unwrap()[ei] -= eps;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                let analytic = grads.tensors()[ti].1.as_slice().unwrap()[ei];
                if numeric.abs() < 1e-10 && analytic.abs() < 1e-10 {
                    continue;
                }
                assert_relative_eq!(analytic, numeric, max_relative = 1e-3, epsilon = 1e-10);
            }
        }
    }
}
