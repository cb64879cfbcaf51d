//! Model-input construction for one target word: context selection,
//! subword-span pooling, and optional augmentation with z-normalized word
//! length and log word frequency.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::encoder::SequenceEncoding;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How much of the sentence the encoder sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContextMode {
    /// Target word alone.
    #[serde(rename = "sys1")]
    Sys1,
    /// Target word plus all preceding words of its sentence.
    #[serde(rename = "sys2")]
    Sys2,
}

impl ContextMode {
    pub fn label(&self) -> &'static str {
        match self {
            ContextMode::Sys1 => "sys1",
            ContextMode::Sys2 => "sys2",
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How a target word's subword rows collapse to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingStrategy {
    First,
    Mean,
    Sum,
}

impl PoolingStrategy {
    pub const ALL: [PoolingStrategy; 3] = [
        PoolingStrategy::First,
        PoolingStrategy::Mean,
        PoolingStrategy::Sum,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            PoolingStrategy::First => "first",
            PoolingStrategy::Mean => "mean",
            PoolingStrategy::Sum => "sum",
        }
    }
}

impl fmt::Display for PoolingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Case-folded word counts over the training split, keyed per language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FrequencyTable {
    counts: BTreeMap<String, BTreeMap<String, u64>>,
    totals: BTreeMap<String, u64>,
}

impl FrequencyTable {
    pub fn count(&self, language: &str, word: &str) -> u64 {
        self.counts
            .get(language)
            .and_then(|words| words.get(&word.to_lowercase()))
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self, language: &str) -> u64 {
        self.totals.get(language).copied().unwrap_or(0)
    }

    /// ln(1 + count); zero for unseen words.
    pub fn log_freq(&self, language: &str, word: &str) -> f64 {
        (1.0 + self.count(language, word) as f64).ln()
    }
}

/// Counts every training-split token, case-folded, per language.
pub fn build_frequency_table<T: Scalar>(train: &Dataset<T>) -> Result<FrequencyTable> {
    if train.is_empty() {
        return Err(Error::Config(
            "cannot build a frequency table from an empty training split".into(),
        ));
    }
    let mut table = FrequencyTable::default();
    for r in train.records() {
        *table
            .counts
            .entry(r.language.clone())
            .or_default()
            .entry(r.word.to_lowercase())
            .or_insert(0) += 1;
        *table.totals.entry(r.language.clone()).or_insert(0) += 1;
    }
    Ok(table)
}

/// Mean/std of the two lexical features over the training split, used to
/// z-normalize augmentations. A zero-variance feature emits a constant 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentNorm {
    pub length_mean: f64,
    pub length_std: f64,
    pub log_freq_mean: f64,
    pub log_freq_std: f64,
}

/// Fits z-normalization statistics (population std) on the training split.
pub fn fit_augment_norm<T: Scalar>(train: &Dataset<T>, table: &FrequencyTable) -> Result<AugmentNorm> {
    if train.is_empty() {
        return Err(Error::Config(
            "cannot fit augmentation statistics on an empty training split".into(),
        ));
    }
    let n = train.len() as f64;
    let values: Vec<(f64, f64)> = train
        .records()
        .iter()
        .map(|r| {
            (
                r.word.chars().count() as f64,
                table.log_freq(&r.language, &r.word),
            )
        })
        .collect();
    let length_mean = values.iter().map(|v| v.0).sum::<f64>() / n;
    let log_freq_mean = values.iter().map(|v| v.1).sum::<f64>() / n;
    let length_std =
        (values.iter().map(|v| (v.0 - length_mean).powi(2)).sum::<f64>() / n).sqrt();
    let log_freq_std =
        (values.iter().map(|v| (v.1 - log_freq_mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(AugmentNorm {
        length_mean,
        length_std,
        log_freq_mean,
        log_freq_std,
    })
}

impl AugmentNorm {
    /// z-scored (length, log frequency) for one word.
    pub fn lexical_features(&self, word: &str, language: &str, table: &FrequencyTable) -> [f64; 2] {
        let z = |x: f64, mean: f64, std: f64| if std == 0.0 { 0.0 } else { (x - mean) / std };
        [
            z(word.chars().count() as f64, self.length_mean, self.length_std),
            z(
                table.log_freq(language, word),
                self.log_freq_mean,
                self.log_freq_std,
            ),
        ]
    }
}

/// A regression input vector plus the word it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    pub values: Array1<T>,
    pub word: String,
    pub language: String,
}

/// Selects the words the encoder sees for one target. The target word is
/// always last: Sys1 yields it alone, Sys2 prepends every preceding word.
pub fn build_context<'a>(
    sentence_words: &'a [String],
    target_index: usize,
    mode: ContextMode,
) -> Result<&'a [String]> {
    if target_index >= sentence_words.len() {
        return Err(Error::Shape(format!(
            "target index {target_index} out of range for a sentence of {} words",
            sentence_words.len()
        )));
    }
    Ok(match mode {
        ContextMode::Sys1 => &sentence_words[target_index..=target_index],
        ContextMode::Sys2 => &sentence_words[..=target_index],
    })
}

fn check_span<T: Scalar>(encoding: &SequenceEncoding<T>, span: &Range<usize>) -> Result<()> {
    if span.is_empty() {
        return Err(Error::Shape("empty pooling span".into()));
    }
    if span.start == 0 {
        return Err(Error::Shape("pooling span must exclude the bos row".into()));
    }
    if span.end > encoding.rows() {
        return Err(Error::Shape(format!(
            "span {span:?} exceeds encoding rows {}",
            encoding.rows()
        )));
    }
    Ok(())
}

/// Collapses the span's rows: first row, arithmetic mean, or componentwise sum.
pub fn pool<T: Scalar>(
    encoding: &SequenceEncoding<T>,
    span: &Range<usize>,
    strategy: PoolingStrategy,
) -> Result<Array1<T>> {
    check_span(encoding, span)?;
    let rows = encoding.as_array().slice(ndarray::s![span.clone(), ..]);
    Ok(match strategy {
        PoolingStrategy::First => rows.row(0).to_owned(),
        PoolingStrategy::Sum => rows.sum_axis(ndarray::Axis(0)),
        PoolingStrategy::Mean => {
            let len = T::from_usize(span.len()).unwrap();
            rows.sum_axis(ndarray::Axis(0)).mapv_into(|v| v / len)
        }
    })
}

/// Routes a pooled-vector gradient back onto the span's rows; rows outside
/// the span receive zero.
pub fn pooling_backward<T: Scalar>(
    upstream: &Array1<T>,
    rows: usize,
    span: &Range<usize>,
    strategy: PoolingStrategy,
) -> Result<ndarray::Array2<T>> {
    if span.is_empty() || span.start == 0 || span.end > rows {
        return Err(Error::Shape(format!(
            "invalid pooling span {span:?} for {rows} rows"
        )));
    }
    let mut grad = ndarray::Array2::zeros((rows, upstream.len()));
    match strategy {
        PoolingStrategy::First => {
            grad.row_mut(span.start).assign(upstream);
        }
        PoolingStrategy::Sum => {
            for i in span.clone() {
                grad.row_mut(i).assign(upstream);
            }
        }
        PoolingStrategy::Mean => {
            let scale = T::from_usize(span.len()).unwrap().recip();
            let scaled = upstream.mapv(|v| v * scale);
            for i in span.clone() {
                grad.row_mut(i).assign(&scaled);
            }
        }
    }
    Ok(grad)
}

/// Appends z-normalized (length, log frequency) to a pooled vector.
pub fn augment<T: Scalar>(
    pooled: &Array1<T>,
    word: &str,
    language: &str,
    table: &FrequencyTable,
    norm: &AugmentNorm,
) -> FeatureVector<T> {
    let lex = norm.lexical_features(word, language, table);
    let mut values = Vec::with_capacity(pooled.len() + 2);
    values.extend(pooled.iter().copied());
    values.push(T::from_f64(lex[0]).unwrap());
    values.push(T::from_f64(lex[1]).unwrap());
    FeatureVector {
        values: Array1::from_vec(values),
        word: word.to_string(),
        language: language.to_string(),
    }
}

/// The unaugmented counterpart of [`augment`]: the pooled vector as-is.
pub fn bare<T: Scalar>(pooled: &Array1<T>, word: &str, language: &str) -> FeatureVector<T> {
    FeatureVector {
        values: pooled.clone(),
        word: word.to_string(),
        language: language.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dataset, GazeRecord, SplitTag};
    use ndarray::{array, Array2};

    fn words(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn enc(rows: Vec<Vec<f64>>) -> SequenceEncoding<f64> {
        let ncols = rows[0].len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        SequenceEncoding::new(Array2::from_shape_vec((rows.len(), ncols), flat).unwrap())
    }

    fn tiny_dataset(rows: &[(&str, u64, usize, &str)]) -> Dataset<f64> {
        let records = rows
            .iter()
            .map(|(lang, sid, idx, word)| GazeRecord {
                language: lang.to_string(),
                sentence_id: *sid,
                word_index: *idx,
                word: word.to_string(),
                ffd_avg: 1.0,
                ffd_std: 1.0,
                trt_avg: 1.0,
                trt_std: 1.0,
            })
            .collect();
        Dataset::new(records, SplitTag::Train).unwrap()
    }

    #[test]
    fn both_modes_agree_on_the_first_word() {
        let s = words(&["a", "b", "c"]);
        assert_eq!(build_context(&s, 0, ContextMode::Sys1).unwrap(), &s[..1]);
        assert_eq!(build_context(&s, 0, ContextMode::Sys2).unwrap(), &s[..1]);
    }

    #[test]
    fn sys2_includes_all_preceding_words() {
        let s = words(&["a", "b", "c"]);
        assert_eq!(build_context(&s, 2, ContextMode::Sys2).unwrap(), &s[..]);
    }

    #[test]
    fn sys1_sees_only_the_target() {
        let s = words(&["a", "b", "c"]);
        assert_eq!(build_context(&s, 2, ContextMode::Sys1).unwrap(), &s[2..]);
    }

    #[test]
    fn out_of_range_target_is_an_error() {
        let s = words(&["a"]);
        assert!(build_context(&s, 1, ContextMode::Sys2).is_err());
    }

    #[test]
    fn pooling_hand_arithmetic() {
        let e = enc(vec![vec![9.0, 9.0], vec![1.0, 2.0], vec![3.0, 4.0]]);
        let span = 1..3;
        assert_eq!(pool(&e, &span, PoolingStrategy::First).unwrap(), array![1.0, 2.0]);
        assert_eq!(pool(&e, &span, PoolingStrategy::Mean).unwrap(), array![2.0, 3.0]);
        assert_eq!(pool(&e, &span, PoolingStrategy::Sum).unwrap(), array![4.0, 6.0]);
    }

    #[test]
    fn single_row_span_degenerates_to_the_same_vector() {
        let e = enc(vec![vec![0.0, 0.0], vec![5.0, -2.5]]);
        let span = 1..2;
        let first = pool(&e, &span, PoolingStrategy::First).unwrap();
        let mean = pool(&e, &span, PoolingStrategy::Mean).unwrap();
        let sum = pool(&e, &span, PoolingStrategy::Sum).unwrap();
        assert_eq!(first, mean);
        assert_eq!(mean, sum);
    }

    #[test]
    fn sum_equals_mean_times_span_length() {
        let e = enc(vec![
            vec![0.0, 0.0, 0.0],
            vec![1.5, -2.0, 0.25],
            vec![3.0, 4.0, -1.0],
            vec![-0.5, 2.0, 8.0],
        ]);
        let span = 1..4;
        let mean = pool(&e, &span, PoolingStrategy::Mean).unwrap();
        let sum = pool(&e, &span, PoolingStrategy::Sum).unwrap();
        for (s, m) in sum.iter().zip(mean.iter()) {
            let scaled = m * span.len() as f64;
            assert!((s - scaled).abs() <= 1e-12 * s.abs().max(1.0));
        }
    }

    #[test]
    fn spans_touching_bos_or_out_of_range_are_errors() {
        let e = enc(vec![vec![1.0], vec![2.0]]);
        assert!(pool(&e, &(0..1), PoolingStrategy::First).is_err());
        assert!(pool(&e, &(1..1), PoolingStrategy::Mean).is_err());
        assert!(pool(&e, &(1..3), PoolingStrategy::Sum).is_err());
    }

    #[test]
    fn pooling_backward_routes_per_strategy() {
        let upstream = array![1.0, 1.0];
        let span = 1..3;
        let first = pooling_backward(&upstream, 4, &span, PoolingStrategy::First).unwrap();
        assert_eq!(first.row(1).to_vec(), vec![1.0, 1.0]);
        assert_eq!(first.row(2).to_vec(), vec![0.0, 0.0]);

        let mean = pooling_backward(&upstream, 4, &span, PoolingStrategy::Mean).unwrap();
        assert_eq!(mean.row(1).to_vec(), vec![0.5, 0.5]);
        assert_eq!(mean.row(2).to_vec(), vec![0.5, 0.5]);

        let sum = pooling_backward(&upstream, 4, &span, PoolingStrategy::Sum).unwrap();
        assert_eq!(sum.row(1).to_vec(), vec![1.0, 1.0]);
        assert_eq!(sum.row(2).to_vec(), vec![1.0, 1.0]);
        assert_eq!(sum.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(sum.row(3).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_row_span_routes_identically_for_all_strategies() {
        let upstream = array![2.0, -3.0];
        let span = 2..3;
        let expected = pooling_backward(&upstream, 4, &span, PoolingStrategy::First).unwrap();
        for strategy in PoolingStrategy::ALL {
            assert_eq!(
                pooling_backward(&upstream, 4, &span, strategy).unwrap(),
                expected
            );
        }
    }

    /// Finite differences of pool() confirm the routing math.
    #[test]
    fn pooling_backward_matches_finite_differences() {
        let base = enc(vec![
            vec![0.1, -0.2, 0.3],
            vec![1.0, 2.0, 3.0],
            vec![-1.0, 0.5, 0.25],
            vec![4.0, -2.0, 1.5],
        ]);
        let span = 1..4;
        let upstream = array![0.7, -1.3, 0.4];
        let eps = 1e-6;
        for strategy in PoolingStrategy::ALL {
            let grad = pooling_backward(&upstream, 4, &span, strategy).unwrap();
            for i in 0..4 {
                for j in 0..3 {
                    let mut plus = base.as_array().clone();
                    plus[[i, j]] += eps;
                    let mut minus = base.as_array().clone();
                    minus[[i, j]] -= eps;
                    let f = |m: ndarray::Array2<f64>| {
                        let pooled =
                            pool(&SequenceEncoding::new(m), &span, strategy).unwrap();
                        pooled.dot(&upstream)
                    };
                    let numeric = (f(plus) - f(minus)) / (2.0 * eps);
                    let analytic = grad[[i, j]];
                    assert!(
                        (numeric - analytic).abs() <= 1e-6 * numeric.abs().max(1.0),
                        "{strategy:?} [{i},{j}]: {analytic} vs {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn frequency_counts_are_case_folded_and_per_language() {
        let ds = tiny_dataset(&[
            ("en", 0, 0, "The"),
            ("en", 0, 1, "the"),
            ("en", 0, 2, "cat"),
            ("de", 1, 0, "the"),
        ]);
        let table = build_frequency_table(&ds).unwrap();
        assert_eq!(table.count("en", "the"), 2);
        assert_eq!(table.count("en", "THE"), 2);
        assert_eq!(table.count("de", "the"), 1);
        assert_eq!(table.count("en", "dog"), 0);
    }

    #[test]
    fn per_language_totals_match_an_independent_recount() {
        let ds = tiny_dataset(&[
            ("en", 0, 0, "a"),
            ("en", 0, 1, "b"),
            ("zh", 1, 0, "c"),
            ("zh", 2, 0, "d"),
            ("zh", 2, 1, "e"),
        ]);
        let table = build_frequency_table(&ds).unwrap();
        let mut recount: BTreeMap<&str, u64> = BTreeMap::new();
        for r in ds.records() {
            *recount.entry(r.language.as_str()).or_insert(0) += 1;
        }
        for (lang, expected) in recount {
            assert_eq!(table.total(lang), expected);
        }
    }

    #[test]
    fn unseen_word_has_zero_raw_log_freq() {
        let ds = tiny_dataset(&[("en", 0, 0, "seen")]);
        let table = build_frequency_table(&ds).unwrap();
        assert_eq!(table.log_freq("en", "unseen"), 0.0);
    }

    #[test]
    fn augment_appends_two_dimensions() {
        let ds = tiny_dataset(&[("en", 0, 0, "abc"), ("en", 0, 1, "de")]);
        let table = build_frequency_table(&ds).unwrap();
        let norm = fit_augment_norm(&ds, &table).unwrap();
        let pooled = array![1.0, 2.0, 3.0];
        let fv = augment(&pooled, "abc", "en", &table, &norm);
        assert_eq!(fv.values.len(), 5);
        assert_eq!(fv.values[0], 1.0);

        // raw length of "abc" is 3 (unicode scalar values)
        assert_eq!("abc".chars().count(), 3);
        assert_eq!("你好".chars().count(), 2);
    }

    #[test]
    fn zero_variance_feature_emits_constant_zero() {
        // all words same length and frequency
        let ds = tiny_dataset(&[("en", 0, 0, "aa"), ("en", 0, 1, "bb")]);
        let table = build_frequency_table(&ds).unwrap();
        let norm = fit_augment_norm(&ds, &table).unwrap();
        assert_eq!(norm.length_std, 0.0);
        let lex = norm.lexical_features("aa", "en", &table);
        assert_eq!(lex[0], 0.0);
    }

    #[test]
    fn z_features_have_zero_mean_unit_std_on_train() {
        let ds = tiny_dataset(&[
            ("en", 0, 0, "a"),
            ("en", 0, 1, "bb"),
            ("en", 0, 2, "ccc"),
            ("en", 1, 0, "a"),
            ("en", 1, 1, "dddd"),
        ]);
        let table = build_frequency_table(&ds).unwrap();
        let norm = fit_augment_norm(&ds, &table).unwrap();
        let zs: Vec<[f64; 2]> = ds
            .records()
            .iter()
            .map(|r| norm.lexical_features(&r.word, &r.language, &table))
            .collect();
        let n = zs.len() as f64;
        for k in 0..2 {
            let mean = zs.iter().map(|z| z[k]).sum::<f64>() / n;
            let std = (zs.iter().map(|z| (z[k] - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() <= 1e-9, "feature {k} mean {mean}");
            assert!((std - 1.0).abs() <= 1e-9, "feature {k} std {std}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]

            #[test]
            fn sum_is_span_length_times_mean(
                rows in 2usize..8,
                cols in 1usize..6,
                seed in 0u64..1000,
            ) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let data = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-5.0..5.0));
                let e = SequenceEncoding::new(data);
                let start = rng.random_range(1..rows);
                let end = rng.random_range(start + 1..=rows);
                let span = start..end;
                let mean = pool(&e, &span, PoolingStrategy::Mean).unwrap();
                let sum = pool(&e, &span, PoolingStrategy::Sum).unwrap();
                for (s, m) in sum.iter().zip(mean.iter()) {
                    let scaled = m * span.len() as f64;
                    prop_assert!((s - scaled).abs() <= 1e-12 * s.abs().max(1.0));
                }
            }
        }
    }
}
