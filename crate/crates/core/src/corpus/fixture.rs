//! Deterministic synthetic gaze corpora.
//!
//! Targets are a fixed affine function of word length and log word
//! frequency, plus a term that grows with the number of preceding words in
//! the sentence, plus seeded Gaussian noise. Features are then min-max
//! scaled on the training split, so length/frequency/context effects stay
//! recoverable by downstream models.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{
    apply_scaler, fit_scaler, write_dataset, Dataset, GazeRecord, SplitTag,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const LEXICON_SIZE: usize = 150;
const ZIPF_EXPONENT: f64 = 1.1;
const MIN_WORDS: usize = 4;
const MAX_WORDS: usize = 8;
const NOISE_LEVEL: f64 = 0.1;

/// Per-attribute generating coefficients: intercept, word length,
/// ln(1+train count), word index.
const COEFFS: [[f64; 4]; 4] = [
    [30.0, 8.0, -6.0, 5.0],  // FFD_Avg
    [10.0, 3.0, -2.0, 2.0],  // FFD_Std
    [40.0, 10.0, -7.0, 8.0], // TRT_Avg
    [15.0, 4.0, -3.0, 3.0],  // TRT_Std
];

fn alphabet(language: &str) -> Vec<char> {
    let s = match language {
        "ru" => "абвгдежзийклмнопрстуфхцчшщыэюя",
        "zh" => "的一是不了人我在有他这中大来上国个到说们为子和你地出道也时年得",
        "hi" => "कखगघचछजझटठडढणतथदधनपफबभमयरलवशषसह",
        "de" => "abcdefghijklmnopqrstuvwxyzäöüß",
        _ => "abcdefghijklmnopqrstuvwxyz",
    };
    s.chars().collect()
}

fn build_lexicon(rng: &mut ChaCha8Rng, language: &str) -> Vec<String> {
    let chars = alphabet(language);
    let mut words = Vec::with_capacity(LEXICON_SIZE);
    let mut seen = std::collections::HashSet::new();
    while words.len() < LEXICON_SIZE {
        let len = rng.random_range(2..=8usize);
        let word: String = (0..len)
            .map(|_| chars[rng.random_range(0..chars.len())])
            .collect();
        if seen.insert(word.clone()) {
            words.push(word);
        }
    }
    words
}

/// Cumulative Zipf weights over lexicon ranks.
fn zipf_cumulative(n: usize) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cum = Vec::with_capacity(n);
    for rank in 0..n {
        acc += 1.0 / ((rank + 1) as f64).powf(ZIPF_EXPONENT);
        cum.push(acc);
    }
    let total = *cum.last().unwrap();
    for c in &mut cum {
        *c /= total;
    }
    cum
}

fn sample_zipf(rng: &mut ChaCha8Rng, cum: &[f64]) -> usize {
    let u: f64 = rng.random();
    cum.partition_point(|c| *c < u).min(cum.len() - 1)
}

/// Train/dev/test sentence counts in roughly 80/5/15 proportions, each ≥ 1.
fn split_sizes(n_sentences: usize) -> (usize, usize, usize) {
    let n = n_sentences as f64;
    let mut train = ((n * 1703.0 / 2131.0).round() as usize).max(1);
    let dev = ((n * 104.0 / 2131.0).round() as usize).max(1);
    while train + dev >= n_sentences {
        train -= 1;
    }
    (train, dev, n_sentences - train - dev)
}

struct RawSentence {
    language: String,
    sentence_id: u64,
    words: Vec<String>,
}

/// Generates a deterministic synthetic corpus split into train/dev/test.
///
/// The same `(seed, n_sentences, languages)` triple always yields identical
/// datasets. `n_sentences` must be at least 3 so every split is non-empty.
pub fn generate_fixture<T: Scalar>(
    seed: u64,
    n_sentences: usize,
    languages: &[String],
) -> Result<(Dataset<T>, Dataset<T>, Dataset<T>)> {
    if n_sentences < 3 {
        return Err(Error::Config(format!(
            "need at least 3 sentences to form three splits, got {n_sentences}"
        )));
    }
    if languages.is_empty() {
        return Err(Error::Config("languages list is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lexicons: HashMap<String, Vec<String>> = HashMap::new();
    for lang in languages {
        if !lexicons.contains_key(lang) {
            let lex = build_lexicon(&mut rng, lang);
            lexicons.insert(lang.clone(), lex);
        }
    }
    let cum = zipf_cumulative(LEXICON_SIZE);

    let mut sentences = Vec::with_capacity(n_sentences);
    for i in 0..n_sentences {
        let language = languages[i % languages.len()].clone();
        let n_words = rng.random_range(MIN_WORDS..=MAX_WORDS);
        let lex = &lexicons[&language];
        let words = (0..n_words)
            .map(|_| lex[sample_zipf(&mut rng, &cum)].clone())
            .collect();
        sentences.push(RawSentence {
            language,
            sentence_id: i as u64,
            words,
        });
    }

    let (n_train, n_dev, _) = split_sizes(n_sentences);

    // Plant the frequency effect with training-split counts: exactly what an
    // augmented model later observes.
    let mut train_counts: HashMap<(String, String), usize> = HashMap::new();
    for s in &sentences[..n_train] {
        for w in &s.words {
            *train_counts
                .entry((s.language.clone(), w.clone()))
                .or_insert(0) += 1;
        }
    }

    let noise_scale: [f64; 4] = std::array::from_fn(|k| {
        let [_, a, b, g] = COEFFS[k];
        NOISE_LEVEL * (a * 2.0 + b.abs() * 1.2 + g * 2.3)
    });

    let mut make_records = |ss: &[RawSentence]| -> Vec<GazeRecord<f64>> {
        let mut records = Vec::new();
        for s in ss {
            for (idx, word) in s.words.iter().enumerate() {
                let len = word.chars().count() as f64;
                let count = train_counts
                    .get(&(s.language.clone(), word.clone()))
                    .copied()
                    .unwrap_or(0);
                let log_freq = (1.0 + count as f64).ln();
                let mut f = [0.0f64; 4];
                for k in 0..4 {
                    let [base, a, b, g] = COEFFS[k];
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    f[k] = base + a * len + b * log_freq + g * idx as f64
                        + noise_scale[k] * noise;
                }
                records.push(GazeRecord {
                    language: s.language.clone(),
                    sentence_id: s.sentence_id,
                    word_index: idx,
                    word: word.clone(),
                    ffd_avg: f[0],
                    ffd_std: f[1],
                    trt_avg: f[2],
                    trt_std: f[3],
                });
            }
        }
        records
    };

    let train_raw = Dataset::new(make_records(&sentences[..n_train]), SplitTag::Train)?;
    let dev_raw = Dataset::new(
        make_records(&sentences[n_train..n_train + n_dev]),
        SplitTag::Dev,
    )?;
    let test_raw = Dataset::new(make_records(&sentences[n_train + n_dev..]), SplitTag::Test)?;

    let scaler = fit_scaler(&train_raw)?;
    let train = apply_scaler(&train_raw, &scaler);
    let dev = apply_scaler(&dev_raw, &scaler);
    let test = apply_scaler(&test_raw, &scaler);

    Ok((
        train.map_scalar::<T>(),
        dev.map_scalar::<T>(),
        test.map_scalar::<T>(),
    ))
}

/// Generates a fixture and writes `train.csv`, `dev.csv`, `test.csv` into `dir`.
pub fn write_fixture(seed: u64, n_sentences: usize, languages: &[String], dir: &Path) -> Result<()> {
    let (train, dev, test) = generate_fixture::<f64>(seed, n_sentences, languages)?;
    std::fs::create_dir_all(dir)?;
    write_dataset(&train, &dir.join("train.csv"))?;
    write_dataset(&dev, &dir.join("dev.csv"))?;
    write_dataset(&test, &dir.join("test.csv"))?;
    Ok(())
}
