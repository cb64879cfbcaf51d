//! Word-level gaze corpora: ingestion, validation, min-max scaling, and
//! synthetic fixtures.

mod fixture;

pub use fixture::{generate_fixture, write_fixture};

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The four predicted attributes, in canonical column order.
pub const ATTRIBUTES: [&str; 4] = ["FFD_Avg", "FFD_Std", "TRT_Avg", "TRT_Std"];

/// Expected CSV header, in order.
pub const CSV_HEADER: [&str; 8] = [
    "language",
    "sentence_id",
    "word_index",
    "word",
    "FFD_Avg",
    "FFD_Std",
    "TRT_Avg",
    "TRT_Std",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Dev,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SplitTag::Train => "train",
            SplitTag::Dev => "dev",
            SplitTag::Test => "test",
        };
        f.write_str(s)
    }
}

/// One word with its four gaze targets. Features are dimensionless,
/// scaled into [0, 100] on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeRecord<T> {
    pub language: String,
    pub sentence_id: u64,
    pub word_index: usize,
    pub word: String,
    pub ffd_avg: T,
    pub ffd_std: T,
    pub trt_avg: T,
    pub trt_std: T,
}

impl<T: Scalar> GazeRecord<T> {
    pub fn features(&self) -> [T; 4] {
        [self.ffd_avg, self.ffd_std, self.trt_avg, self.trt_std]
    }

    pub fn set_features(&mut self, f: [T; 4]) {
        self.ffd_avg = f[0];
        self.ffd_std = f[1];
        self.trt_avg = f[2];
        self.trt_std = f[3];
    }
}

/// An ordered list of records grouped contiguously by (language, sentence_id).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    records: Vec<GazeRecord<T>>,
    pub split_tag: SplitTag,
}

impl<T: Scalar> Dataset<T> {
    /// Validates grouping, word-index consecutiveness, and word shape.
    pub fn new(records: Vec<GazeRecord<T>>, split_tag: SplitTag) -> Result<Self> {
        validate_records(&records)?;
        Ok(Dataset { records, split_tag })
    }

    pub fn records(&self) -> &[GazeRecord<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Contiguous per-sentence slices, in file order.
    pub fn sentences(&self) -> impl Iterator<Item = &[GazeRecord<T>]> {
        self.records
            .chunk_by(|a, b| a.language == b.language && a.sentence_id == b.sentence_id)
    }

    /// Converts every feature value to another scalar width.
    pub fn map_scalar<U: Scalar>(&self) -> Dataset<U> {
        let cast = |x: T| U::from_f64(x.to_f64().expect("finite feature")).expect("finite feature");
        let records = self
            .records
            .iter()
            .map(|r| GazeRecord {
                language: r.language.clone(),
                sentence_id: r.sentence_id,
                word_index: r.word_index,
                word: r.word.clone(),
                ffd_avg: cast(r.ffd_avg),
                ffd_std: cast(r.ffd_std),
                trt_avg: cast(r.trt_avg),
                trt_std: cast(r.trt_std),
            })
            .collect();
        Dataset {
            records,
            split_tag: self.split_tag,
        }
    }

    /// Serializes to CSV in the canonical column order.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&CSV_HEADER.join(","));
        out.push('\n');
        for r in &self.records {
            let word = if r.word.contains(',') || r.word.contains('"') {
                format!("\"{}\"", r.word.replace('"', "\"\""))
            } else {
                r.word.clone()
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.language, r.sentence_id, r.word_index, word, r.ffd_avg, r.ffd_std, r.trt_avg,
                r.trt_std
            ));
        }
        out
    }
}

fn validate_records<T: Scalar>(records: &[GazeRecord<T>]) -> Result<()> {
    let mut seen: HashSet<(String, u64)> = HashSet::new();
    let mut current: Option<(String, u64)> = None;
    let mut expected_index = 0usize;

    for (i, r) in records.iter().enumerate() {
        if r.word.is_empty() {
            return Err(Error::Parse(format!("record {i}: empty word")));
        }
        if r.word.chars().any(char::is_whitespace) {
            return Err(Error::Parse(format!(
                "record {i}: word {:?} contains whitespace",
                r.word
            )));
        }
        let key = (r.language.clone(), r.sentence_id);
        if current.as_ref() != Some(&key) {
            if !seen.insert(key.clone()) {
                return Err(Error::Integrity(format!(
                    "record {i}: sentence ({}, {}) appears non-contiguously",
                    r.language, r.sentence_id
                )));
            }
            current = Some(key);
            expected_index = 0;
        }
        if r.word_index != expected_index {
            return Err(Error::Integrity(format!(
                "record {i}: sentence ({}, {}) expected word_index {expected_index}, got {}",
                r.language, r.sentence_id, r.word_index
            )));
        }
        expected_index += 1;
    }
    Ok(())
}

/// Per-feature min/max fitted on the training split only.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerParams<T> {
    pub min: [T; 4],
    pub max: [T; 4],
}

/// Fits per-feature extrema over all training records.
pub fn fit_scaler<T: Scalar>(train: &Dataset<T>) -> Result<ScalerParams<T>> {
    let first = train
        .records()
        .first()
        .ok_or_else(|| Error::Config("cannot fit scaler on an empty dataset".into()))?;
    let mut min = first.features();
    let mut max = first.features();
    for r in train.records() {
        for (k, v) in r.features().into_iter().enumerate() {
            min[k] = min[k].min(v);
            max[k] = max[k].max(v);
        }
    }
    Ok(ScalerParams { min, max })
}

/// Maps each feature x to 100·(x−min)/(max−min). A constant column maps to
/// all zeros. Values outside the fitted range are not clipped.
pub fn apply_scaler<T: Scalar>(ds: &Dataset<T>, s: &ScalerParams<T>) -> Dataset<T> {
    let hundred = T::from_f64(100.0).unwrap();
    let mut out = ds.clone();
    for r in &mut out.records {
        let mut f = r.features();
        for k in 0..4 {
            let span = s.max[k] - s.min[k];
            f[k] = if span == T::zero() {
                T::zero()
            } else {
                hundred * ((f[k] - s.min[k]) / span)
            };
        }
        r.set_features(f);
    }
    out
}

/// Loads and validates a dataset from CSV.
///
/// The header must equal [`CSV_HEADER`] exactly; rows are preserved in file
/// order.
pub fn load_dataset<T: Scalar>(path: &Path, split_tag: SplitTag) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let header = reader.headers()?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got != CSV_HEADER {
        return Err(Error::Schema(format!(
            "{}: expected columns {:?}, got {:?}",
            path.display(),
            CSV_HEADER,
            got
        )));
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize| -> &str { row.get(idx).unwrap_or("") };
        let parse_feature = |idx: usize| -> Result<T> {
            field(idx).parse::<T>().map_err(|_| {
                Error::Parse(format!(
                    "{} line {line}: non-numeric {} value {:?}",
                    path.display(),
                    CSV_HEADER[idx],
                    field(idx)
                ))
            })
        };
        let sentence_id: u64 = field(1).parse().map_err(|_| {
            Error::Parse(format!(
                "{} line {line}: invalid sentence_id {:?}",
                path.display(),
                field(1)
            ))
        })?;
        let word_index: usize = field(2).parse().map_err(|_| {
            Error::Parse(format!(
                "{} line {line}: invalid word_index {:?}",
                path.display(),
                field(2)
            ))
        })?;
        records.push(GazeRecord {
            language: field(0).to_string(),
            sentence_id,
            word_index,
            word: field(3).to_string(),
            ffd_avg: parse_feature(4)?,
            ffd_std: parse_feature(5)?,
            trt_avg: parse_feature(6)?,
            trt_std: parse_feature(7)?,
        });
    }
    Dataset::new(records, split_tag)
}

/// Writes a dataset as CSV with the canonical header.
pub fn write_dataset<T: Scalar>(ds: &Dataset<T>, path: &Path) -> Result<()> {
    std::fs::write(path, ds.to_csv_string())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn record(language: &str, sid: u64, idx: usize, word: &str, f: [f64; 4]) -> GazeRecord<f64> {
        GazeRecord {
            language: language.into(),
            sentence_id: sid,
            word_index: idx,
            word: word.into(),
            ffd_avg: f[0],
            ffd_std: f[1],
            trt_avg: f[2],
            trt_std: f[3],
        }
    }

    fn load_str(content: &str) -> Result<Dataset<f64>> {
        let mut file = NamedTempFile::new().unwrap();
        file.write_all(content.as_bytes()).unwrap();
        load_dataset(file.path(), SplitTag::Train)
    }

    const HEADER: &str = "language,sentence_id,word_index,word,FFD_Avg,FFD_Std,TRT_Avg,TRT_Std\n";

    #[test]
    fn header_only_file_loads_empty() {
        let ds = load_str(HEADER).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn single_row_maps_fields_directly() {
        let ds = load_str(&format!("{HEADER}en,0,0,Hello,12.5,3.1,20.0,4.0\n")).unwrap();
        assert_eq!(ds.len(), 1);
        let r = &ds.records()[0];
        assert_eq!(r.language, "en");
        assert_eq!(r.sentence_id, 0);
        assert_eq!(r.word_index, 0);
        assert_eq!(r.word, "Hello");
        assert_eq!(r.features(), [12.5, 3.1, 20.0, 4.0]);
    }

    #[test]
    fn missing_word_index_is_integrity_error() {
        let err = load_str(&format!(
            "{HEADER}en,0,0,a,1,1,1,1\nen,0,2,b,1,1,1,1\n"
        ))
        .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
    }

    #[test]
    fn duplicate_key_is_integrity_error() {
        let err = load_str(&format!(
            "{HEADER}en,0,0,a,1,1,1,1\nen,0,0,a,1,1,1,1\n"
        ))
        .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
    }

    #[test]
    fn interleaved_sentence_is_integrity_error() {
        let err = load_str(&format!(
            "{HEADER}en,0,0,a,1,1,1,1\nen,1,0,b,1,1,1,1\nen,0,1,c,1,1,1,1\n"
        ))
        .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
    }

    #[test]
    fn wrong_header_is_schema_error() {
        let err = load_str("language,sentence_id,word_index,word,FFD_Avg\n").unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn non_numeric_feature_names_row() {
        let err = load_str(&format!("{HEADER}en,0,0,a,xyz,1,1,1\n")).unwrap_err();
        match err {
            Error::Parse(msg) => {
                assert!(msg.contains("line 2"), "{msg}");
                assert!(msg.contains("FFD_Avg"), "{msg}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn scaler_single_record_has_min_equal_max() {
        let ds = Dataset::new(
            vec![record("en", 0, 0, "a", [3.0, 4.0, 5.0, 6.0])],
            SplitTag::Train,
        )
        .unwrap();
        let s = fit_scaler(&ds).unwrap();
        assert_eq!(s.min, [3.0, 4.0, 5.0, 6.0]);
        assert_eq!(s.max, [3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn scaler_min_max_over_values() {
        let ds = Dataset::new(
            vec![
                record("en", 0, 0, "a", [2.0, 0.0, 0.0, 0.0]),
                record("en", 0, 1, "b", [4.0, 0.0, 0.0, 0.0]),
                record("en", 0, 2, "c", [10.0, 0.0, 0.0, 0.0]),
            ],
            SplitTag::Train,
        )
        .unwrap();
        let s = fit_scaler(&ds).unwrap();
        assert_eq!(s.min[0], 2.0);
        assert_eq!(s.max[0], 10.0);

        // 100·(4−2)/8 = 25
        let scaled = apply_scaler(&ds, &s);
        assert_eq!(scaled.records()[1].ffd_avg, 25.0);
    }

    #[test]
    fn scaler_maps_extrema_to_exact_endpoints() {
        let ds = Dataset::new(
            vec![
                record("en", 0, 0, "a", [2.0, -1.0, 7.5, 0.25]),
                record("en", 0, 1, "b", [10.0, 3.0, 9.5, 0.75]),
                record("en", 0, 2, "c", [5.0, 1.0, 8.0, 0.5]),
            ],
            SplitTag::Train,
        )
        .unwrap();
        let s = fit_scaler(&ds).unwrap();
        let scaled = apply_scaler(&ds, &s);
        for k in 0..4 {
            let values: Vec<f64> = scaled.records().iter().map(|r| r.features()[k]).collect();
            assert!(values.contains(&0.0));
            assert!(values.contains(&100.0));
        }
    }

    #[test]
    fn constant_column_scales_to_zeros() {
        let ds = Dataset::new(
            vec![
                record("en", 0, 0, "a", [5.0, 1.0, 1.0, 1.0]),
                record("en", 0, 1, "b", [5.0, 2.0, 2.0, 2.0]),
            ],
            SplitTag::Train,
        )
        .unwrap();
        let s = fit_scaler(&ds).unwrap();
        let scaled = apply_scaler(&ds, &s);
        assert!(scaled.records().iter().all(|r| r.ffd_avg == 0.0));
    }

    #[test]
    fn fit_scaler_rejects_empty_dataset() {
        let ds = Dataset::<f64>::new(vec![], SplitTag::Train).unwrap();
        assert!(fit_scaler(&ds).is_err());
    }

    #[test]
    fn dev_scaling_reuses_train_params_without_clipping() {
        let train = Dataset::new(
            vec![
                record("en", 0, 0, "a", [0.0, 0.0, 0.0, 0.0]),
                record("en", 0, 1, "b", [10.0, 10.0, 10.0, 10.0]),
            ],
            SplitTag::Train,
        )
        .unwrap();
        let dev = Dataset::new(
            vec![record("en", 5, 0, "c", [12.0, -1.0, 5.0, 5.0])],
            SplitTag::Dev,
        )
        .unwrap();
        let s = fit_scaler(&train).unwrap();
        let scaled = apply_scaler(&dev, &s);
        assert_eq!(scaled.records()[0].ffd_avg, 120.0);
        assert_eq!(scaled.records()[0].ffd_std, -10.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = Dataset::new(
            vec![
                record("en", 0, 0, "Hello", [12.5, 3.1, 20.0, 4.0]),
                record("en", 0, 1, "world", [0.1 + 0.2, 1e-7, 99.999, 4.25]),
                record("zh", 1, 0, "你好", [1.0, 2.0, 3.0, 4.0]),
            ],
            SplitTag::Train,
        )
        .unwrap();
        let file = NamedTempFile::new().unwrap();
        write_dataset(&ds, file.path()).unwrap();
        let loaded: Dataset<f64> = load_dataset(file.path(), SplitTag::Train).unwrap();
        assert_eq!(ds, loaded);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_word() -> impl Strategy<Value = String> {
            proptest::string::string_regex("[\\PC&&\\S]{1,6}")
                .unwrap()
                .prop_filter("no whitespace", |w| {
                    !w.is_empty() && !w.chars().any(char::is_whitespace)
                })
        }

        fn arb_dataset() -> impl Strategy<Value = Dataset<f64>> {
            let feature = -1e6f64..1e6f64;
            let sentence = (arb_word(), proptest::collection::vec(feature, 4)).prop_map(|x| x);
            proptest::collection::vec(proptest::collection::vec(sentence, 1..5), 1..6).prop_map(
                |sentences| {
                    let mut records = Vec::new();
                    for (sid, words) in sentences.into_iter().enumerate() {
                        for (idx, (word, f)) in words.into_iter().enumerate() {
                            records.push(record(
                                "en",
                                sid as u64,
                                idx,
                                &word,
                                [f[0], f[1], f[2], f[3]],
                            ));
                        }
                    }
                    Dataset::new(records, SplitTag::Train).unwrap()
                },
            )
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn write_then_load_is_identity(ds in arb_dataset()) {
                let file = NamedTempFile::new().unwrap();
                write_dataset(&ds, file.path()).unwrap();
                let loaded: Dataset<f64> = load_dataset(file.path(), SplitTag::Train).unwrap();
                prop_assert_eq!(ds, loaded);
            }

            #[test]
            fn scaling_train_extrema_hits_endpoints(ds in arb_dataset()) {
                let s = fit_scaler(&ds).unwrap();
                let scaled = apply_scaler(&ds, &s);
                for k in 0..4 {
                    let values: Vec<f64> =
                        scaled.records().iter().map(|r| r.features()[k]).collect();
                    if s.min[k] == s.max[k] {
                        prop_assert!(values.iter().all(|v| *v == 0.0));
                    } else {
                        prop_assert!(values.contains(&0.0));
                        prop_assert!(values.contains(&100.0));
                        prop_assert!(values.iter().all(|v| (0.0..=100.0).contains(v)));
                    }
                }
            }
        }
    }
}
