//! Deterministic subword vocabularies with word↔subword alignment.
//!
//! Two trainable segmenter families stand in for the bert/xlm axis:
//! family A merges by token-weighted pair frequency with a `##`
//! continuation marker, family B merges by distinct-word pair count with a
//! `@@` marker. Both tokenize by greedy longest match with an unk fallback,
//! so every word yields at least one id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK_PIECE: &str = "<unk>";
pub const BOS_PIECE: &str = "<s>";

/// Encoder/segmenter family axis. Labels follow the usual report naming.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "bert")]
    A,
    #[serde(rename = "xlm")]
    B,
}

impl Family {
    pub fn label(&self) -> &'static str {
        match self {
            Family::A => "bert",
            Family::B => "xlm",
        }
    }

    pub fn continuation_marker(&self) -> &'static str {
        match self {
            Family::A => "##",
            Family::B => "@@",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A subword vocabulary with dense ids. Ids 0 and 1 are reserved for the
/// unk and bos tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    piece_to_id: HashMap<String, u32>,
    continuation_marker: String,
    max_piece_chars: usize,
}

/// A word's piece ids plus its half-open span inside a token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedWord {
    pub word: String,
    pub piece_ids: Vec<u32>,
    pub span: Range<usize>,
}

impl SubwordVocab {
    pub const UNK_ID: u32 = 0;
    pub const BOS_ID: u32 = 1;

    /// Builds a vocabulary from an explicit piece list. The first two pieces
    /// must be the reserved unk and bos tokens.
    pub fn from_pieces<S: AsRef<str>>(pieces: &[S], continuation_marker: &str) -> Result<Self> {
        if pieces.len() < 2 || pieces[0].as_ref() != UNK_PIECE || pieces[1].as_ref() != BOS_PIECE {
            return Err(Error::Format(format!(
                "vocab must start with reserved pieces {UNK_PIECE:?}, {BOS_PIECE:?}"
            )));
        }
        let mut piece_to_id = HashMap::with_capacity(pieces.len());
        let mut owned = Vec::with_capacity(pieces.len());
        for (id, p) in pieces.iter().enumerate() {
            let p = p.as_ref().to_string();
            if piece_to_id.insert(p.clone(), id as u32).is_some() {
                return Err(Error::Format(format!("duplicate piece {p:?}")));
            }
            owned.push(p);
        }
        let marker = continuation_marker.to_string();
        let max_piece_chars = owned
            .iter()
            .skip(2)
            .map(|p| p.strip_prefix(marker.as_str()).unwrap_or(p).chars().count())
            .max()
            .unwrap_or(1);
        Ok(SubwordVocab {
            pieces: owned,
            piece_to_id,
            continuation_marker: marker,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn continuation_marker(&self) -> &str {
        &self.continuation_marker
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.piece_to_id.get(piece).copied()
    }

    /// Writes one piece per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for p in &self.pieces {
            out.push_str(p);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Loads a piece-per-line file. The marker is family-determined and is
    /// not stored in the file.
    pub fn load(path: &Path, continuation_marker: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let lines: Vec<&str> = text.lines().collect();
        Self::from_pieces(&lines, continuation_marker)
    }
}

/// Trains a subword vocabulary from the training-split words.
///
/// The base inventory holds every corpus character in both initial and
/// continuation form; remaining capacity is filled with merged pieces picked
/// by the family's scoring rule. Deterministic given identical inputs.
pub fn train_vocab<S: AsRef<str>>(
    corpus: &[S],
    target_size: usize,
    family: Family,
) -> Result<SubwordVocab> {
    if corpus.is_empty() {
        return Err(Error::Config(
            "cannot train a vocabulary on an empty corpus".into(),
        ));
    }
    let marker = family.continuation_marker();

    let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in corpus {
        let w = w.as_ref();
        if !w.is_empty() {
            *word_counts.entry(w).or_insert(0) += 1;
        }
    }

    let chars: BTreeSet<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    let reserved = 2;
    let base = reserved + 2 * chars.len();
    if target_size < base.max(8) {
        return Err(Error::Config(format!(
            "target_size {target_size} cannot hold {reserved} reserved tokens plus \
             {} characters in both forms (need at least {})",
            chars.len(),
            base.max(8)
        )));
    }

    let mut pieces: Vec<String> = vec![UNK_PIECE.to_string(), BOS_PIECE.to_string()];
    pieces.extend(chars.iter().map(|c| c.to_string()));
    pieces.extend(chars.iter().map(|c| format!("{marker}{c}")));
    let mut have: BTreeSet<String> = pieces.iter().cloned().collect();

    // Working segmentation of each distinct word, as marked symbols.
    let mut words: Vec<(Vec<String>, usize)> = word_counts
        .iter()
        .map(|(w, count)| {
            let symbols = w
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        c.to_string()
                    } else {
                        format!("{marker}{c}")
                    }
                })
                .collect();
            (symbols, *count)
        })
        .collect();

    while pieces.len() < target_size {
        let mut pair_scores: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (symbols, count) in &words {
            let weight = match family {
                Family::A => *count, // token-weighted frequency
                Family::B => 1,      // distinct-word pair count
            };
            for pair in symbols.windows(2) {
                *pair_scores
                    .entry((pair[0].clone(), pair[1].clone()))
                    .or_insert(0) += weight;
            }
        }
        // Best score, ties broken by the lexicographically smaller merge.
        let best = pair_scores
            .iter()
            .map(|((a, b), score)| (*score, merge_symbols(a, b, marker), a.clone(), b.clone()))
            .filter(|(_, merged, _, _)| merged != UNK_PIECE && merged != BOS_PIECE)
            .max_by(|x, y| x.0.cmp(&y.0).then_with(|| y.1.cmp(&x.1)));
        let Some((_, merged, left, right)) = best else {
            break; // every word is a single symbol
        };

        for (symbols, _) in &mut words {
            let mut i = 0;
            while i + 1 < symbols.len() {
                if symbols[i] == left && symbols[i + 1] == right {
                    symbols[i] = merged.clone();
                    symbols.remove(i + 1);
                } else {
                    i += 1;
                }
            }
        }
        if have.insert(merged.clone()) {
            pieces.push(merged);
        }
    }

    SubwordVocab::from_pieces(&pieces, marker)
}

fn merge_symbols(left: &str, right: &str, marker: &str) -> String {
    format!("{left}{}", right.strip_prefix(marker).unwrap_or(right))
}

/// Greedy longest-match tokenization. Positions with no matching piece map
/// to the unk id and advance one character, so the result is never empty
/// for a non-empty word.
pub fn tokenize_word(vocab: &SubwordVocab, word: &str) -> Vec<u32> {
    debug_assert!(!word.is_empty(), "tokenize_word requires a non-empty word");
    let chars: Vec<char> = word.chars().collect();
    let mut ids = Vec::new();
    let mut pos = 0;
    while pos < chars.len() {
        let initial = pos == 0;
        let max_len = (chars.len() - pos).min(vocab.max_piece_chars);
        let mut matched = None;
        for len in (1..=max_len).rev() {
            let fragment: String = chars[pos..pos + len].iter().collect();
            let candidate = if initial {
                fragment
            } else {
                format!("{}{fragment}", vocab.continuation_marker)
            };
            if let Some(id) = vocab.id(&candidate) {
                matched = Some((id, len));
                break;
            }
        }
        match matched {
            Some((id, len)) => {
                ids.push(id);
                pos += len;
            }
            None => {
                ids.push(SubwordVocab::UNK_ID);
                pos += 1;
            }
        }
    }
    ids
}

/// Tokenizes a word sequence into `[bos] ++ pieces`, returning the flat id
/// sequence plus per-word alignment spans (which exclude the bos position).
pub fn tokenize_sequence<S: AsRef<str>>(
    vocab: &SubwordVocab,
    words: &[S],
) -> (Vec<u32>, Vec<TokenizedWord>) {
    let mut sequence = vec![SubwordVocab::BOS_ID];
    let mut alignment = Vec::with_capacity(words.len());
    for w in words {
        let w = w.as_ref();
        let piece_ids = tokenize_word(vocab, w);
        let start = sequence.len();
        sequence.extend_from_slice(&piece_ids);
        alignment.push(TokenizedWord {
            word: w.to_string(),
            piece_ids,
            span: start..sequence.len(),
        });
    }
    (sequence, alignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::NamedTempFile;

    fn vocab_of(pieces: &[&str], marker: &str) -> SubwordVocab {
        let mut all = vec![UNK_PIECE, BOS_PIECE];
        all.extend_from_slice(pieces);
        SubwordVocab::from_pieces(&all, marker).unwrap()
    }

    #[test]
    fn family_a_merges_most_frequent_pair_first() {
        // pair (a,##a) occurs twice via "aa"×2, (a,##b) once
        let vocab = train_vocab(&["aa", "aa", "ab"], 8, Family::A).unwrap();
        assert!(vocab.id("a").is_some());
        assert!(vocab.id("b").is_some());
        assert!(vocab.id("aa").is_some());
        assert_eq!(vocab.len(), 8);
    }

    #[test]
    fn every_corpus_character_is_in_the_vocab() {
        let corpus = ["hello", "wörld", "你好"];
        let vocab = train_vocab(&corpus, 64, Family::A).unwrap();
        for w in corpus {
            for c in w.chars() {
                assert!(vocab.id(&c.to_string()).is_some(), "missing {c:?}");
                assert!(vocab.id(&format!("##{c}")).is_some(), "missing ##{c:?}");
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = ["sun", "moon", "soon", "noon", "sun"];
        let a = train_vocab(&corpus, 32, Family::B).unwrap();
        let b = train_vocab(&corpus, 32, Family::B).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn undersized_target_is_an_error() {
        // 4 distinct chars need 2 + 8 slots
        let err = train_vocab(&["ab", "cd"], 8, Family::A).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn word_equal_to_piece_is_a_single_id() {
        let vocab = vocab_of(&["ab", "a", "b"], "##");
        let ids = tokenize_word(&vocab, "ab");
        assert_eq!(ids, vec![vocab.id("ab").unwrap()]);
    }

    #[test]
    fn continuation_is_unk_unless_marked_piece_exists() {
        let bare = vocab_of(&["a", "b"], "##");
        assert_eq!(
            tokenize_word(&bare, "ab"),
            vec![bare.id("a").unwrap(), SubwordVocab::UNK_ID]
        );

        let marked = vocab_of(&["a", "b", "##b"], "##");
        assert_eq!(
            tokenize_word(&marked, "ab"),
            vec![marked.id("a").unwrap(), marked.id("##b").unwrap()]
        );
    }

    #[test]
    fn out_of_inventory_character_maps_to_unk() {
        let vocab = train_vocab(&["abc"], 10, Family::A).unwrap();
        let ids = tokenize_word(&vocab, "aXc");
        assert_eq!(ids[1], SubwordVocab::UNK_ID);
        assert_ne!(ids[0], SubwordVocab::UNK_ID);
        assert_ne!(ids[2], SubwordVocab::UNK_ID);
    }

    #[test]
    fn greedy_match_prefers_longest_piece() {
        let vocab = vocab_of(&["abc", "ab", "a", "##b", "##c", "##bc"], "##");
        assert_eq!(tokenize_word(&vocab, "abc"), vec![vocab.id("abc").unwrap()]);
        let vocab = vocab_of(&["ab", "a", "##b", "##c", "##bc"], "##");
        assert_eq!(
            tokenize_word(&vocab, "abc"),
            vec![vocab.id("ab").unwrap(), vocab.id("##c").unwrap()]
        );
    }

    #[test]
    fn single_piece_word_spans_after_bos() {
        let vocab = vocab_of(&["hi"], "##");
        let (seq, alignment) = tokenize_sequence(&vocab, &["hi"]);
        assert_eq!(seq.len(), 2);
        assert_eq!(seq[0], SubwordVocab::BOS_ID);
        assert_eq!(alignment[0].span, 1..2);
    }

    #[test]
    fn spans_are_adjacent_for_multi_piece_words() {
        let vocab = vocab_of(&["x", "##y", "a", "##b", "##c"], "##");
        let (seq, alignment) = tokenize_sequence(&vocab, &["xy", "abc"]);
        assert_eq!(seq.len(), 6);
        assert_eq!(alignment[0].span, 1..3);
        assert_eq!(alignment[1].span, 3..6);
    }

    #[test]
    fn spans_recover_per_word_piece_lists() {
        let vocab = train_vocab(&["alpha", "beta", "gamma", "beta"], 40, Family::A).unwrap();
        let words = ["alpha", "gamma", "beta", "alphabeta"];
        let (seq, alignment) = tokenize_sequence(&vocab, &words);
        for tw in &alignment {
            assert_eq!(&seq[tw.span.clone()], tw.piece_ids.as_slice());
            assert!(!tw.piece_ids.is_empty());
        }
        // spans tile [1, len) exactly
        let mut cursor = 1;
        for tw in &alignment {
            assert_eq!(tw.span.start, cursor);
            cursor = tw.span.end;
        }
        assert_eq!(cursor, seq.len());
    }

    #[test]
    fn families_differ_on_an_underfilled_vocab() {
        let corpus = [
            "reading", "reader", "read", "ready", "real", "ride", "rode", "road",
        ];
        // leave room for only a few merges so scoring and markers both matter
        let chars: BTreeSet<char> = corpus.iter().flat_map(|w| w.chars()).collect();
        let target = 2 + 2 * chars.len() + 3;
        let a = train_vocab(&corpus, target, Family::A).unwrap();
        let b = train_vocab(&corpus, target, Family::B).unwrap();
        let differs = corpus.iter().any(|w| {
            let pa: Vec<&str> = tokenize_word(&a, w)
                .iter()
                .map(|id| a.piece(*id).unwrap())
                .collect();
            let pb: Vec<&str> = tokenize_word(&b, w)
                .iter()
                .map(|id| b.piece(*id).unwrap())
                .collect();
            pa != pb
        });
        assert!(differs);
    }

    #[test]
    fn save_load_round_trip() {
        let vocab = train_vocab(&["round", "trip", "around"], 40, Family::B).unwrap();
        let file = NamedTempFile::new().unwrap();
        vocab.save(file.path()).unwrap();
        let loaded = SubwordVocab::load(file.path(), Family::B.continuation_marker()).unwrap();
        assert_eq!(vocab, loaded);
    }

    #[test]
    fn load_rejects_missing_reserved_tokens() {
        let file = NamedTempFile::new().unwrap();
        std::fs::write(file.path(), "a\nb\n").unwrap();
        assert!(SubwordVocab::load(file.path(), "##").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn tokenization_is_total_and_spans_tile(
                words in proptest::collection::vec("[\\PC&&\\S]{1,8}", 1..6)
            ) {
                let words: Vec<String> = words
                    .into_iter()
                    .filter(|w| !w.is_empty() && !w.chars().any(char::is_whitespace))
                    .collect();
                prop_assume!(!words.is_empty());
                let vocab = train_vocab(&["seed", "words", "only"], 40, Family::A).unwrap();
                let (seq, alignment) = tokenize_sequence(&vocab, &words);
                prop_assert_eq!(alignment.len(), words.len());
                let mut cursor = 1;
                for tw in &alignment {
                    prop_assert!(!tw.piece_ids.is_empty());
                    prop_assert_eq!(tw.span.start, cursor);
                    prop_assert_eq!(tw.span.len(), tw.piece_ids.len());
                    cursor = tw.span.end;
                }
                prop_assert_eq!(cursor, seq.len());
            }
        }
    }
}
