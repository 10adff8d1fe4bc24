//! Byte-level BPE over tiktoken-format rank files, plus word counts and
//! fertility (tokens per word).
//!
//! Pretokenization is deliberately simpler than the o200k regular
//! expression: text is cut before every whitespace run that follows a
//! non-whitespace character, so each pretoken is an optional whitespace
//! prefix followed by a run of non-whitespace. Token *counts* are what the
//! downstream features need; exact o200k ids are not.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use thiserror::Error;

pub type Rank = u32;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed vocab line {line}: {reason}")]
    MalformedVocabLine { line: usize, reason: String },
    #[error("vocab lacks {missing} of the 256 single-byte entries (first missing: {first:#04x})")]
    MissingSingleBytes { missing: usize, first: u8 },
    #[error("vocab entry with rank {0} is not the merge of two lower-ranked entries")]
    BrokenMergeClosure(Rank),
    #[error("text is empty after trimming")]
    EmptyText,
}

pub type Result<T, E = TokenizerError> = std::result::Result<T, E>;

/// Immutable rank table. Lower rank merges first.
#[derive(Debug, Clone)]
pub struct BpeVocab {
    name: String,
    ranks: HashMap<Vec<u8>, Rank>,
    decoder: HashMap<Rank, Vec<u8>>,
}

impl BpeVocab {
    /// Builds a vocab from `(bytes, rank)` pairs and checks its invariants.
    pub fn from_entries<I>(name: impl Into<String>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u8>, Rank)>,
    {
        let mut ranks = HashMap::new();
        let mut decoder = HashMap::new();
        for (bytes, rank) in entries {
            if bytes.is_empty() {
                return Err(TokenizerError::MalformedVocabLine {
                    line: 0,
                    reason: format!("rank {rank} has an empty byte sequence"),
                });
            }
            if decoder.insert(rank, bytes.clone()).is_some() {
                return Err(TokenizerError::MalformedVocabLine {
                    line: 0,
                    reason: format!("rank {rank} appears twice"),
                });
            }
            if ranks.insert(bytes, rank).is_some() {
                return Err(TokenizerError::MalformedVocabLine {
                    line: 0,
                    reason: format!("byte sequence of rank {rank} appears twice"),
                });
            }
        }
        let vocab = BpeVocab {
            name: name.into(),
            ranks,
            decoder,
        };
        vocab.check_invariants()?;
        Ok(vocab)
    }

    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| TokenizerError::MalformedVocabLine { line: line_no, reason };
            let mut parts = line.split(' ');
            let (Some(token), Some(rank), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected \"<base64> <rank>\"".into()));
            };
            let bytes = STANDARD.decode(token).map_err(|e| bad(e.to_string()))?;
            let rank: Rank = rank.trim_end_matches('\r').parse().map_err(|e| bad(format!("{e}")))?;
            entries.push((bytes, rank));
        }
        Self::from_entries(name, entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("vocab")
            .to_string();
        Self::parse(name, &text)
    }

    /// The 300-entry vocabulary shipped with the crate: all single bytes,
    /// "space + letter" merges for [`crate::corpus::SYNTH_ALPHABET`], and a
    /// handful of common English merges.
    pub fn toy() -> Self {
        Self::parse("toy", include_str!("../data/toy_vocab.tiktoken")).expect("shipped vocab is valid")
    }

    fn check_invariants(&self) -> Result<()> {
        let missing: Vec<u8> = (0..=255u8)
            .filter(|b| !self.ranks.contains_key(&[*b][..]))
            .collect();
        if let Some(&first) = missing.first() {
            return Err(TokenizerError::MissingSingleBytes {
                missing: missing.len(),
                first,
            });
        }
        let mut multi: Vec<(&[u8], Rank)> = self
            .ranks
            .iter()
            .filter(|(b, _)| b.len() > 1)
            .map(|(b, &r)| (b.as_slice(), r))
            .collect();
        multi.sort_by_key(|&(_, r)| r);
        for (bytes, rank) in multi {
            let closed = (1..bytes.len()).any(|cut| {
                let left = self.ranks.get(&bytes[..cut]);
                let right = self.ranks.get(&bytes[cut..]);
                matches!((left, right), (Some(&l), Some(&r)) if l < rank && r < rank)
            });
            if !closed {
                return Err(TokenizerError::BrokenMergeClosure(rank));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn rank_of(&self, bytes: &[u8]) -> Option<Rank> {
        self.ranks.get(bytes).copied()
    }

    pub fn max_rank(&self) -> Rank {
        self.decoder.keys().copied().max().unwrap_or(0)
    }

    /// Returns a copy with one more entry at rank `max_rank() + 1`.
    pub fn with_merge(&self, left: &[u8], right: &[u8]) -> Result<Self> {
        let mut entries: Vec<(Vec<u8>, Rank)> =
            self.ranks.iter().map(|(b, &r)| (b.clone(), r)).collect();
        entries.push(([left, right].concat(), self.max_rank() + 1));
        Self::from_entries(self.name.clone(), entries)
    }

    /// Writes the vocab in tiktoken interchange format, ordered by rank.
    pub fn to_tiktoken(&self) -> String {
        let mut ranked: Vec<(&Rank, &Vec<u8>)> = self.decoder.iter().collect();
        ranked.sort_by_key(|(r, _)| **r);
        let mut out = String::new();
        for (rank, bytes) in ranked {
            out.push_str(&STANDARD.encode(bytes));
            out.push(' ');
            out.push_str(&rank.to_string());
            out.push('\n');
        }
        out
    }

    pub fn encode(&self, text: &str) -> Vec<Rank> {
        let mut out = Vec::new();
        for piece in pretokenize(text) {
            self.encode_piece(piece.as_bytes(), &mut out);
        }
        out
    }

    /// Number of tokens without materializing ids.
    pub fn count_tokens(&self, text: &str) -> usize {
        pretokenize(text)
            .map(|p| self.merge_piece(p.as_bytes()).len())
            .sum()
    }

    fn encode_piece(&self, piece: &[u8], out: &mut Vec<Rank>) {
        for part in self.merge_piece(piece) {
            out.push(self.ranks[&piece[part.0..part.1]]);
        }
    }

    /// Greedy lowest-rank adjacent merge; returns byte ranges of the final parts.
    fn merge_piece(&self, piece: &[u8]) -> Vec<(usize, usize)> {
        let mut parts: Vec<(usize, usize)> = (0..piece.len()).map(|i| (i, i + 1)).collect();
        loop {
            let best = parts
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&piece[w[0].0..w[1].1]).map(|&r| (r, i)))
                .min();
            match best {
                Some((_, i)) => {
                    parts[i].1 = parts[i + 1].1;
                    parts.remove(i + 1);
                }
                None => return parts,
            }
        }
    }

    pub fn decode_bytes(&self, ids: &[Rank]) -> Option<Vec<u8>> {
        let mut out = Vec::new();
        for id in ids {
            out.extend_from_slice(self.decoder.get(id)?);
        }
        Some(out)
    }

    pub fn decode(&self, ids: &[Rank]) -> Option<String> {
        String::from_utf8(self.decode_bytes(ids)?).ok()
    }
}

/// Splits text so that whitespace attaches to the following word.
pub fn pretokenize(text: &str) -> impl Iterator<Item = &str> {
    let mut start = 0;
    let mut prev_ws = true;
    let mut cuts = Vec::new();
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if ws && !prev_ws && i > start {
            cuts.push((start, i));
            start = i;
        }
        prev_ws = ws;
    }
    if start < text.len() {
        cuts.push((start, text.len()));
    }
    cuts.into_iter().map(move |(a, b)| &text[a..b])
}

/// Number of maximal non-whitespace runs.
pub fn count_words(text: &str) -> Result<usize> {
    let n = text.split_whitespace().count();
    if n == 0 {
        Err(TokenizerError::EmptyText)
    } else {
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FertilityStats {
    pub token_count: usize,
    pub word_count: usize,
    pub fertility: f64,
}

pub fn fertility(vocab: &BpeVocab, text: &str) -> Result<FertilityStats> {
    let word_count = count_words(text)?;
    let token_count = vocab.count_tokens(text);
    Ok(FertilityStats {
        token_count,
        word_count,
        fertility: token_count as f64 / word_count as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes_only() -> Vec<(Vec<u8>, Rank)> {
        (0..=255u8).map(|b| (vec![b], b as Rank)).collect()
    }

    #[test]
    fn toy_vocab_loads() {
        let v = BpeVocab::toy();
        assert_eq!(v.len(), 300);
        assert_eq!(v.rank_of(b"the"), Some(298));
        assert_eq!(v.name(), "toy");
    }

    #[test]
    fn missing_single_byte() {
        let entries: Vec<_> = bytes_only().into_iter().filter(|(b, _)| b[0] != 0x41).collect();
        match BpeVocab::from_entries("t", entries) {
            Err(TokenizerError::MissingSingleBytes { missing: 1, first: 0x41 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn broken_merge_closure() {
        // "ab" ranked below its own part "a".
        let mut entries: Vec<_> = bytes_only()
            .into_iter()
            .map(|(b, r)| if b == b"a" { (b, 400) } else { (b, r) })
            .collect();
        entries.push((b"ab".to_vec(), 300));
        assert!(matches!(
            BpeVocab::from_entries("t", entries),
            Err(TokenizerError::BrokenMergeClosure(300))
        ));
        // A three-byte entry without a two-part decomposition.
        let mut entries = bytes_only();
        entries.push((b"xyz".to_vec(), 256));
        assert!(matches!(
            BpeVocab::from_entries("t", entries),
            Err(TokenizerError::BrokenMergeClosure(256))
        ));
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(
            BpeVocab::parse("t", "YQ==\n"),
            Err(TokenizerError::MalformedVocabLine { line: 1, .. })
        ));
        assert!(matches!(
            BpeVocab::parse("t", "!!! 3\n"),
            Err(TokenizerError::MalformedVocabLine { line: 1, .. })
        ));
    }

    #[test]
    fn tiktoken_text_round_trip() {
        let v = BpeVocab::toy();
        let again = BpeVocab::parse("toy", &v.to_tiktoken()).unwrap();
        assert_eq!(again.to_tiktoken(), v.to_tiktoken());
        assert_eq!(v.to_tiktoken(), include_str!("../data/toy_vocab.tiktoken"));
    }

    #[test]
    fn merge_trace() {
        let mut entries = bytes_only();
        entries.push((b"ab".to_vec(), 256));
        let v = BpeVocab::from_entries("t", entries).unwrap();
        assert!(v.encode("").is_empty());
        assert_eq!(v.encode("abab"), vec![256, 256]);
        assert_eq!(v.encode("aab"), vec![b'a' as Rank, 256]);
    }

    #[test]
    fn lowest_rank_merges_first() {
        // "bc" outranks "ab", so "abc" becomes a + bc.
        let mut entries = bytes_only();
        entries.push((b"bc".to_vec(), 256));
        entries.push((b"ab".to_vec(), 257));
        let v = BpeVocab::from_entries("t", entries).unwrap();
        assert_eq!(v.encode("abc"), vec![b'a' as Rank, 256]);
    }

    #[test]
    fn pretokens_carry_leading_whitespace() {
        let p: Vec<_> = pretokenize("hello  world\tx ").collect();
        assert_eq!(p, ["hello", "  world", "\tx", " "]);
        let p: Vec<_> = pretokenize("  lead").collect();
        assert_eq!(p, ["  lead"]);
        assert_eq!(pretokenize("").count(), 0);
    }

    #[test]
    fn word_counts() {
        assert_eq!(count_words("hello world").unwrap(), 2);
        assert_eq!(count_words("  a  ").unwrap(), 1);
        assert_eq!(count_words("ABCDE").unwrap(), 1);
        assert!(matches!(count_words(" \t\n"), Err(TokenizerError::EmptyText)));
    }

    #[test]
    fn fertility_ratio() {
        let v = BpeVocab::toy();
        // "bq" -> b, q ; " x" -> one token: 3 tokens over 2 words.
        let f = fertility(&v, "bq x").unwrap();
        assert_eq!((f.token_count, f.word_count), (3, 2));
        assert_eq!(f.fertility, 1.5);
        let one = fertility(&v, "b").unwrap();
        assert_eq!(one.fertility, 1.0);
        assert!(matches!(fertility(&v, "   "), Err(TokenizerError::EmptyText)));
    }

    #[test]
    fn unicode_round_trip() {
        let v = BpeVocab::toy();
        for s in ["ሰላም ዓለም", "naïve café", "日本語テキスト", "the and then"] {
            assert_eq!(v.decode(&v.encode(s)).unwrap(), s);
        }
        assert_eq!(v.encode("the").len(), 1);
    }
}
