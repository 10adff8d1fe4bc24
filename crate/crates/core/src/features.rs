//! Feature rows and their numeric encodings.
//!
//! Nine predictors per record: five categorical (Joshi class, region,
//! family, script, language code) and four continuous (reference/candidate
//! fertility and token counts). Trees consume a target-ordered ordinal
//! encoding; linear models and the MLP consume one-hot indicators with
//! standardized continuous columns.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Direction, LanguageTable, TranslationRecord};
use crate::scalar::{self, Scalar};
use crate::tokenizer::{self, BpeVocab};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("language {0:?} has no metadata")]
    UnknownLanguage(String),
    #[error("record {0:?} has no chrf target; compute targets first")]
    MissingTarget(String),
    #[error("record {0:?} has a reference with no words")]
    EmptyReference(String),
    #[error("no rows to fit")]
    EmptyInput,
    #[error("matrix has a non-finite entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("encoder format version {0} is not supported")]
    UnsupportedVersion(u32),
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

/// The nine predictors in their canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    JoshiClass,
    Region,
    Family,
    Script,
    LangCode,
    RefFertility,
    CandFertility,
    RefTokens,
    CandTokens,
}

impl Feature {
    pub const ALL: [Feature; 9] = [
        Feature::JoshiClass,
        Feature::Region,
        Feature::Family,
        Feature::Script,
        Feature::LangCode,
        Feature::RefFertility,
        Feature::CandFertility,
        Feature::RefTokens,
        Feature::CandTokens,
    ];
    pub const CATEGORICAL: [Feature; 5] = [
        Feature::JoshiClass,
        Feature::Region,
        Feature::Family,
        Feature::Script,
        Feature::LangCode,
    ];
    pub const CONTINUOUS: [Feature; 4] = [
        Feature::RefFertility,
        Feature::CandFertility,
        Feature::RefTokens,
        Feature::CandTokens,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::JoshiClass => "joshi_class",
            Feature::Region => "region",
            Feature::Family => "family",
            Feature::Script => "script",
            Feature::LangCode => "lang_code",
            Feature::RefFertility => "ref_fertility",
            Feature::CandFertility => "cand_fertility",
            Feature::RefTokens => "ref_tokens",
            Feature::CandTokens => "cand_tokens",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Feature::JoshiClass => "Joshi Class",
            Feature::Region => "Region",
            Feature::Family => "Family",
            Feature::Script => "Script",
            Feature::LangCode => "Language Id Code",
            Feature::RefFertility => "Reference Fertility",
            Feature::CandFertility => "Candidate Fertility",
            Feature::RefTokens => "Reference Tokens",
            Feature::CandTokens => "Candidate Tokens",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn is_categorical(self) -> bool {
        Feature::CATEGORICAL.contains(&self)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scripts written without spaces between words; whitespace word counts
/// are unreliable for them.
pub const UNSEGMENTED_SCRIPTS: &[&str] = &["Hani", "Hans", "Hant", "Jpan", "Khmr", "Laoo", "Mymr", "Thai", "Tibt"];

/// Average characters per whitespace word above which a reference is
/// treated as unsegmented regardless of script.
pub const UNSEGMENTED_CHARS_PER_WORD: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub id: String,
    pub direction: Direction,
    pub lang_code: String,
    pub joshi_class: u8,
    pub region: String,
    pub family: String,
    pub script: String,
    pub ref_fertility: f64,
    pub cand_fertility: f64,
    pub ref_tokens: usize,
    pub cand_tokens: usize,
    /// Word counts for this row are suspect (scriptio continua).
    pub unsegmented: bool,
    pub target_chrf: f64,
}

impl FeatureRow {
    pub fn categorical(&self, f: Feature) -> Option<String> {
        Some(match f {
            Feature::JoshiClass => self.joshi_class.to_string(),
            Feature::Region => self.region.clone(),
            Feature::Family => self.family.clone(),
            Feature::Script => self.script.clone(),
            Feature::LangCode => self.lang_code.clone(),
            _ => return None,
        })
    }

    pub fn continuous(&self, f: Feature) -> Option<f64> {
        Some(match f {
            Feature::RefFertility => self.ref_fertility,
            Feature::CandFertility => self.cand_fertility,
            Feature::RefTokens => self.ref_tokens as f64,
            Feature::CandTokens => self.cand_tokens as f64,
            _ => return None,
        })
    }
}

/// Joins records with language metadata and computes text features.
///
/// An empty candidate gets zero tokens and zero fertility.
pub fn build_rows(records: &[TranslationRecord], meta: &LanguageTable, vocab: &BpeVocab) -> Result<Vec<FeatureRow>> {
    records
        .iter()
        .map(|r| {
            let m = meta
                .get(&r.lang_code)
                .ok_or_else(|| FeatureError::UnknownLanguage(r.lang_code.clone()))?;
            let target = r.chrf.ok_or_else(|| FeatureError::MissingTarget(r.id.clone()))?;
            let reference = tokenizer::fertility(vocab, &r.reference_text)
                .map_err(|_| FeatureError::EmptyReference(r.id.clone()))?;
            let (cand_tokens, cand_fertility) = match tokenizer::fertility(vocab, &r.candidate_text) {
                Ok(s) => (s.token_count, s.fertility),
                Err(_) => {
                    let t = vocab.count_tokens(&r.candidate_text);
                    (t, t as f64)
                }
            };
            let chars = r.reference_text.chars().filter(|c| !c.is_whitespace()).count() as f64;
            let unsegmented = UNSEGMENTED_SCRIPTS.contains(&m.script.as_str())
                || chars / reference.word_count as f64 > UNSEGMENTED_CHARS_PER_WORD;
            Ok(FeatureRow {
                id: r.id.clone(),
                direction: r.direction,
                lang_code: r.lang_code.clone(),
                joshi_class: m.joshi_class,
                region: m.region.clone(),
                family: m.family.clone(),
                script: m.script.clone(),
                ref_fertility: reference.fertility,
                cand_fertility,
                ref_tokens: reference.token_count,
                cand_tokens,
                unsegmented,
                target_chrf: target,
            })
        })
        .collect()
}

/// Writes rows as CSV with a fixed header.
pub fn write_rows_csv<W: Write>(rows: &[FeatureRow], out: W) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(out);
    for r in rows {
        w.serialize(r).map_err(std::io::Error::other)?;
    }
    w.flush()
}

pub fn read_rows_csv<R: std::io::Read>(input: R) -> std::io::Result<Vec<FeatureRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(std::io::Error::other)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingScheme {
    OneHot,
    TargetOrderedOrdinal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryLevels {
    pub feature: Feature,
    /// Levels in code order.
    pub levels: Vec<String>,
}

impl CategoryLevels {
    pub fn code_of(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub feature: Feature,
    pub mean: f64,
    pub sd: f64,
}

pub const ENCODER_FORMAT_VERSION: u32 = 1;

/// Level maps and scalings frozen at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub format_version: u32,
    pub scheme: EncodingScheme,
    pub categories: Vec<CategoryLevels>,
    pub scaling: Vec<ColumnScaling>,
}

const SD_FLOOR: f64 = 1e-12;

/// Sorts levels by mean target ascending; ties fall back to the level
/// order given (natural order for Joshi classes, lexicographic otherwise).
fn target_ordered_levels(rows: &[FeatureRow], f: Feature) -> Vec<String> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = sums.entry(r.categorical(f).expect("categorical")).or_default();
        e.0 += r.target_chrf;
        e.1 += 1;
    }
    let mut levels: Vec<(String, f64)> = sums.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect();
    if f == Feature::JoshiClass {
        levels.sort_by_key(|(l, _)| l.parse::<u32>().unwrap_or(u32::MAX));
    }
    levels.sort_by(|a, b| a.1.total_cmp(&b.1));
    levels.into_iter().map(|(l, _)| l).collect()
}

fn sorted_levels(rows: &[FeatureRow], f: Feature) -> Vec<String> {
    let mut levels: Vec<String> = rows.iter().map(|r| r.categorical(f).expect("categorical")).collect();
    if f == Feature::JoshiClass {
        levels.sort_by_key(|l| l.parse::<u32>().unwrap_or(u32::MAX));
    } else {
        levels.sort();
    }
    levels.dedup();
    levels
}

pub fn fit_encoder(rows: &[FeatureRow], scheme: EncodingScheme) -> Result<Encoder> {
    if rows.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    let categories = Feature::CATEGORICAL
        .iter()
        .map(|&f| CategoryLevels {
            feature: f,
            levels: match scheme {
                EncodingScheme::OneHot => sorted_levels(rows, f),
                EncodingScheme::TargetOrderedOrdinal => target_ordered_levels(rows, f),
            },
        })
        .collect();
    let scaling = Feature::CONTINUOUS
        .iter()
        .map(|&f| match scheme {
            EncodingScheme::OneHot => {
                let values: Vec<f64> = rows.iter().map(|r| r.continuous(f).expect("continuous")).collect();
                ColumnScaling {
                    feature: f,
                    mean: scalar::mean(&values),
                    sd: scalar::population_sd(&values).max(SD_FLOOR),
                }
            }
            EncodingScheme::TargetOrderedOrdinal => ColumnScaling {
                feature: f,
                mean: 0.0,
                sd: 1.0,
            },
        })
        .collect();
    Ok(Encoder {
        format_version: ENCODER_FORMAT_VERSION,
        scheme,
        categories,
        scaling,
    })
}

/// Counts of categorical values not seen at fit time, per feature.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeDiagnostics {
    pub unseen: BTreeMap<Feature, usize>,
}

impl EncodeDiagnostics {
    pub fn total_unseen(&self) -> usize {
        self.unseen.values().sum()
    }
}

/// Columns contributed by one original feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub columns: Vec<usize>,
}

/// Dense row-major design matrix with its target vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EncodedMatrix<T> {
    n_rows: usize,
    n_cols: usize,
    x: Vec<T>,
    y: Vec<T>,
    column_names: Vec<String>,
    groups: Vec<FeatureGroup>,
}

impl<T: Scalar> EncodedMatrix<T> {
    /// Builds a matrix where every column is its own feature group.
    pub fn from_rows(rows: &[Vec<T>], y: Vec<T>, column_names: Vec<String>) -> Result<Self> {
        let n_cols = column_names.len();
        let groups = column_names
            .iter()
            .enumerate()
            .map(|(j, name)| FeatureGroup {
                name: name.clone(),
                columns: vec![j],
            })
            .collect();
        let mut x = Vec::with_capacity(rows.len() * n_cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_cols {
                return Err(FeatureError::Shape(format!(
                    "row {i} has {} values, expected {n_cols}",
                    r.len()
                )));
            }
            x.extend_from_slice(r);
        }
        Self::from_parts(rows.len(), n_cols, x, y, column_names, groups)
    }

    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        x: Vec<T>,
        y: Vec<T>,
        column_names: Vec<String>,
        groups: Vec<FeatureGroup>,
    ) -> Result<Self> {
        if x.len() != n_rows * n_cols {
            return Err(FeatureError::Shape(format!(
                "{} values for a {n_rows}x{n_cols} matrix",
                x.len()
            )));
        }
        if y.len() != n_rows {
            return Err(FeatureError::Shape(format!("{} targets for {n_rows} rows", y.len())));
        }
        if column_names.len() != n_cols {
            return Err(FeatureError::Shape(format!(
                "{} column names for {n_cols} columns",
                column_names.len()
            )));
        }
        let mut covered = vec![0usize; n_cols];
        for g in &groups {
            for &c in &g.columns {
                if c >= n_cols {
                    return Err(FeatureError::Shape(format!("group {} names column {c}", g.name)));
                }
                covered[c] += 1;
            }
        }
        if covered.iter().any(|&c| c != 1) {
            return Err(FeatureError::Shape("feature groups must partition the columns".into()));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite {
                row: k / n_cols.max(1),
                col: k % n_cols.max(1),
            });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite { row: i, col: n_cols });
        }
        Ok(EncodedMatrix {
            n_rows,
            n_cols,
            x,
            y,
            column_names,
            groups,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.x[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.x[i * self.n_cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.x.chunks(self.n_cols.max(1)).take(self.n_rows)
    }

    pub fn x(&self) -> &[T] {
        &self.x
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    /// Replaces the target vector.
    pub fn with_targets(&self, y: Vec<T>) -> Result<Self> {
        Self::from_parts(
            self.n_rows,
            self.n_cols,
            self.x.clone(),
            y,
            self.column_names.clone(),
            self.groups.clone(),
        )
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut x = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        EncodedMatrix {
            n_rows: idx.len(),
            n_cols: self.n_cols,
            x,
            y: idx.iter().map(|&i| self.y[i]).collect(),
            column_names: self.column_names.clone(),
            groups: self.groups.clone(),
        }
    }

    /// Whether every column is either standardized (mean 0, sd 1), a 0/1
    /// indicator, or identically zero on this data.
    pub fn is_standardized(&self) -> bool {
        let tol = T::standardization_tol();
        (0..self.n_cols).all(|j| {
            let col = self.column(j);
            if col.iter().all(|&v| v == T::zero() || v == T::one()) {
                return true;
            }
            let m = scalar::mean(&col);
            let sd = scalar::population_sd(&col);
            m.abs() < tol && (sd - T::one()).abs() < tol
        })
    }
}

impl Encoder {
    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let enc: Encoder = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if enc.format_version != ENCODER_FORMAT_VERSION {
            return Err(FeatureError::UnsupportedVersion(enc.format_version).to_string());
        }
        Ok(enc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("encoder serializes")
    }

    pub fn levels(&self, f: Feature) -> Option<&CategoryLevels> {
        self.categories.iter().find(|c| c.feature == f)
    }

    /// Column names and feature groups in encoded column order.
    pub fn layout(&self) -> (Vec<String>, Vec<FeatureGroup>) {
        let mut names = Vec::new();
        let mut groups = Vec::new();
        for cat in &self.categories {
            let start = names.len();
            match self.scheme {
                EncodingScheme::OneHot => {
                    names.extend(cat.levels.iter().map(|l| format!("{}={l}", cat.feature)));
                }
                EncodingScheme::TargetOrderedOrdinal => names.push(cat.feature.name().to_string()),
            }
            groups.push(FeatureGroup {
                name: cat.feature.name().to_string(),
                columns: (start..names.len()).collect(),
            });
        }
        for s in &self.scaling {
            groups.push(FeatureGroup {
                name: s.feature.name().to_string(),
                columns: vec![names.len()],
            });
            names.push(s.feature.name().to_string());
        }
        (names, groups)
    }

    pub fn width(&self) -> usize {
        self.layout().0.len()
    }

    /// Encodes rows. Unseen categorical levels become an all-zero indicator
    /// block (one-hot) or code -1 (ordinal) and are tallied.
    pub fn encode_matrix<T: Scalar>(&self, rows: &[FeatureRow]) -> (EncodedMatrix<T>, EncodeDiagnostics) {
        let (names, groups) = self.layout();
        let d = names.len();
        let mut x = Vec::with_capacity(rows.len() * d);
        let mut diag = EncodeDiagnostics::default();
        for r in rows {
            for cat in &self.categories {
                let level = r.categorical(cat.feature).expect("categorical");
                let code = cat.code_of(&level);
                if code.is_none() {
                    *diag.unseen.entry(cat.feature).or_insert(0) += 1;
                }
                match self.scheme {
                    EncodingScheme::OneHot => {
                        x.extend((0..cat.levels.len()).map(|k| if Some(k) == code { T::one() } else { T::zero() }));
                    }
                    EncodingScheme::TargetOrderedOrdinal => {
                        x.push(code.map_or(-T::one(), T::from_usize_lossy));
                    }
                }
            }
            for s in &self.scaling {
                let v = r.continuous(s.feature).expect("continuous");
                x.push(T::of((v - s.mean) / s.sd));
            }
        }
        let y = rows.iter().map(|r| T::of(r.target_chrf)).collect();
        let m = EncodedMatrix::from_parts(rows.len(), d, x, y, names, groups)
            .expect("encoder produces a consistent finite matrix");
        (m, diag)
    }

    /// Recovers the level of a categorical feature from one encoded row.
    pub fn decode_level<T: Scalar>(&self, f: Feature, encoded_row: &[T]) -> Option<&str> {
        let (_, groups) = self.layout();
        let cols = &groups.iter().find(|g| g.name == f.name())?.columns;
        let cat = self.levels(f)?;
        let code = match self.scheme {
            EncodingScheme::OneHot => cols.iter().position(|&c| encoded_row[c] == T::one())?,
            EncodingScheme::TargetOrderedOrdinal => {
                let v = encoded_row[cols[0]];
                if v < T::zero() {
                    return None;
                }
                v.to_usize()?
            }
        };
        cat.levels.get(code).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, LanguageMeta, SynthSpec};

    pub(crate) fn row(id: &str, lang: &str, script: &str, joshi: u8, target: f64, fert: f64) -> FeatureRow {
        FeatureRow {
            id: id.into(),
            direction: Direction::EnglishToXx,
            lang_code: lang.into(),
            joshi_class: joshi,
            region: "Europe".into(),
            family: "Indo-European".into(),
            script: script.into(),
            ref_fertility: fert,
            cand_fertility: fert + 0.5,
            ref_tokens: 10,
            cand_tokens: 12,
            unsegmented: false,
            target_chrf: target,
        }
    }

    fn meta_table() -> LanguageTable {
        let mut t = LanguageTable::new();
        t.insert(
            "fra".into(),
            LanguageMeta {
                code: "fra".into(),
                script: "Latn".into(),
                family: "Indo-European".into(),
                region: "Europe".into(),
                joshi_class: 5,
            },
        );
        t
    }

    fn record(lang: &str, reference: &str, chrf: Option<f64>) -> TranslationRecord {
        TranslationRecord {
            id: "r1".into(),
            direction: Direction::EnglishToXx,
            lang_code: lang.into(),
            source_text: "s".into(),
            reference_text: reference.into(),
            candidate_text: "the cat".into(),
            chrf,
        }
    }

    #[test]
    fn rows_carry_metadata() {
        let rows = build_rows(&[record("fra", "the and", Some(50.0))], &meta_table(), &BpeVocab::toy()).unwrap();
        let r = &rows[0];
        assert_eq!((r.script.as_str(), r.region.as_str(), r.joshi_class), ("Latn", "Europe", 5));
        // "the" is one token; " and" is " " + "and".
        assert_eq!((r.ref_tokens, r.ref_fertility), (3, 1.5));
        assert!(!r.unsegmented);
    }

    #[test]
    fn join_failures() {
        let vocab = BpeVocab::toy();
        assert_eq!(
            build_rows(&[record("xxx", "a", Some(1.0))], &meta_table(), &vocab),
            Err(FeatureError::UnknownLanguage("xxx".into()))
        );
        assert_eq!(
            build_rows(&[record("fra", "a", None)], &meta_table(), &vocab),
            Err(FeatureError::MissingTarget("r1".into()))
        );
    }

    #[test]
    fn token_count_transport() {
        // 54 single-letter synthetic words -> 54 tokens.
        let text = vec!["q"; 54].join(" ");
        let rows = build_rows(&[record("fra", &text, Some(1.0))], &meta_table(), &BpeVocab::toy()).unwrap();
        assert_eq!(rows[0].ref_tokens, 54);
    }

    #[test]
    fn empty_candidate_has_zero_tokens() {
        let mut r = record("fra", "the", Some(0.0));
        r.candidate_text.clear();
        let rows = build_rows(&[r], &meta_table(), &BpeVocab::toy()).unwrap();
        assert_eq!((rows[0].cand_tokens, rows[0].cand_fertility), (0, 0.0));
    }

    #[test]
    fn unsegmented_flag() {
        let mut t = meta_table();
        t.get_mut("fra").unwrap().script = "Thai".into();
        let rows = build_rows(&[record("fra", "the", Some(1.0))], &t, &BpeVocab::toy()).unwrap();
        assert!(rows[0].unsegmented);
        let long = "q".repeat(64);
        let rows = build_rows(&[record("fra", &long, Some(1.0))], &meta_table(), &BpeVocab::toy()).unwrap();
        assert!(rows[0].unsegmented);
    }

    #[test]
    fn ordinal_codes_follow_mean_target() {
        let rows = vec![
            row("1", "A", "Latn", 1, 10.0, 1.0),
            row("2", "B", "Latn", 1, 50.0, 1.0),
            row("3", "C", "Latn", 1, 30.0, 1.0),
        ];
        let enc = fit_encoder(&rows, EncodingScheme::TargetOrderedOrdinal).unwrap();
        assert_eq!(enc.levels(Feature::LangCode).unwrap().levels, ["A", "C", "B"]);
        let (m, _) = enc.encode_matrix::<f64>(&rows);
        assert_eq!(m.column_names()[4], "lang_code");
        assert_eq!(m.column(4), vec![0.0, 2.0, 1.0]);
        // Continuous columns pass through unscaled.
        assert_eq!(m.column(5), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn ordinal_ties_use_natural_joshi_order() {
        let rows = vec![
            row("1", "A", "Latn", 3, 10.0, 1.0),
            row("2", "B", "Latn", 1, 10.0, 1.0),
            row("3", "C", "Latn", 2, 10.0, 1.0),
        ];
        let enc = fit_encoder(&rows, EncodingScheme::TargetOrderedOrdinal).unwrap();
        assert_eq!(enc.levels(Feature::JoshiClass).unwrap().levels, ["1", "2", "3"]);
        assert_eq!(enc.levels(Feature::LangCode).unwrap().levels, ["A", "B", "C"]);
    }

    #[test]
    fn one_hot_layout() {
        let rows = vec![
            row("1", "A", "Latn", 1, 10.0, 1.0),
            row("2", "B", "Cyrl", 2, 50.0, 3.0),
        ];
        let enc = fit_encoder(&rows, EncodingScheme::OneHot).unwrap();
        let (m, diag) = enc.encode_matrix::<f64>(&rows);
        let script = m.groups().iter().find(|g| g.name == "script").unwrap();
        assert_eq!(script.columns.len(), 2);
        assert_eq!(m.column_names()[script.columns[0]], "script=Cyrl");
        assert_eq!(diag.total_unseen(), 0);
        assert!(m.is_standardized());
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(enc.decode_level(Feature::Script, m.row(i)), Some(r.script.as_str()));
        }
    }

    #[test]
    fn constant_continuous_column_becomes_zero() {
        let rows = vec![
            row("1", "A", "Latn", 1, 10.0, 2.0),
            row("2", "B", "Latn", 1, 20.0, 2.0),
        ];
        let enc = fit_encoder(&rows, EncodingScheme::OneHot).unwrap();
        let (m, _) = enc.encode_matrix::<f64>(&rows);
        let j = m.column_names().iter().position(|n| n == "ref_fertility").unwrap();
        assert_eq!(m.column(j), vec![0.0, 0.0]);
    }

    #[test]
    fn unseen_levels() {
        let fit = vec![
            row("1", "A", "Latn", 1, 10.0, 1.0),
            row("2", "B", "Cyrl", 2, 50.0, 3.0),
        ];
        let new = vec![row("3", "Z", "Grek", 1, 40.0, 2.0)];
        let onehot = fit_encoder(&fit, EncodingScheme::OneHot).unwrap();
        let (m, diag) = onehot.encode_matrix::<f64>(&new);
        let script = &m.groups().iter().find(|g| g.name == "script").unwrap().columns;
        assert!(script.iter().all(|&c| m.get(0, c) == 0.0));
        assert_eq!(diag.unseen[&Feature::Script], 1);
        assert_eq!(diag.unseen[&Feature::LangCode], 1);
        assert_eq!(onehot.decode_level(Feature::Script, m.row(0)), None);

        let ord = fit_encoder(&fit, EncodingScheme::TargetOrderedOrdinal).unwrap();
        let (m, _) = ord.encode_matrix::<f64>(&new);
        assert_eq!(m.get(0, 3), -1.0);
    }

    #[test]
    fn encoder_json_round_trip() {
        let (recs, meta) = generate_synthetic(&SynthSpec {
            n_languages: 4,
            rows_per_language: 5,
            noise_sd: 1.0,
            seed: 1,
        })
        .unwrap();
        let rows = build_rows(&recs, &meta, &BpeVocab::toy()).unwrap();
        for scheme in [EncodingScheme::OneHot, EncodingScheme::TargetOrderedOrdinal] {
            let enc = fit_encoder(&rows, scheme).unwrap();
            assert_eq!(Encoder::from_json(&enc.to_json()).unwrap(), enc);
            let (a, _) = enc.encode_matrix::<f64>(&rows);
            let (b, _) = enc.encode_matrix::<f64>(&rows);
            assert_eq!(a, b);
        }
        let mut bad = fit_encoder(&rows, EncodingScheme::OneHot).unwrap();
        bad.format_version = 99;
        assert!(Encoder::from_json(&bad.to_json()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row("1", "A", "Latn", 1, 10.0, 1.25)];
        let mut buf = Vec::new();
        write_rows_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "id,direction,lang_code,joshi_class,region,family,script,ref_fertility,cand_fertility,ref_tokens,cand_tokens,unsegmented,target_chrf\n"
        ));
        assert_eq!(read_rows_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn matrix_shape_checks() {
        let bad = EncodedMatrix::<f64>::from_rows(&[vec![1.0, 2.0], vec![1.0]], vec![0.0, 0.0], vec!["a".into(), "b".into()]);
        assert!(matches!(bad, Err(FeatureError::Shape(_))));
        let nan = EncodedMatrix::<f64>::from_rows(&[vec![f64::NAN]], vec![0.0], vec!["a".into()]);
        assert!(matches!(nan, Err(FeatureError::NonFinite { row: 0, col: 0 })));
    }
}
