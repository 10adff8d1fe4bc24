//! Translation records, language metadata, train/test splitting and the
//! synthetic dataset generator.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("file contains no records")]
    EmptyFile,
    #[error("language {code:?} has joshi_class {value}, expected 1..=6")]
    JoshiOutOfRange { code: String, value: i64 },
    #[error("split leaves an empty side ({n_train} train / {n_test} test)")]
    DegenerateSplit { n_train: usize, n_test: usize },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "xx-en")]
    XxToEnglish,
    #[serde(rename = "en-xx")]
    EnglishToXx,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::XxToEnglish, Direction::EnglishToXx];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::XxToEnglish => "xx-en",
            Direction::EnglishToXx => "en-xx",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "xx-en" => Ok(Direction::XxToEnglish),
            "en-xx" => Ok(Direction::EnglishToXx),
            other => Err(format!("unknown direction {other:?}, expected \"xx-en\" or \"en-xx\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationRecord {
    pub id: String,
    pub direction: Direction,
    pub lang_code: String,
    pub source_text: String,
    pub reference_text: String,
    pub candidate_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chrf: Option<f64>,
}

impl TranslationRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.reference_text.is_empty() {
            return Err(format!("record {:?} has an empty reference_text", self.id));
        }
        if let Some(c) = self.chrf {
            if !(0.0..=100.0).contains(&c) {
                return Err(format!("record {:?} has chrf {c} outside [0, 100]", self.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageMeta {
    pub code: String,
    pub script: String,
    pub family: String,
    pub region: String,
    pub joshi_class: u8,
}

/// Language metadata keyed by code.
pub type LanguageTable = BTreeMap<String, LanguageMeta>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Jsonl,
    Tsv,
}

impl RecordFormat {
    /// Guesses the format from a file extension; anything but `.tsv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => RecordFormat::Tsv,
            _ => RecordFormat::Jsonl,
        }
    }
}

const RECORD_COLUMNS: [&str; 7] = [
    "id",
    "direction",
    "lang_code",
    "source_text",
    "reference_text",
    "candidate_text",
    "chrf",
];

const LANGUAGE_HEADER: &str = "code\tscript\tfamily\tregion\tjoshi_class";

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_records(path: &Path, format: RecordFormat) -> Result<Vec<TranslationRecord>> {
    let text = read_file(path)?;
    parse_records(&text, format)
}

pub fn parse_records(text: &str, format: RecordFormat) -> Result<Vec<TranslationRecord>> {
    let records = match format {
        RecordFormat::Jsonl => parse_jsonl(text)?,
        RecordFormat::Tsv => parse_tsv(text)?,
    };
    if records.is_empty() {
        return Err(CorpusError::EmptyFile);
    }
    let mut seen = HashSet::with_capacity(records.len());
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(CorpusError::DuplicateId(r.id.clone()));
        }
    }
    Ok(records)
}

fn parse_jsonl(text: &str) -> Result<Vec<TranslationRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let record: TranslationRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        record
            .validate()
            .map_err(|reason| CorpusError::MalformedRecord { line: line_no, reason })?;
        out.push(record);
    }
    Ok(out)
}

fn parse_tsv(text: &str) -> Result<Vec<TranslationRecord>> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h,
        None => return Err(CorpusError::EmptyFile),
    };
    let expected = RECORD_COLUMNS.join("\t");
    if header.trim_end_matches('\r') != expected {
        return Err(CorpusError::MalformedRecord {
            line: 1,
            reason: format!("header must be {expected:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let line_no = i + 1;
        let bad = |reason: String| CorpusError::MalformedRecord { line: line_no, reason };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != RECORD_COLUMNS.len() {
            return Err(bad(format!(
                "expected {} tab-separated fields, found {}",
                RECORD_COLUMNS.len(),
                fields.len()
            )));
        }
        let direction = fields[1].parse::<Direction>().map_err(bad)?;
        let chrf = match fields[6].trim() {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|e| bad(format!("chrf {s:?}: {e}")))?),
        };
        let record = TranslationRecord {
            id: unescape_tsv(fields[0]).map_err(bad)?,
            direction,
            lang_code: unescape_tsv(fields[2]).map_err(bad)?,
            source_text: unescape_tsv(fields[3]).map_err(bad)?,
            reference_text: unescape_tsv(fields[4]).map_err(bad)?,
            candidate_text: unescape_tsv(fields[5]).map_err(bad)?,
            chrf,
        };
        record.validate().map_err(bad)?;
        out.push(record);
    }
    Ok(out)
}

fn escape_tsv(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_tsv(s: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => return Err(format!("unknown escape \\{other}")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

pub fn format_records(records: &[TranslationRecord], format: RecordFormat) -> String {
    let mut out = String::new();
    match format {
        RecordFormat::Jsonl => {
            for r in records {
                out.push_str(&serde_json::to_string(r).expect("records serialize"));
                out.push('\n');
            }
        }
        RecordFormat::Tsv => {
            out.push_str(&RECORD_COLUMNS.join("\t"));
            out.push('\n');
            for r in records {
                let chrf = r.chrf.map(|c| c.to_string()).unwrap_or_default();
                let fields = [
                    escape_tsv(&r.id),
                    r.direction.to_string(),
                    escape_tsv(&r.lang_code),
                    escape_tsv(&r.source_text),
                    escape_tsv(&r.reference_text),
                    escape_tsv(&r.candidate_text),
                    chrf,
                ];
                out.push_str(&fields.join("\t"));
                out.push('\n');
            }
        }
    }
    out
}

pub fn save_records(path: &Path, records: &[TranslationRecord], format: RecordFormat) -> Result<()> {
    write_file(path, &format_records(records, format))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(contents.as_bytes()))
        .map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn load_language_meta(path: &Path) -> Result<LanguageTable> {
    parse_language_meta(&read_file(path)?)
}

pub fn parse_language_meta(text: &str) -> Result<LanguageTable> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == LANGUAGE_HEADER => {}
        Some(_) => {
            return Err(CorpusError::MalformedRecord {
                line: 1,
                reason: format!("header must be {LANGUAGE_HEADER:?}"),
            })
        }
        None => return Err(CorpusError::EmptyFile),
    }
    let mut table = LanguageTable::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 || fields[..4].iter().any(|f| f.trim().is_empty()) {
            return Err(CorpusError::MalformedRecord {
                line: line_no,
                reason: "expected five nonempty tab-separated fields".into(),
            });
        }
        let code = fields[0].to_string();
        let joshi: i64 = fields[4].trim().parse().map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            reason: format!("joshi_class {:?}: {e}", fields[4]),
        })?;
        if !(1..=6).contains(&joshi) {
            return Err(CorpusError::JoshiOutOfRange { code, value: joshi });
        }
        if table.contains_key(&code) {
            return Err(CorpusError::DuplicateId(code));
        }
        table.insert(
            code.clone(),
            LanguageMeta {
                code,
                script: fields[1].to_string(),
                family: fields[2].to_string(),
                region: fields[3].to_string(),
                joshi_class: joshi as u8,
            },
        );
    }
    if table.is_empty() {
        return Err(CorpusError::EmptyFile);
    }
    Ok(table)
}

pub fn format_language_meta(table: &LanguageTable) -> String {
    let mut out = String::from(LANGUAGE_HEADER);
    out.push('\n');
    for m in table.values() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            m.code, m.script, m.family, m.region, m.joshi_class
        ));
    }
    out
}

pub fn save_language_meta(path: &Path, table: &LanguageTable) -> Result<()> {
    write_file(path, &format_language_meta(table))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratify {
    None,
    #[default]
    LangCode,
    JoshiClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    pub stratify_by: Stratify,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.2,
            seed: 0,
            stratify_by: Stratify::LangCode,
        }
    }
}

/// Seeded train/test partition. Both outputs keep the input order.
///
/// Stratified splits put `floor` or `ceil` of `test_fraction * n_stratum`
/// records of every stratum into the test side. `meta` is only consulted
/// when stratifying by Joshi class.
pub fn split(
    records: &[TranslationRecord],
    spec: &SplitSpec,
    meta: Option<&LanguageTable>,
) -> Result<(Vec<TranslationRecord>, Vec<TranslationRecord>)> {
    let keys: Vec<String> = match spec.stratify_by {
        Stratify::None => vec![String::new(); records.len()],
        Stratify::LangCode => records.iter().map(|r| r.lang_code.clone()).collect(),
        Stratify::JoshiClass => {
            let meta = meta.ok_or_else(|| {
                CorpusError::InvalidSpec("stratifying by joshi class needs language metadata".into())
            })?;
            records
                .iter()
                .map(|r| {
                    meta.get(&r.lang_code)
                        .map(|m| m.joshi_class.to_string())
                        .ok_or_else(|| {
                            CorpusError::InvalidSpec(format!("no metadata for {:?}", r.lang_code))
                        })
                })
                .collect::<Result<_>>()?
        }
    };
    let is_test = split_mask(&keys, spec.test_fraction, spec.seed)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (r, t) in records.iter().zip(is_test) {
        if t {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((train, test))
}

/// Test-membership mask for items grouped by stratum key.
pub fn split_mask(keys: &[String], test_fraction: f64, seed: u64) -> Result<Vec<bool>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::InvalidSpec(format!(
            "test_fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    let n = keys.len();
    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        strata.entry(k.as_str()).or_default().push(i);
    }
    let mut rng = seeding::rng(seed, 0x5917);
    let mut groups: Vec<(Vec<usize>, usize, f64)> = Vec::with_capacity(strata.len());
    for (_, mut idx) in strata {
        idx.shuffle(&mut rng);
        let target = test_fraction * idx.len() as f64;
        let take = target.round() as usize;
        groups.push((idx, take, target));
    }
    // Repair an empty side by moving one record in the first stratum where the
    // alternative rounding is still within one record of the target share.
    let total_test: usize = groups.iter().map(|g| g.1).sum();
    if total_test == 0 {
        let pick = groups
            .iter()
            .position(|g| g.0.len() >= 2)
            .or_else(|| if groups.len() >= 2 { Some(0) } else { None });
        if let Some(p) = pick {
            groups[p].1 += 1;
        }
    } else if total_test == n {
        let pick = groups
            .iter()
            .position(|g| g.0.len() >= 2 && (g.1 as f64 - 1.0 - g.2).abs() <= 1.0)
            .or_else(|| if groups.len() >= 2 { Some(0) } else { None });
        if let Some(p) = pick {
            groups[p].1 -= 1;
        }
    }
    let mut mask = vec![false; n];
    for (idx, take, _) in &groups {
        for &i in &idx[..*take] {
            mask[i] = true;
        }
    }
    let n_test = mask.iter().filter(|&&t| t).count();
    if n_test == 0 || n_test == n {
        return Err(CorpusError::DegenerateSplit {
            n_train: n - n_test,
            n_test,
        });
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_languages: usize,
    pub rows_per_language: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.n_languages < 2 {
            return Err(CorpusError::InvalidSpec("n_languages must be at least 2".into()));
        }
        if self.rows_per_language < 1 {
            return Err(CorpusError::InvalidSpec("rows_per_language must be at least 1".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(CorpusError::InvalidSpec("noise_sd must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct NamedEffect {
    pub name: String,
    pub effect: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ScriptProfile {
    pub name: String,
    pub base_fertility: f64,
    /// Inclusive range of words per reference sentence.
    #[serde(default = "default_word_range")]
    pub words: (usize, usize),
}

fn default_word_range() -> (usize, usize) {
    (8, 40)
}

/// Fixed effect tables behind the synthetic generator (`data/synth_effects.json`).
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct SynthEffects {
    pub format_version: u32,
    pub base: f64,
    pub fertility_gap_weight: f64,
    pub fertility_gap_half_width: f64,
    pub fertility_jitter: f64,
    /// Indexed by `joshi_class - 1`.
    pub joshi: Vec<f64>,
    pub regions: Vec<NamedEffect>,
    pub families: Vec<NamedEffect>,
    pub scripts: Vec<ScriptProfile>,
    /// `interaction[joshi_class - 1][region index]`.
    pub interaction: Vec<Vec<f64>>,
}

impl SynthEffects {
    pub fn shipped() -> &'static SynthEffects {
        static TABLES: OnceLock<SynthEffects> = OnceLock::new();
        TABLES.get_or_init(|| {
            serde_json::from_str(include_str!("../data/synth_effects.json"))
                .expect("shipped effect tables parse")
        })
    }

    fn lookup(effects: &[NamedEffect], name: &str) -> Option<(usize, f64)> {
        effects
            .iter()
            .position(|e| e.name == name)
            .map(|i| (i, effects[i].effect))
    }

    /// The planted target before clamping and noise, or `None` when a
    /// category is not in the tables.
    pub fn planted_mean(&self, meta: &LanguageMeta, ref_fertility: f64, cand_fertility: f64) -> Option<f64> {
        let (region_idx, region) = Self::lookup(&self.regions, &meta.region)?;
        let (_, family) = Self::lookup(&self.families, &meta.family)?;
        let j = usize::from(meta.joshi_class).checked_sub(1)?;
        let joshi = *self.joshi.get(j)?;
        let interaction = *self.interaction.get(j)?.get(region_idx)?;
        Some(
            self.base + region + family + joshi + interaction
                - self.fertility_gap_weight * (ref_fertility - cand_fertility).abs(),
        )
    }
}

/// Letters that the shipped toy vocabulary never merges with each other; each
/// also has a merged "space + letter" entry, so a synthetic text costs exactly
/// one token per letter under that vocabulary.
pub const SYNTH_ALPHABET: &[u8] = b"bcfgjkmpqvwxyz";

fn synth_text<R: Rng>(rng: &mut R, words: usize, tokens: usize) -> String {
    debug_assert!(tokens >= words && words >= 1);
    let mut lengths = vec![1usize; words];
    for _ in 0..(tokens - words) {
        lengths[rng.random_range(0..words)] += 1;
    }
    let mut out = String::with_capacity(tokens + words);
    for (i, len) in lengths.into_iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        for _ in 0..len {
            out.push(SYNTH_ALPHABET[rng.random_range(0..SYNTH_ALPHABET.len())] as char);
        }
    }
    out
}

/// Draws `(words, tokens)` so that `tokens / words` is close to `fertility`
/// and never below 1.
fn realize_fertility<R: Rng>(rng: &mut R, fertility: f64, word_range: (usize, usize)) -> (usize, usize) {
    let words = rng.random_range(word_range.0..=word_range.1);
    let tokens = ((fertility * words as f64).round() as usize).max(words);
    (words, tokens)
}

fn synth_code(i: usize) -> String {
    let a = (b'a' + (i / 26 % 26) as u8) as char;
    let b = (b'a' + (i % 26) as u8) as char;
    if i < 26 * 26 {
        format!("s{a}{b}")
    } else {
        format!("s{a}{b}{}", i / (26 * 26))
    }
}

/// Generates a dataset with planted structure:
///
/// `chrf = clamp(base + region + family + joshi + interaction(joshi, region)
///               - w * |ref_fertility - cand_fertility| + N(0, noise_sd), 0, 100)`
///
/// with the effect tables of [`SynthEffects::shipped`]. Fertilities are the
/// realized token/word ratios of the emitted texts under the shipped toy
/// vocabulary. Directions alternate by row.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Vec<TranslationRecord>, LanguageTable)> {
    spec.validate()?;
    let fx = SynthEffects::shipped();
    let mut meta_rng = seeding::rng(spec.seed, 1);
    let mut text_rng = seeding::rng(spec.seed, 2);
    let mut noise_rng = seeding::rng(spec.seed, 3);
    let noise = Normal::new(0.0, spec.noise_sd.max(f64::MIN_POSITIVE))
        .map_err(|e| CorpusError::InvalidSpec(e.to_string()))?;

    let mut table = LanguageTable::new();
    let mut langs = Vec::with_capacity(spec.n_languages);
    for i in 0..spec.n_languages {
        let code = synth_code(i);
        // Cycle Joshi classes so every class appears once six languages exist.
        let joshi_class = (i % 6) as u8 + 1;
        let region = &fx.regions[meta_rng.random_range(0..fx.regions.len())];
        let family = &fx.families[meta_rng.random_range(0..fx.families.len())];
        let script = &fx.scripts[meta_rng.random_range(0..fx.scripts.len())];
        let base_fertility = script.base_fertility + meta_rng.random_range(-0.3..=0.3);
        let meta = LanguageMeta {
            code: code.clone(),
            script: script.name.clone(),
            family: family.name.clone(),
            region: region.name.clone(),
            joshi_class,
        };
        table.insert(code, meta.clone());
        langs.push((meta, base_fertility, script.words));
    }

    let mut records = Vec::with_capacity(spec.n_languages * spec.rows_per_language);
    for (li, (meta, base_fertility, words)) in langs.iter().enumerate() {
        for r in 0..spec.rows_per_language {
            let ref_target = base_fertility + text_rng.random_range(-fx.fertility_jitter..=fx.fertility_jitter);
            let (ref_words, ref_tokens) = realize_fertility(&mut text_rng, ref_target, *words);
            let gap = text_rng.random_range(-fx.fertility_gap_half_width..=fx.fertility_gap_half_width);
            let cand_target = (ref_tokens as f64 / ref_words as f64 + gap).max(1.0);
            let slack = (ref_words / 8).max(1);
            let cand_lo = ref_words.saturating_sub(slack).max(1);
            let (cand_words, cand_tokens) = realize_fertility(&mut text_rng, cand_target, (cand_lo, ref_words + slack));
            let (src_words, src_tokens) = realize_fertility(&mut text_rng, 1.3, (8, 40));

            let reference_text = synth_text(&mut text_rng, ref_words, ref_tokens);
            let candidate_text = synth_text(&mut text_rng, cand_words, cand_tokens);
            let source_text = synth_text(&mut text_rng, src_words, src_tokens);

            let ref_fertility = ref_tokens as f64 / ref_words as f64;
            let cand_fertility = cand_tokens as f64 / cand_words as f64;
            let mean = fx
                .planted_mean(meta, ref_fertility, cand_fertility)
                .expect("generated categories come from the tables");
            let eps = if spec.noise_sd > 0.0 {
                noise.sample(&mut noise_rng)
            } else {
                0.0
            };
            let idx = li * spec.rows_per_language + r;
            records.push(TranslationRecord {
                id: format!("{}-{:05}", meta.code, r),
                direction: if idx % 2 == 0 {
                    Direction::EnglishToXx
                } else {
                    Direction::XxToEnglish
                },
                lang_code: meta.code.clone(),
                source_text,
                reference_text,
                candidate_text,
                chrf: Some((mean + eps).clamp(0.0, 100.0)),
            });
        }
    }
    Ok((records, table))
}
