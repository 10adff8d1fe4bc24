//! Metrics, cross-validation and the report tables behind the analyses:
//! model comparison, importance rankings, categorical marginals and
//! fertility extremes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Feature, FeatureRow};
use crate::forest::ImportanceEntry;
use crate::model::{ModelError, TrainedModel};
use crate::scalar::Scalar;
use crate::seeding;

const FOLD_STREAM: u64 = 0xf01d;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no values to evaluate")]
    Empty,
    #[error("target is constant; R^2 is undefined")]
    ConstantTarget,
    #[error("k = {k} folds needs 2 <= k <= n = {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("cannot mix evaluation and importance reports in one table")]
    MixedReportKinds,
    #[error("two reports for model {model:?}, direction {direction:?}")]
    DuplicateReport { model: String, direction: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(EvalError::LengthMismatch {
            expected: y.len(),
            got: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// `1 - SS_res / SS_tot`.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ConstantTarget);
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    let mse = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub direction: String,
    pub n: usize,
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
}

impl EvalReport {
    pub fn from_predictions(y: &[f64], yhat: &[f64], model: &str, direction: &str) -> Result<Self> {
        Ok(EvalReport {
            model: model.to_owned(),
            direction: direction.to_owned(),
            n: y.len(),
            r2: r2(y, yhat)?,
            rmse: rmse(y, yhat)?,
            mae: mae(y, yhat)?,
        })
    }
}

fn targets(rows: &[FeatureRow]) -> Vec<f64> {
    rows.iter().map(|r| r.target_chrf).collect()
}

fn to_f64<T: Scalar>(v: Vec<T>) -> Vec<f64> {
    v.into_iter().map(Scalar::as_f64).collect()
}

/// Scores `model` on `rows`. The model label is the family's display label.
pub fn evaluate<T: Scalar>(model: &TrainedModel<T>, rows: &[FeatureRow], direction: &str) -> Result<EvalReport> {
    let pred = to_f64(model.predict_rows(rows)?);
    EvalReport::from_predictions(&targets(rows), &pred, model.kind.label(), direction)
}

/// Fold index of every row: a seeded shuffle dealt round-robin, so fold
/// sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > n {
        return Err(EvalError::KTooLarge { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeding::rng(seed, FOLD_STREAM));
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// `None` when the fold's targets are constant (always so for a single row).
    pub r2: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation across folds; 0 for fewer than two values.
    pub sd: f64,
}

impl MeanSd {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(MeanSd { mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    /// Over folds with a defined R^2.
    pub r2: Option<MeanSd>,
    pub rmse: MeanSd,
    pub mae: MeanSd,
    /// Metrics over all out-of-fold predictions together.
    pub pooled: EvalReport,
}

/// K-fold cross-validation. `trainer` fits encoder and model on each
/// fold's training rows only, so target-ordered codes never see the held-out
/// fold. Folds train in parallel; results are ordered by fold index.
pub fn kfold_cv<T, F>(rows: &[FeatureRow], k: usize, seed: u64, direction: &str, trainer: F) -> Result<CvReport>
where
    T: Scalar,
    F: Fn(&[FeatureRow]) -> std::result::Result<TrainedModel<T>, ModelError> + Sync,
{
    let folds = fold_assignment(rows.len(), k, seed)?;
    let per_fold: Vec<Result<(Vec<usize>, Vec<f64>, String)>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (test_idx, train_idx): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|&i| folds[i] == f);
            let train: Vec<FeatureRow> = train_idx.iter().map(|&i| rows[i].clone()).collect();
            let test: Vec<FeatureRow> = test_idx.iter().map(|&i| rows[i].clone()).collect();
            let model = trainer(&train)?;
            let pred = to_f64(model.predict_rows(&test)?);
            Ok((test_idx, pred, model.kind.label().to_owned()))
        })
        .collect();

    let mut out_of_fold = vec![0.0; rows.len()];
    let mut reports = Vec::with_capacity(k);
    let mut label = String::new();
    for (f, result) in per_fold.into_iter().enumerate() {
        let (test_idx, pred, model_label) = result?;
        let y: Vec<f64> = test_idx.iter().map(|&i| rows[i].target_chrf).collect();
        for (&i, &p) in test_idx.iter().zip(&pred) {
            out_of_fold[i] = p;
        }
        reports.push(FoldReport {
            fold: f,
            n_train: rows.len() - test_idx.len(),
            n_test: test_idx.len(),
            r2: match r2(&y, &pred) {
                Ok(v) => Some(v),
                Err(EvalError::ConstantTarget) => None,
                Err(e) => return Err(e),
            },
            rmse: rmse(&y, &pred)?,
            mae: mae(&y, &pred)?,
        });
        label = model_label;
    }
    let r2s: Vec<f64> = reports.iter().filter_map(|r| r.r2).collect();
    let rmses: Vec<f64> = reports.iter().map(|r| r.rmse).collect();
    let maes: Vec<f64> = reports.iter().map(|r| r.mae).collect();
    Ok(CvReport {
        k,
        seed,
        r2: MeanSd::of(&r2s),
        rmse: MeanSd::of(&rmses).expect("k >= 2"),
        mae: MeanSd::of(&maes).expect("k >= 2"),
        pooled: EvalReport::from_predictions(&targets(rows), &out_of_fold, &label, direction)?,
        folds: reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Region,
    Family,
    Script,
}

impl GroupBy {
    pub fn feature(self) -> Feature {
        match self {
            GroupBy::Region => Feature::Region,
            GroupBy::Family => Feature::Family,
            GroupBy::Script => Feature::Script,
        }
    }

    fn level(self, r: &FeatureRow) -> &str {
        match self {
            GroupBy::Region => &r.region,
            GroupBy::Family => &r.family,
            GroupBy::Script => &r.script,
        }
    }
}

impl std::str::FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "region" => Ok(GroupBy::Region),
            "family" => Ok(GroupBy::Family),
            "script" => Ok(GroupBy::Script),
            _ => Err(format!("unknown grouping {s:?}; expected region, family or script")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub level: String,
    pub mean_predicted: f64,
    pub mean_actual: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub group_by: GroupBy,
    pub rows: Vec<MarginalRow>,
}

/// Mean predicted and actual score per level, sorted by mean actual
/// descending (ties by level name). With `trim = Some(k)` only the top `k`
/// and bottom `k` levels are kept.
pub fn marginal_means(
    rows: &[FeatureRow],
    predictions: &[f64],
    group_by: GroupBy,
    trim: Option<usize>,
) -> Result<MarginalReport> {
    if rows.len() != predictions.len() {
        return Err(EvalError::LengthMismatch {
            expected: rows.len(),
            got: predictions.len(),
        });
    }
    let mut acc: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for (r, &p) in rows.iter().zip(predictions) {
        let e = acc.entry(group_by.level(r)).or_default();
        e.0 += p;
        e.1 += r.target_chrf;
        e.2 += 1;
    }
    let mut out: Vec<MarginalRow> = acc
        .into_iter()
        .map(|(level, (p, a, n))| MarginalRow {
            level: level.to_owned(),
            mean_predicted: p / n as f64,
            mean_actual: a / n as f64,
            n,
        })
        .collect();
    out.sort_by(|a, b| b.mean_actual.total_cmp(&a.mean_actual).then_with(|| a.level.cmp(&b.level)));
    if let Some(k) = trim {
        if 2 * k < out.len() {
            out.drain(k..out.len() - k);
        }
    }
    Ok(MarginalReport { group_by, rows: out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageFertility {
    pub lang_code: String,
    pub mean_fertility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FertilityExtremes {
    /// Highest first.
    pub top: Vec<LanguageFertility>,
    /// Lowest first.
    pub bottom: Vec<LanguageFertility>,
}

/// Per-language mean reference fertility; the `k` highest and `k` lowest.
/// Equal means are ordered by language code in both lists.
pub fn fertility_extremes(rows: &[FeatureRow], k: usize) -> FertilityExtremes {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(&r.lang_code).or_default();
        e.0 += r.ref_fertility;
        e.1 += 1;
    }
    let langs: Vec<LanguageFertility> = acc
        .into_iter()
        .map(|(code, (s, n))| LanguageFertility {
            lang_code: code.to_owned(),
            mean_fertility: s / n as f64,
        })
        .collect();
    let mut top = langs.clone();
    top.sort_by(|a, b| b.mean_fertility.total_cmp(&a.mean_fertility).then_with(|| a.lang_code.cmp(&b.lang_code)));
    top.truncate(k);
    let mut bottom = langs;
    bottom.sort_by(|a, b| a.mean_fertility.total_cmp(&b.mean_fertility).then_with(|| a.lang_code.cmp(&b.lang_code)));
    bottom.truncate(k);
    FertilityExtremes { top, bottom }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub model: String,
    pub direction: String,
    pub entries: Vec<ImportanceEntry>,
}

pub fn importance_report<T: Scalar>(model: &TrainedModel<T>, direction: &str) -> Result<ImportanceReport> {
    Ok(ImportanceReport {
        model: model.kind.label().to_owned(),
        direction: direction.to_owned(),
        entries: model.importance()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Eval(EvalReport),
    Importance(ImportanceReport),
}

impl Report {
    fn key(&self) -> (&str, &str) {
        match self {
            Report::Eval(r) => (&r.model, &r.direction),
            Report::Importance(r) => (&r.model, &r.direction),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Number(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Number(v) => format!("{v:.4}"),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Side-by-side table. Evaluation reports give one row per model and R^2,
/// RMSE, MAE columns per direction. Importance reports give one row per rank
/// and a "Feature (weight)" column per model and direction. Models and
/// directions keep their first-seen order.
pub fn comparison_table(reports: &[Report]) -> Result<ComparisonTable> {
    let evals = reports.iter().filter(|r| matches!(r, Report::Eval(_))).count();
    if evals != 0 && evals != reports.len() {
        return Err(EvalError::MixedReportKinds);
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in reports {
        let (model, direction) = r.key();
        if !seen.insert((model, direction)) {
            return Err(EvalError::DuplicateReport {
                model: model.to_owned(),
                direction: direction.to_owned(),
            });
        }
    }
    let models = first_seen(reports.iter().map(|r| r.key().0));
    let directions = first_seen(reports.iter().map(|r| r.key().1));
    if evals > 0 {
        let mut header = vec!["Model".to_owned()];
        for d in &directions {
            for m in ["R2", "RMSE", "MAE"] {
                header.push(format!("{d} {m}"));
            }
        }
        let rows = models
            .iter()
            .map(|&m| {
                let mut row = vec![Cell::Text(m.to_owned())];
                for &d in &directions {
                    let found = reports.iter().find_map(|r| match r {
                        Report::Eval(e) if e.model == m && e.direction == d => Some(e),
                        _ => None,
                    });
                    match found {
                        Some(e) => row.extend([Cell::Number(e.r2), Cell::Number(e.rmse), Cell::Number(e.mae)]),
                        None => row.extend([Cell::Empty, Cell::Empty, Cell::Empty]),
                    }
                }
                row
            })
            .collect();
        return Ok(ComparisonTable { header, rows });
    }
    let columns: Vec<&ImportanceReport> = directions
        .iter()
        .flat_map(|&d| {
            models.iter().filter_map(move |&m| {
                reports.iter().find_map(|r| match r {
                    Report::Importance(i) if i.model == m && i.direction == d => Some(i),
                    _ => None,
                })
            })
        })
        .collect();
    let mut header = vec!["Rank".to_owned()];
    header.extend(columns.iter().map(|c| format!("{} {}", c.model, c.direction)));
    let depth = columns.iter().map(|c| c.entries.len()).max().unwrap_or(0);
    let rows = (0..depth)
        .map(|rank| {
            let mut row = vec![Cell::Text((rank + 1).to_string())];
            row.extend(columns.iter().map(|c| match c.entries.get(rank) {
                Some(e) => Cell::Text(format!("{} ({:.3})", feature_label(&e.feature), e.weight)),
                None => Cell::Empty,
            }));
            row
        })
        .collect();
    Ok(ComparisonTable { header, rows })
}

fn feature_label(name: &str) -> String {
    match Feature::from_name(name) {
        Some(f) => f.label().to_owned(),
        None => name.to_owned(),
    }
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    /// Columns padded to a common width; numbers right-aligned.
    pub fn to_text(&self) -> String {
        let rendered: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::render).collect()).collect();
        let widths: Vec<usize> = (0..self.header.len())
            .map(|j| {
                rendered
                    .iter()
                    .map(|r| r[j].chars().count())
                    .chain(std::iter::once(self.header[j].chars().count()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |cells: Vec<(String, bool)>| {
            cells
                .iter()
                .zip(&widths)
                .map(|((s, right), &w)| if *right { format!("{s:>w$}") } else { format!("{s:<w$}") })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_owned()
        };
        out.push_str(&line(self.header.iter().map(|h| (h.clone(), false)).collect()));
        out.push('\n');
        out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for (row, cells) in rendered.into_iter().zip(&self.rows) {
            out.push_str(&line(
                row.into_iter()
                    .zip(cells)
                    .map(|(s, c)| (s, matches!(c, Cell::Number(_))))
                    .collect(),
            ));
            out.push('\n');
        }
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Standalone horizontal bar chart. Each bar row holds one value per series.
pub fn svg_bar_chart(title: &str, series: &[&str], bars: &[(String, Vec<f64>)]) -> String {
    const COLORS: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];
    let label_w = 160.0;
    let plot_w = 420.0;
    let bar_h = 12.0;
    let group_h = bar_h * series.len().max(1) as f64 + 8.0;
    let top = 40.0;
    let height = top + group_h * bars.len() as f64 + 30.0;
    let max = bars
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" font-family="sans-serif" font-size="11">"#,
        w = label_w + plot_w + 70.0
    );
    let _ = writeln!(s, r#"<text x="8" y="20" font-size="14">{}</text>"#, xml_escape(title));
    for (k, name) in series.iter().enumerate() {
        let x = label_w + 120.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="26" width="10" height="10" fill="{}"/><text x="{tx}" y="35">{}</text>"#,
            COLORS[k % COLORS.len()],
            xml_escape(name),
            tx = x + 14.0
        );
    }
    for (i, (label, values)) in bars.iter().enumerate() {
        let y0 = top + group_h * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" text-anchor="end">{}</text>"#,
            xml_escape(label),
            x = label_w - 6.0,
            y = y0 + group_h / 2.0
        );
        for (k, v) in values.iter().enumerate() {
            let w = (v.max(0.0) / max * plot_w * 1e3).round() / 1e3;
            let y = y0 + bar_h * k as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{label_w}" y="{y}" width="{w}" height="{h}" fill="{}"/><text x="{tx}" y="{ty}">{v:.2}</text>"#,
                COLORS[k % COLORS.len()],
                h = bar_h - 2.0,
                tx = label_w + w + 4.0,
                ty = y + bar_h - 3.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn marginal_svg(report: &MarginalReport) -> String {
    let bars: Vec<(String, Vec<f64>)> = report
        .rows
        .iter()
        .map(|r| (r.level.clone(), vec![r.mean_predicted, r.mean_actual]))
        .collect();
    let title = format!("Mean ChrF by {}", report.group_by.feature().label());
    svg_bar_chart(&title, &["Predicted", "Actual"], &bars)
}

pub fn fertility_svg(ext: &FertilityExtremes) -> String {
    let bars: Vec<(String, Vec<f64>)> = ext
        .top
        .iter()
        .chain(ext.bottom.iter().rev())
        .map(|l| (l.lang_code.clone(), vec![l.mean_fertility]))
        .collect();
    svg_bar_chart("Highest and lowest reference fertility", &["Tokens per word"], &bars)
}
