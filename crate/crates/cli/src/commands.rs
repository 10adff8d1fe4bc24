use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use qe_core::chrf;
use qe_core::corpus::{self, Direction, RecordFormat, SynthSpec};
use qe_core::eval::{self, EvalReport, Report};
use qe_core::features::{self, Feature, FeatureRow};
use qe_core::model::{self, ModelKind};
use qe_core::tokenizer::BpeVocab;
use qe_core::TrainedModel;

use crate::args::*;
use crate::error::{CliError, Result};
use crate::manifest::Run;

const POOLED: &str = "all";

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(internal)?;
    s.push('\n');
    Ok(s)
}

fn direction_label(d: Option<Direction>) -> &'static str {
    d.map_or(POOLED, Direction::as_str)
}

/// `model-gbt` or `model-gbt-en-xx`.
fn model_stem(kind: ModelKind, d: Option<Direction>) -> String {
    match d {
        None => format!("model-{kind}"),
        Some(d) => format!("model-{kind}-{d}"),
    }
}

fn scope_rank(d: Option<Direction>) -> u8 {
    match d {
        None => 0,
        Some(Direction::EnglishToXx) => 1,
        Some(Direction::XxToEnglish) => 2,
    }
}

fn in_scope(rows: &[FeatureRow], d: Option<Direction>) -> Vec<FeatureRow> {
    rows.iter().filter(|r| d.is_none_or(|d| r.direction == d)).cloned().collect()
}

pub fn chrf(a: &ChrfArgs, run: &mut Run) -> Result<Option<u64>> {
    let params = a.chrf.params();
    let refs = run.read_input_text("reference", &a.reference)?;
    let cands = run.read_input_text("candidate", &a.candidate)?;
    let refs: Vec<&str> = refs.lines().collect();
    let cands: Vec<&str> = cands.lines().collect();
    if refs.len() != cands.len() {
        return Err(CliError::Invalid(format!(
            "reference has {} lines but candidate has {}",
            refs.len(),
            cands.len()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["line", "chrf"]).map_err(internal)?;
    let mut scores = Vec::with_capacity(refs.len());
    for (i, (r, c)) in refs.iter().zip(&cands).enumerate() {
        let score = chrf::chrf_score(r, c, &params)
            .map_err(|e| CliError::Invalid(format!("line {}: {e}", i + 1)))?;
        w.write_record([(i + 1).to_string(), score.to_string()]).map_err(internal)?;
        scores.push(score);
    }
    run.write("chrf.csv", w.into_inner().map_err(internal)?)?;
    let mean = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 };
    let summary = json_line(&serde_json::json!({ "n": scores.len(), "mean": mean, "scores": scores }))?;
    run.write("chrf.json", &summary)?;
    print!("{summary}");
    Ok(None)
}

fn resolve(explicit: &Option<PathBuf>, data: &Option<PathBuf>, names: &[&str]) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return Some(p.clone());
    }
    let dir = data.as_ref()?;
    names.iter().map(|n| dir.join(n)).find(|p| p.exists())
}

/// Feature rows from a features CSV, or from records, metadata and vocabulary.
/// Records without a score get one computed with the given ChrF settings.
fn load_rows(input: &InputArgs, run: &mut Run) -> Result<Vec<FeatureRow>> {
    if let Some(path) = &input.features {
        let bytes = run.read_input("features", path)?;
        return features::read_rows_csv(bytes.as_slice())
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())));
    }
    let records_path = resolve(&input.records, &input.data, &["records.jsonl", "records.tsv"]);
    let languages_path = resolve(&input.languages, &input.data, &["languages.tsv"]);
    let (Some(records_path), Some(languages_path)) = (records_path, languages_path) else {
        return Err(CliError::Invalid(
            "no input: pass --features, --data DIR, or both --records and --languages".into(),
        ));
    };
    let text = run.read_input_text("records", &records_path)?;
    let records = corpus::parse_records(&text, RecordFormat::from_path(&records_path))?;
    let records = chrf::ensure_targets(&records, &input.chrf.params())?;
    let meta = corpus::parse_language_meta(&run.read_input_text("languages", &languages_path)?)?;
    let vocab = match resolve(&input.vocab, &input.data, &["vocab.tiktoken"]) {
        Some(p) => {
            let name = p.file_stem().map_or("vocab".into(), |s| s.to_string_lossy().into_owned());
            BpeVocab::parse(name, &run.read_input_text("vocabulary", &p)?)?
        }
        None => BpeVocab::toy(),
    };
    Ok(features::build_rows(&records, &meta, &vocab)?)
}

fn rows_csv(rows: &[FeatureRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    features::write_rows_csv(rows, &mut buf).map_err(internal)?;
    Ok(buf)
}

pub fn featurize(a: &FeaturizeArgs, run: &mut Run) -> Result<Option<u64>> {
    let rows = load_rows(&a.input, run)?;
    run.write("features.csv", rows_csv(&rows)?)?;
    let unsegmented = rows.iter().filter(|r| r.unsegmented).count();
    println!("{} rows ({unsegmented} flagged unsegmented)", rows.len());
    Ok(None)
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitFile {
    seed: u64,
    test_fraction: f64,
    stratify: StratifyChoice,
    test_ids: Vec<String>,
}

fn stratum_key(r: &FeatureRow, s: StratifyChoice) -> String {
    match s {
        StratifyChoice::None => String::new(),
        StratifyChoice::LangCode => r.lang_code.clone(),
        StratifyChoice::JoshiClass => r.joshi_class.to_string(),
    }
}

pub fn train(a: &TrainArgs, run: &mut Run) -> Result<Option<u64>> {
    let rows = load_rows(&a.input, run)?;
    let keys: Vec<String> = rows.iter().map(|r| stratum_key(r, a.stratify)).collect();
    let is_test = corpus::split_mask(&keys, a.test_fraction, a.seed)?;
    let (mut train_rows, mut test_rows) = (Vec::new(), Vec::new());
    for (r, t) in rows.iter().zip(&is_test) {
        if *t { &mut test_rows } else { &mut train_rows }.push(r.clone());
    }
    run.write(
        "split.json",
        json_line(&SplitFile {
            seed: a.seed,
            test_fraction: a.test_fraction,
            stratify: a.stratify,
            test_ids: test_rows.iter().map(|r| r.id.clone()).collect(),
        })?,
    )?;

    let cfg = a.hyper.config(a.seed);
    let mut reports = Vec::new();
    for kind in a.model.kinds() {
        for scope in a.direction.scopes() {
            let train_scope = in_scope(&train_rows, scope);
            let test_scope = in_scope(&test_rows, scope);
            let label = direction_label(scope);
            let stem = model_stem(kind, scope);
            if train_scope.is_empty() || test_scope.is_empty() {
                return Err(CliError::Invalid(format!("no {label} rows on one side of the split")));
            }
            let mut m = model::train::<f64>(kind, &train_scope, &cfg)?;
            m.direction = scope;
            run.write(&format!("{stem}.json"), m.to_json() + "\n")?;
            reports.push(Report::Eval(eval::evaluate(&m, &test_scope, label)?));
            if a.cv > 0 {
                let cv = eval::kfold_cv(&train_scope, a.cv, a.seed, label, |r| model::train::<f64>(kind, r, &cfg))?;
                run.write(&format!("cv-{}.json", stem.trim_start_matches("model-")), json_line(&cv)?)?;
            }
        }
    }
    let table = eval::comparison_table(&reports)?;
    write_table(run, "comparison", &table)?;
    print!("{}", table.to_text());
    Ok(Some(a.seed))
}

fn write_table(run: &mut Run, stem: &str, table: &eval::ComparisonTable) -> Result<()> {
    run.write(&format!("{stem}.csv"), table.to_csv())?;
    run.write(&format!("{stem}.json"), table.to_json() + "\n")?;
    run.write(&format!("{stem}.txt"), table.to_text())
}

fn load_models(sel: &ModelSelect, run: &mut Run) -> Result<Vec<(String, TrainedModel)>> {
    let files = if sel.model_files.is_empty() {
        let dir = sel.run_dir.clone().unwrap_or_else(|| run.out_dir().to_path_buf());
        let entries = fs::read_dir(&dir).map_err(|e| CliError::Invalid(format!("cannot list {}: {e}", dir.display())))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("model-") && n.ends_with(".json"))
            })
            .collect();
        files.sort();
        files
    } else {
        sel.model_files.clone()
    };
    let wanted = sel.model.kinds();
    let mut models = Vec::new();
    for path in files {
        let text = run.read_input_text("model", &path)?;
        let m = TrainedModel::from_json(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        if wanted.contains(&m.kind) {
            models.push((model_stem(m.kind, m.direction), m));
        }
    }
    if models.is_empty() {
        return Err(CliError::Invalid("no matching model files; run `qe train` first".into()));
    }
    models.sort_by_key(|(_, m)| (m.kind, scope_rank(m.direction)));
    Ok(models)
}

/// Rows of the run's held-out split, or all rows.
fn select_rows(rows: Vec<FeatureRow>, sel: &ModelSelect, all_rows: bool, run: &mut Run) -> Result<Vec<FeatureRow>> {
    if all_rows {
        return Ok(rows);
    }
    let dir = sel.run_dir.clone().unwrap_or_else(|| run.out_dir().to_path_buf());
    let path = dir.join("split.json");
    let split: SplitFile = serde_json::from_str(&run.read_input_text("split", &path)?)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let ids: BTreeSet<String> = split.test_ids.into_iter().collect();
    let held_out: Vec<FeatureRow> = rows.into_iter().filter(|r| ids.contains(&r.id)).collect();
    if held_out.is_empty() {
        return Err(CliError::Invalid(format!(
            "none of the rows are in the held-out split of {}; pass --all-rows to use every row",
            path.display()
        )));
    }
    Ok(held_out)
}

pub fn predict(a: &PredictArgs, run: &mut Run) -> Result<Option<u64>> {
    let rows = load_rows(&a.input, run)?;
    let models = load_models(&a.models, run)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "model", "direction", "predicted", "actual"]).map_err(internal)?;
    for (stem, m) in &models {
        let scope = in_scope(&rows, m.direction);
        let pred = m.predict_rows(&scope)?;
        let name = stem.trim_start_matches("model-");
        for (r, p) in scope.iter().zip(pred) {
            w.write_record([
                r.id.as_str(),
                name,
                r.direction.as_str(),
                &p.to_string(),
                &r.target_chrf.to_string(),
            ])
            .map_err(internal)?;
        }
    }
    run.write("predictions.csv", w.into_inner().map_err(internal)?)?;
    println!("predictions for {} rows from {} models", rows.len(), models.len());
    Ok(None)
}

pub fn evaluate(a: &EvaluateArgs, run: &mut Run) -> Result<Option<u64>> {
    let rows = load_rows(&a.input, run)?;
    let models = load_models(&a.models, run)?;
    let rows = select_rows(rows, &a.models, a.all_rows, run)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for (_, m) in &models {
        let scope = in_scope(&rows, m.direction);
        reports.push(eval::evaluate(m, &scope, direction_label(m.direction))?);
    }
    let table = eval::comparison_table(&reports.into_iter().map(Report::Eval).collect::<Vec<_>>())?;
    write_table(run, "eval", &table)?;
    print!("{}", table.to_text());
    Ok(None)
}

pub fn importance(a: &ImportanceArgs, run: &mut Run) -> Result<Option<u64>> {
    let models = load_models(&a.models, run)?;
    let explicit = a.models.model != ModelChoice::All || !a.models.model_files.is_empty();
    let mut reports = Vec::new();
    for (stem, m) in &models {
        if !matches!(m.kind, ModelKind::Rf | ModelKind::Gbt) {
            if explicit {
                return Err(CliError::Invalid(format!("{} models have no split-gain importance", m.kind)));
            }
            continue;
        }
        let report = eval::importance_report(m, direction_label(m.direction))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["feature", "label", "weight"]).map_err(internal)?;
        for e in &report.entries {
            let label = match Feature::from_name(&e.feature) {
                Some(f) => f.label(),
                None => e.feature.as_str(),
            };
            w.write_record([e.feature.as_str(), label, e.weight.to_string().as_str()])
                .map_err(internal)?;
        }
        let name = format!("importance-{}.csv", stem.trim_start_matches("model-"));
        run.write(&name, w.into_inner().map_err(internal)?)?;
        reports.push(Report::Importance(report));
    }
    if reports.is_empty() {
        return Err(CliError::Invalid("no tree models (rf, gbt) to report importance for".into()));
    }
    let table = eval::comparison_table(&reports)?;
    write_table(run, "importance", &table)?;
    print!("{}", table.to_text());
    Ok(None)
}

pub fn marginals(a: &MarginalsArgs, run: &mut Run) -> Result<Option<u64>> {
    let rows = load_rows(&a.input, run)?;
    let models = load_models(&a.models, run)?;
    let rows = select_rows(rows, &a.models, a.all_rows, run)?;
    let group_by = a.group_by.into();
    let group_name = serde_json::to_value(a.group_by).map_err(internal)?;
    let group_name = group_name.as_str().unwrap_or("group");
    let trim = (a.top_k > 0).then_some(a.top_k);
    for (stem, m) in &models {
        let scope = in_scope(&rows, m.direction);
        let pred = m.predict_rows(&scope)?;
        let report = eval::marginal_means(&scope, &pred, group_by, trim)?;
        let base = format!("marginals-{}-{group_name}", stem.trim_start_matches("model-"));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([group_name, "mean_predicted", "mean_actual", "n"]).map_err(internal)?;
        for r in &report.rows {
            w.write_record([
                r.level.clone(),
                r.mean_predicted.to_string(),
                r.mean_actual.to_string(),
                r.n.to_string(),
            ])
            .map_err(internal)?;
        }
        run.write(&format!("{base}.csv"), w.into_inner().map_err(internal)?)?;
        run.write(&format!("{base}.json"), json_line(&report)?)?;
        run.write(&format!("{base}.svg"), eval::marginal_svg(&report))?;
    }
    let ext = eval::fertility_extremes(&rows, a.fertility_k);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["end", "rank", "lang_code", "mean_fertility"]).map_err(internal)?;
    for (end, list) in [("top", &ext.top), ("bottom", &ext.bottom)] {
        for (i, l) in list.iter().enumerate() {
            w.write_record([end, &(i + 1).to_string(), &l.lang_code, &l.mean_fertility.to_string()])
                .map_err(internal)?;
        }
    }
    run.write("fertility.csv", w.into_inner().map_err(internal)?)?;
    run.write("fertility.json", json_line(&ext)?)?;
    run.write("fertility.svg", eval::fertility_svg(&ext))?;
    println!("marginals by {group_name} for {} models over {} rows", models.len(), rows.len());
    Ok(None)
}

pub fn synth(a: &SynthArgs, run: &mut Run) -> Result<Option<u64>> {
    let (records, meta) = corpus::generate_synthetic(&SynthSpec {
        n_languages: a.languages,
        rows_per_language: a.rows,
        noise_sd: a.noise_sd,
        seed: a.seed,
    })?;
    run.write("records.jsonl", corpus::format_records(&records, RecordFormat::Jsonl))?;
    run.write("languages.tsv", corpus::format_language_meta(&meta))?;
    run.write("vocab.tiktoken", BpeVocab::toy().to_tiktoken())?;
    println!("{} records over {} languages", records.len(), meta.len());
    Ok(Some(a.seed))
}
