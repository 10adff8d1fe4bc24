//! Sentence-level ChrF and ChrF++.
//!
//! Character n-grams are taken over the text with all whitespace removed.
//! Precision and recall are macro-averaged over orders, then combined with
//! an F-beta. An order where neither side has any n-gram is left out of the
//! average; an order where only one side has n-grams contributes zero.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TranslationRecord;

#[derive(Debug, Error, PartialEq)]
pub enum ChrfError {
    #[error("reference is empty{}", .0.as_ref().map(|id| format!(" (record {id:?})")).unwrap_or_default())]
    EmptyReference(Option<String>),
    #[error("invalid ChrF parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChrfParams {
    pub max_char_n: usize,
    /// 0 for plain ChrF, 2 for ChrF++.
    pub word_n: usize,
    pub beta: f64,
}

impl Default for ChrfParams {
    fn default() -> Self {
        ChrfParams {
            max_char_n: 6,
            word_n: 0,
            beta: 2.0,
        }
    }
}

impl ChrfParams {
    pub fn chrf_plus_plus() -> Self {
        ChrfParams {
            word_n: 2,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), ChrfError> {
        if self.max_char_n < 1 {
            return Err(ChrfError::InvalidParams("max_char_n must be at least 1".into()));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(ChrfError::InvalidParams("beta must be finite and positive".into()));
        }
        Ok(())
    }
}

fn ngrams<T: Eq + std::hash::Hash>(items: &[T], order: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if order == 0 || items.len() < order {
        return counts;
    }
    for w in items.windows(order) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Character n-grams of `order` over `text` with whitespace stripped.
pub fn char_ngrams(text: &str, order: usize) -> HashMap<String, usize> {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    ngrams(&chars, order)
        .into_iter()
        .map(|(g, n)| (g.iter().collect(), n))
        .collect()
}

/// Per-order statistics: `(clipped matches, candidate total, reference total)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OrderStats {
    pub matches: usize,
    pub candidate: usize,
    pub reference: usize,
}

fn order_stats<T: Eq + std::hash::Hash>(reference: &[T], candidate: &[T], order: usize) -> OrderStats {
    let r = ngrams(reference, order);
    let c = ngrams(candidate, order);
    let matches = c
        .iter()
        .map(|(g, &n)| n.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    OrderStats {
        matches,
        candidate: c.values().sum(),
        reference: r.values().sum(),
    }
}

/// Statistics for every char order `1..=max_char_n` followed by every word
/// order `1..=word_n`.
pub fn all_order_stats(reference: &str, candidate: &str, params: &ChrfParams) -> Vec<OrderStats> {
    let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<Vec<char>>();
    let (rc, cc) = (strip(reference), strip(candidate));
    let mut out: Vec<OrderStats> = (1..=params.max_char_n)
        .map(|k| order_stats(&rc, &cc, k))
        .collect();
    if params.word_n > 0 {
        let rw: Vec<&str> = reference.split_whitespace().collect();
        let cw: Vec<&str> = candidate.split_whitespace().collect();
        out.extend((1..=params.word_n).map(|k| order_stats(&rw, &cw, k)));
    }
    out
}

/// Combines per-order statistics into a score on the 0..=100 scale.
pub fn score_from_stats(stats: &[OrderStats], beta: f64) -> f64 {
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut orders = 0usize;
    for s in stats {
        if s.candidate == 0 && s.reference == 0 {
            continue;
        }
        orders += 1;
        if s.candidate > 0 {
            precision += s.matches as f64 / s.candidate as f64;
        }
        if s.reference > 0 {
            recall += s.matches as f64 / s.reference as f64;
        }
    }
    if orders == 0 {
        return 0.0;
    }
    let p = precision / orders as f64;
    let r = recall / orders as f64;
    let b2 = beta * beta;
    let denom = b2 * p + r;
    if denom <= 0.0 {
        0.0
    } else {
        100.0 * (1.0 + b2) * p * r / denom
    }
}

pub fn chrf_score(reference: &str, candidate: &str, params: &ChrfParams) -> Result<f64, ChrfError> {
    params.validate()?;
    if reference.is_empty() {
        return Err(ChrfError::EmptyReference(None));
    }
    Ok(score_from_stats(&all_order_stats(reference, candidate, params), params.beta))
}

/// Fills `chrf` on records that lack it; existing scores are kept.
pub fn ensure_targets(
    records: &[TranslationRecord],
    params: &ChrfParams,
) -> Result<Vec<TranslationRecord>, ChrfError> {
    params.validate()?;
    records
        .iter()
        .map(|r| {
            if r.chrf.is_some() {
                return Ok(r.clone());
            }
            let score = chrf_score(&r.reference_text, &r.candidate_text, params).map_err(|e| match e {
                ChrfError::EmptyReference(_) => ChrfError::EmptyReference(Some(r.id.clone())),
                other => other,
            })?;
            Ok(TranslationRecord {
                chrf: Some(score),
                ..r.clone()
            })
        })
        .collect()
}
