//! Phrase-level precision, recall and F1 over durational segments.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{LabelId, LabelSet, Segment, Sentence};
use crate::decoding::DecodePath;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("gold has {gold} sentences but predictions have {predicted}")]
    LengthMismatch { gold: usize, predicted: usize },
    #[error("unknown match mode {0:?}")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchMode {
    /// Identical `(start, end, label)`.
    #[default]
    Span,
    /// Lowercased surface string and label, as a set per sentence block.
    String,
}

impl FromStr for MatchMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "span" => Ok(MatchMode::Span),
            "string" => Ok(MatchMode::String),
            _ => Err(EvalError::UnknownMode(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl EvalReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EvalReport {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}",
            self.precision, self.recall, self.f1, self.tp, self.fp, self.fn_
        )
    }
}

impl AsRef<[Segment]> for DecodePath {
    fn as_ref(&self) -> &[Segment] {
        &self.segments
    }
}

/// Micro-averaged exact-span evaluation.
pub fn evaluate<P: AsRef<[Segment]>>(
    gold: &[Sentence],
    predicted: &[P],
    labels: &LabelSet,
) -> Result<EvalReport, EvalError> {
    evaluate_with(gold, predicted, labels, MatchMode::Span)
}

pub fn evaluate_with<P: AsRef<[Segment]>>(
    gold: &[Sentence],
    predicted: &[P],
    labels: &LabelSet,
    mode: MatchMode,
) -> Result<EvalReport, EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (s, p) in gold.iter().zip(predicted) {
        let (hit, np, ng) = match mode {
            MatchMode::Span => overlap(&span_keys(&s.gold, labels), &span_keys(p.as_ref(), labels)),
            MatchMode::String => overlap(&string_keys(s, &s.gold, labels), &string_keys(s, p.as_ref(), labels)),
        };
        tp += hit;
        fp += np - hit;
        fn_ += ng - hit;
    }
    Ok(EvalReport::from_counts(tp, fp, fn_))
}

/// `(|g ∩ p|, |p|, |g|)`.
fn overlap<T: Ord>(g: &BTreeSet<T>, p: &BTreeSet<T>) -> (u64, u64, u64) {
    (g.intersection(p).count() as u64, p.len() as u64, g.len() as u64)
}

fn span_keys(segs: &[Segment], labels: &LabelSet) -> BTreeSet<(usize, usize, LabelId)> {
    segs.iter()
        .filter(|s| labels.is_durational(s.label))
        .map(|s| (s.start, s.end, s.label))
        .collect()
}

fn string_keys(s: &Sentence, segs: &[Segment], labels: &LabelSet) -> BTreeSet<(String, LabelId)> {
    segs.iter()
        .filter(|g| labels.is_durational(g.label))
        .map(|g| {
            let words: Vec<String> = s.tokens[g.start..=g.end].iter().map(|t| t.surface.to_lowercase()).collect();
            (words.join(" "), g.label)
        })
        .collect()
}
