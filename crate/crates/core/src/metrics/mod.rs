//! Scoring for the five downstream tasks: NER micro F1, sentiment macro F1,
//! QA BLEU-4 and accuracy, FSC accuracy, SLURP intent accuracy and SLU-F1.
//!
//! Zero-denominator convention throughout: a precision or recall whose
//! denominator is zero is 0, and F1 is 0 when P + R is 0.

mod bleu;
mod report;
mod slu;

pub use bleu::{bleu4, bleu_tokenize};
pub use report::{evaluate_run, read_predictions, MetricReport, Prediction, Support, Task};
pub use slu::{slu_f1, SluF1Report};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taskio::{DacPrediction, Entity, NerPrediction};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{path}: line {line}: {message}")]
    Line {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// From a (possibly fractional) true-positive mass and the predicted and
    /// gold totals.
    pub fn from_counts(tp: f64, n_pred: f64, n_gold: f64) -> Self {
        let precision = if n_pred > 0.0 { tp / n_pred } else { 0.0 };
        let recall = if n_gold > 0.0 { tp / n_gold } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn check_aligned(n_pred: usize, n_gold: usize) -> Result<()> {
    if n_pred != n_gold {
        return Err(MetricsError::Alignment(format!(
            "{n_pred} predictions vs {n_gold} references"
        )));
    }
    Ok(())
}

pub(crate) fn multiset_intersection<T: Ord>(a: &[T], b: &[T]) -> usize {
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for x in a {
        *counts.entry(x).or_default() += 1;
    }
    let mut inter = 0;
    for y in b {
        if let Some(c) = counts.get_mut(y) {
            if *c > 0 {
                *c -= 1;
                inter += 1;
            }
        }
    }
    inter
}

/// Micro-averaged precision/recall/F1 over exact `(tag, phrase)` matches,
/// counted as multisets per utterance.
pub fn ner_micro_f1(preds: &[NerPrediction], golds: &[NerPrediction]) -> Result<Prf> {
    check_aligned(preds.len(), golds.len())?;
    let (mut tp, mut n_pred, mut n_gold) = (0usize, 0usize, 0usize);
    for (p, g) in preds.iter().zip(golds) {
        tp += multiset_intersection::<Entity>(&p.entities, &g.entities);
        n_pred += p.entities.len();
        n_gold += g.entities.len();
    }
    Ok(Prf::from_counts(tp as f64, n_pred as f64, n_gold as f64))
}

/// Unweighted mean of per-label F1. A `None` prediction (unparseable) is wrong
/// for its gold label and counts against no label's precision. Labels in
/// neither predictions nor golds are left out of the mean.
pub fn macro_f1<T: Ord + Clone>(preds: &[Option<T>], golds: &[T], label_set: &[T]) -> Result<f64> {
    check_aligned(preds.len(), golds.len())?;
    if golds.is_empty() {
        return Err(MetricsError::Argument("no utterances to score".into()));
    }
    let mut f1s = Vec::new();
    for label in label_set {
        let mut tp = 0usize;
        let mut n_pred = 0usize;
        let mut n_gold = 0usize;
        for (p, g) in preds.iter().zip(golds) {
            let p_is = p.as_ref() == Some(label);
            let g_is = g == label;
            n_pred += p_is as usize;
            n_gold += g_is as usize;
            tp += (p_is && g_is) as usize;
        }
        if n_pred + n_gold > 0 {
            f1s.push(Prf::from_counts(tp as f64, n_pred as f64, n_gold as f64).f1);
        }
    }
    Ok(if f1s.is_empty() {
        0.0
    } else {
        f1s.iter().sum::<f64>() / f1s.len() as f64
    })
}

/// Fraction of pairs for which `matches` holds.
pub fn accuracy<P, G>(preds: &[P], golds: &[G], matches: impl Fn(&P, &G) -> bool) -> Result<f64> {
    check_aligned(preds.len(), golds.len())?;
    if golds.is_empty() {
        return Err(MetricsError::Argument("no utterances to score".into()));
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| matches(p, g))
        .count();
    Ok(hits as f64 / golds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DacAccuracy {
    /// All three fields correct.
    pub overall: f64,
    pub action: f64,
    pub object: f64,
    pub location: f64,
}

pub fn dac_accuracy(preds: &[DacPrediction], golds: &[DacPrediction]) -> Result<DacAccuracy> {
    Ok(DacAccuracy {
        overall: accuracy(preds, golds, |p, g| p == g)?,
        action: accuracy(preds, golds, |p, g| p.action == g.action)?,
        object: accuracy(preds, golds, |p, g| p.object == g.object)?,
        location: accuracy(preds, golds, |p, g| p.location == g.location)?,
    })
}

/// QA exact match after answer normalization, against any reference.
pub fn qa_accuracy(hyps: &[String], refs: &[Vec<String>]) -> Result<f64> {
    use crate::taskio::normalize_answer;
    accuracy(hyps, refs, |h, rs| {
        let h = normalize_answer(h);
        rs.iter().any(|r| normalize_answer(r) == h)
    })
}
