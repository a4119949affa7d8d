//! SLURP slot-filling score with partial credit.
//!
//! Within an utterance, predicted and gold `(slot, value)` pairs with the same
//! slot label are paired greedily, best value overlap first. Exact value
//! matches count as span hits; every pair also earns fractional credit equal
//! to the F1 between the two values' word bags, and separately their
//! character bags. Credits are pooled over the corpus against the number of
//! predicted and gold pairs, and SLU-F1 is the mean of the word and character
//! F1.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{check_aligned, multiset_intersection, Prf, Result};
use crate::taskio::{IntentSlots, Slot};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SluF1Report {
    pub span: Prf,
    pub word: Prf,
    pub char: Prf,
    pub slu_f1: f64,
}

fn bag_f1<T: Ord>(pred: &[T], gold: &[T]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let inter = multiset_intersection(pred, gold) as f64;
    Prf::from_counts(inter, pred.len() as f64, gold.len() as f64).f1
}

fn word_bag(value: &str) -> Vec<&str> {
    value.split_whitespace().collect()
}

fn char_bag(value: &str) -> Vec<char> {
    value.chars().filter(|c| !c.is_whitespace()).collect()
}

struct Candidate {
    pred: usize,
    gold: usize,
    word: f64,
    char: f64,
}

/// Pairs predicted and gold slots; returns `(pred, gold, word, char)` credits.
fn pair_slots(pred: &[Slot], gold: &[Slot]) -> Vec<Candidate> {
    let mut candidates: Vec<Candidate> = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        for (gi, g) in gold.iter().enumerate() {
            if p.slot != g.slot {
                continue;
            }
            let word = bag_f1(&word_bag(&p.value), &word_bag(&g.value));
            let char = bag_f1(&char_bag(&p.value), &char_bag(&g.value));
            if word > 0.0 || char > 0.0 {
                candidates.push(Candidate {
                    pred: pi,
                    gold: gi,
                    word,
                    char,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.word
            .partial_cmp(&a.word)
            .unwrap_or(Ordering::Equal)
            .then(b.char.partial_cmp(&a.char).unwrap_or(Ordering::Equal))
            .then(a.pred.cmp(&b.pred))
            .then(a.gold.cmp(&b.gold))
    });
    let mut pred_used = vec![false; pred.len()];
    let mut gold_used = vec![false; gold.len()];
    candidates
        .into_iter()
        .filter(|c| {
            if pred_used[c.pred] || gold_used[c.gold] {
                return false;
            }
            pred_used[c.pred] = true;
            gold_used[c.gold] = true;
            true
        })
        .collect()
}

pub fn slu_f1(preds: &[IntentSlots], golds: &[IntentSlots]) -> Result<SluF1Report> {
    check_aligned(preds.len(), golds.len())?;
    let (mut span_tp, mut word_tp, mut char_tp) = (0.0, 0.0, 0.0);
    let (mut n_pred, mut n_gold) = (0usize, 0usize);
    for (p, g) in preds.iter().zip(golds) {
        n_pred += p.slots.len();
        n_gold += g.slots.len();
        for c in pair_slots(&p.slots, &g.slots) {
            if p.slots[c.pred].value == g.slots[c.gold].value {
                span_tp += 1.0;
            }
            word_tp += c.word;
            char_tp += c.char;
        }
    }
    let (np, ng) = (n_pred as f64, n_gold as f64);
    let word = Prf::from_counts(word_tp, np, ng);
    let char = Prf::from_counts(char_tp, np, ng);
    Ok(SluF1Report {
        span: Prf::from_counts(span_tp, np, ng),
        word,
        char,
        slu_f1: (word.f1 + char.f1) / 2.0,
    })
}
