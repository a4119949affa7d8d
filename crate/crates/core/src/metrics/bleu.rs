//! Corpus-level BLEU-4.
//!
//! Modified n-gram precision with counts clipped to the maximum count in any
//! reference, uniform weights over n = 1..4, and a brevity penalty against
//! the summed closest reference lengths. A zero precision is replaced by
//! `1 / (2 * candidate n-gram count)`. When the whole corpus has no candidate
//! n-grams of some order (every hypothesis is shorter than n), that order is
//! left out of the geometric mean, so identical short corpora still score 100.

use std::collections::HashMap;

use super::{check_aligned, MetricsError, Result};

/// Lowercases, splits punctuation into separate tokens and splits on
/// whitespace.
pub fn bleu_tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.to_lowercase().chars() {
        if c.is_alphanumeric() || c.is_whitespace() {
            spaced.push(c);
        } else {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        }
    }
    spaced.split_whitespace().map(str::to_owned).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn closest_ref_len(hyp_len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(hyp_len), r))
        .unwrap_or(0)
}

pub const MAX_ORDER: usize = 4;

/// BLEU-4 on a 0..100 scale. `references[i]` holds at least one reference
/// for `hypotheses[i]`.
pub fn bleu4(hypotheses: &[String], references: &[Vec<String>]) -> Result<f64> {
    check_aligned(hypotheses.len(), references.len())?;
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(MetricsError::Argument(format!(
            "segment {i} has no reference"
        )));
    }

    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;

    for (hyp, refs) in hypotheses.iter().zip(references) {
        let hyp = bleu_tokenize(hyp);
        let refs: Vec<Vec<String>> = refs.iter().map(|r| bleu_tokenize(r)).collect();
        hyp_len += hyp.len();
        ref_len += closest_ref_len(hyp.len(), &refs);

        for n in 1..=MAX_ORDER {
            let hyp_counts = ngram_counts(&hyp, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &refs {
                for (gram, c) in ngram_counts(r, n) {
                    let slot = max_ref.entry(gram).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
            for (gram, c) in &hyp_counts {
                matches[n - 1] += (*c).min(max_ref.get(gram).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }

    if hyp_len == 0 {
        return Ok(0.0);
    }

    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            continue;
        }
        let p = if matches[n] > 0 {
            matches[n] as f64 / totals[n] as f64
        } else {
            1.0 / (2.0 * totals[n] as f64)
        };
        log_sum += p.ln();
        orders += 1;
    }
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok((100.0 * bp * (log_sum / orders as f64).exp()).clamp(0.0, 100.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn identical_is_100() {
        let hyps = s(&["the cat sat on the mat", "a quick brown fox jumps", "yes"]);
        let refs: Vec<Vec<String>> = hyps.iter().map(|h| vec![h.clone()]).collect();
        assert_eq!(bleu4(&hyps, &refs).unwrap(), 100.0);
    }

    #[test]
    fn repeated_word() {
        // p1 = 1/3 (clipped), p2 = 1/(2*2), p3 = 1/(2*1), no 4-grams
        let got = bleu4(&s(&["the the the"]), &[s(&["the cat"])]).unwrap();
        let want = 100.0 * (1.0f64 / 24.0).powf(1.0 / 3.0);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn brevity_penalty_applies() {
        let got = bleu4(&s(&["a b c d"]), &[s(&["a b c d e f g h"])]).unwrap();
        assert!((got - 100.0 * (1.0f64 - 2.0).exp()).abs() < 1e-9);
    }

    #[test]
    fn empty_hypothesis_does_not_crash() {
        assert_eq!(bleu4(&s(&[""]), &[s(&["something"])]).unwrap(), 0.0);
        let got = bleu4(&s(&["", "x y z w"]), &[s(&["q"]), s(&["x y z w"])]).unwrap();
        assert!(got > 0.0 && got < 100.0);
    }

    #[test]
    fn errors() {
        assert!(bleu4(&s(&["a"]), &[]).is_err());
        assert!(bleu4(&s(&["a"]), &[vec![]]).is_err());
    }

    #[test]
    fn tokenization() {
        assert_eq!(
            bleu_tokenize("Hello, World!"),
            s(&["hello", ",", "world", "!"])
        );
        assert!(bleu_tokenize("   ").is_empty());
    }

    #[test]
    fn closest_length_prefers_shorter_on_tie() {
        let refs = vec![s(&["a", "b"]), s(&["a", "b", "c", "d"])];
        assert_eq!(closest_ref_len(3, &refs), 2);
    }
}
