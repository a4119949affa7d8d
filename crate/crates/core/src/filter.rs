//! Task-level and example-level filtering.
//!
//! Task families that have no spoken analogue (spam detection, spelling
//! correction, cloze tasks) are removed by keyword, and examples whose input
//! cannot sensibly be read aloud are removed by a fixed sequence of rules:
//! url, code, special characters, fill-in-the-blank, length.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::UnifiedExample;

#[derive(Debug, Error)]
pub enum FilterConfigError {
    #[error("invalid filter rule {field}: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
    #[error("cannot read filter rules: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse filter rules: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    IrrelevantTask,
    Url,
    Code,
    SpecialChars,
    TooLong,
    FillInBlank,
    EmptyOutput,
    EmptyInput,
    SynthesisFailed,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::IrrelevantTask => "irrelevant_task",
            DropReason::Url => "url",
            DropReason::Code => "code",
            DropReason::SpecialChars => "special_chars",
            DropReason::TooLong => "too_long",
            DropReason::FillInBlank => "fill_in_blank",
            DropReason::EmptyOutput => "empty_output",
            DropReason::EmptyInput => "empty_input",
            DropReason::SynthesisFailed => "synthesis_failed",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Audit record for an example removed from the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub example_id: String,
    pub reason: DropReason,
    pub detail: String,
}

impl DropRecord {
    pub fn new(example_id: &str, reason: DropReason, detail: impl Into<String>) -> Self {
        Self {
            example_id: example_id.to_owned(),
            reason,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodeDetection {
    pub fence_marker_check: bool,
    pub symbol_density_threshold: f64,
}

impl Default for CodeDetection {
    fn default() -> Self {
        Self {
            fence_marker_check: true,
            symbol_density_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterRuleSet {
    pub banned_task_keywords: Vec<String>,
    pub url_detection: bool,
    pub code_detection: CodeDetection,
    pub special_char_ratio_max: f64,
    pub max_input_chars: usize,
    pub blank_run_min: usize,
}

pub const DEFAULT_BANNED_KEYWORDS: &[&str] = &[
    "spam",
    "spelling error",
    "fill in the blank",
    "fill-in-the-blank",
    "misspell",
    "typo",
];

impl Default for FilterRuleSet {
    fn default() -> Self {
        Self {
            banned_task_keywords: DEFAULT_BANNED_KEYWORDS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            url_detection: true,
            code_detection: CodeDetection::default(),
            special_char_ratio_max: 0.10,
            max_input_chars: 1000,
            blank_run_min: 3,
        }
    }
}

impl FilterRuleSet {
    pub fn validate(&self) -> Result<(), FilterConfigError> {
        let fraction = |field: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(FilterConfigError::Invalid {
                    field,
                    message: format!("{v} is outside [0, 1]"),
                })
            }
        };
        fraction(
            "code_detection.symbol_density_threshold",
            self.code_detection.symbol_density_threshold,
        )?;
        fraction("special_char_ratio_max", self.special_char_ratio_max)?;
        if self.max_input_chars == 0 {
            return Err(FilterConfigError::Invalid {
                field: "max_input_chars",
                message: "must be positive".into(),
            });
        }
        if self.blank_run_min == 0 {
            return Err(FilterConfigError::Invalid {
                field: "blank_run_min",
                message: "must be positive".into(),
            });
        }
        if let Some(k) = self
            .banned_task_keywords
            .iter()
            .find(|k| k.trim().is_empty() || k.chars().any(char::is_uppercase))
        {
            return Err(FilterConfigError::Invalid {
                field: "banned_task_keywords",
                message: format!("{k:?} must be a non-empty lowercase string"),
            });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, FilterConfigError> {
        let rules: Self = serde_json::from_str(text)?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn load(path: &Path) -> Result<Self, FilterConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Drop(DropReason),
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

// Inflections accepted on the final keyword word ("errors", "misspelled").
const SUFFIXES: &[&str] = &["", "s", "es", "d", "ed", "ing", "ings"];

fn contains_keyword(haystack: &[String], keyword: &[String]) -> bool {
    let Some((last, head)) = keyword.split_last() else {
        return false;
    };
    haystack.windows(keyword.len()).any(|win| {
        win[..head.len()] == *head
            && win[head.len()]
                .strip_prefix(last.as_str())
                .is_some_and(|rest| SUFFIXES.contains(&rest))
    })
}

/// Keeps a task unless a banned keyword appears as a whole word sequence in
/// its name or instruction. Underscores and hyphens count as word breaks, so
/// `task108_spam_classification` matches `spam`.
pub fn classify_task(task_name: &str, instruction: &str, rules: &FilterRuleSet) -> Verdict {
    let name_words = words(task_name);
    let instr_words = words(instruction);
    let banned = rules.banned_task_keywords.iter().any(|kw| {
        let kw = words(kw);
        contains_keyword(&name_words, &kw) || contains_keyword(&instr_words, &kw)
    });
    if banned {
        Verdict::Drop(DropReason::IrrelevantTask)
    } else {
        Verdict::Keep
    }
}

const CODE_SYMBOLS: &[char] = &['{', '}', '[', ']', '<', '>', ';', '=', '|', '\\'];
const SPEAKABLE_PUNCT: &[char] = &['.', ',', '!', '?', '\'', '"', ':', ';', '-', '(', ')'];

fn has_url(text: &str) -> bool {
    let lower = text.to_lowercase();
    ["http://", "https://", "www."]
        .iter()
        .any(|p| lower.contains(p))
}

fn longest_run(text: &str, target: char) -> usize {
    let mut best = 0;
    let mut run = 0;
    for c in text.chars() {
        if c == target {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

/// First failing speakability rule for `input_text`, with a human-readable
/// detail, or `None` when the text can be synthesized.
pub fn speakability(input_text: &str, rules: &FilterRuleSet) -> Option<(DropReason, String)> {
    let len = input_text.chars().count();
    let ratio = |n: usize| if len == 0 { 0.0 } else { n as f64 / len as f64 };

    if rules.url_detection && has_url(input_text) {
        return Some((DropReason::Url, "url scheme or www. prefix".into()));
    }
    if rules.code_detection.fence_marker_check && input_text.contains("```") {
        return Some((DropReason::Code, "code fence marker".into()));
    }
    let symbols = input_text
        .chars()
        .filter(|c| CODE_SYMBOLS.contains(c))
        .count();
    let density = ratio(symbols);
    if density > rules.code_detection.symbol_density_threshold {
        return Some((DropReason::Code, format!("symbol density {density:.3}")));
    }
    let special = input_text
        .chars()
        .filter(|&c| !(c.is_alphanumeric() || c.is_whitespace() || SPEAKABLE_PUNCT.contains(&c)))
        .count();
    let special_ratio = ratio(special);
    if special_ratio > rules.special_char_ratio_max {
        return Some((
            DropReason::SpecialChars,
            format!("special character ratio {special_ratio:.3}"),
        ));
    }
    let run = longest_run(input_text, '_');
    if run >= rules.blank_run_min {
        return Some((DropReason::FillInBlank, format!("underscore run of {run}")));
    }
    if len > rules.max_input_chars {
        return Some((DropReason::TooLong, format!("{len} characters")));
    }
    None
}

pub fn is_speakable(input_text: &str, rules: &FilterRuleSet) -> Verdict {
    match speakability(input_text, rules) {
        Some((reason, _)) => Verdict::Drop(reason),
        None => Verdict::Keep,
    }
}

/// Splits `examples` into kept examples (in input order) and drop records.
pub fn filter_corpus(
    examples: &[UnifiedExample],
    rules: &FilterRuleSet,
) -> (Vec<UnifiedExample>, Vec<DropRecord>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for ex in examples {
        if classify_task(ex.task_name(), &ex.instruction, rules) != Verdict::Keep {
            dropped.push(DropRecord::new(
                &ex.id,
                DropReason::IrrelevantTask,
                "banned task keyword",
            ));
        } else if let Some((reason, detail)) = speakability(&ex.input, rules) {
            dropped.push(DropRecord::new(&ex.id, reason, detail));
        } else {
            kept.push(ex.clone());
        }
    }
    (kept, dropped)
}
