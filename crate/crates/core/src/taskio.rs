//! Text grammars for structured task targets and lenient parsers for model
//! output.
//!
//! Structured targets are rendered as `key: value` sections joined by `" ; "`.
//! NER uses `tag: phrase` entries, SLURP adds a `slots:` section of `slot=value`
//! pairs joined by `" | "`. The characters `; : | = \` are backslash-escaped
//! inside fields so every rendering parses back to the same structure.
//! Parsers never fail on malformed text: bad fragments are dropped and counted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskioError {
    #[error("no sentiment label in {0:?}")]
    UnknownLabel(String),
    #[error("more than one sentiment label in {0:?}")]
    AmbiguousLabel(String),
}

const ESCAPED: &[char] = &['\\', ';', ':', '|', '='];

pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if ESCAPED.contains(&c) {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

pub fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some(next) => out.push(next),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Byte offsets of `sep` occurrences not preceded by an escaping backslash.
fn unescaped_positions(s: &str, sep: char) -> Vec<usize> {
    let mut out = Vec::new();
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == sep {
            out.push(i);
        }
    }
    out
}

fn split_unescaped(s: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    for pos in unescaped_positions(s, sep) {
        parts.push(&s[start..pos]);
        start = pos + sep.len_utf8();
    }
    parts.push(&s[start..]);
    parts
}

fn split_once_unescaped(s: &str, sep: char) -> Option<(&str, &str)> {
    unescaped_positions(s, sep)
        .first()
        .map(|&pos| (&s[..pos], &s[pos + sep.len_utf8()..]))
}

/// `key: value` sections of a rendered target, keys lowercased. The second
/// value counts fragments that had no key.
fn sections(text: &str) -> (Vec<(String, &str)>, usize) {
    let mut out = Vec::new();
    let mut dropped = 0;
    for frag in split_unescaped(text, ';') {
        let frag = frag.trim();
        if frag.is_empty() {
            continue;
        }
        match split_once_unescaped(frag, ':') {
            Some((k, v)) => out.push((unescape_field(k.trim()).to_lowercase(), v.trim())),
            None => dropped += 1,
        }
    }
    (out, dropped)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub tag: String,
    pub phrase: String,
}

impl Entity {
    pub fn new(tag: &str, phrase: &str) -> Self {
        Self {
            tag: tag.trim().to_lowercase(),
            phrase: phrase.trim().to_owned(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NerPrediction {
    pub entities: Vec<Entity>,
    /// Fragments that could not be parsed.
    pub dropped: usize,
}

pub const NO_ENTITIES: &str = "none";

pub fn render_ner(entities: &[Entity]) -> String {
    if entities.is_empty() {
        return NO_ENTITIES.to_owned();
    }
    entities
        .iter()
        .map(|e| {
            format!(
                "{}: {}",
                escape_field(&e.tag.to_lowercase()),
                escape_field(&e.phrase)
            )
        })
        .collect::<Vec<_>>()
        .join(" ; ")
}

pub fn parse_ner(text: &str) -> NerPrediction {
    let text = text.trim();
    if text.is_empty() || text.eq_ignore_ascii_case(NO_ENTITIES) {
        return NerPrediction::default();
    }
    let (secs, mut dropped) = sections(text);
    let mut entities = Vec::with_capacity(secs.len());
    for (tag, phrase) in secs {
        let phrase = unescape_field(phrase);
        if tag.is_empty() || phrase.is_empty() {
            dropped += 1;
        } else {
            entities.push(Entity { tag, phrase });
        }
    }
    NerPrediction { entities, dropped }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Negative,
    Neutral,
    Positive,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [
        SentimentLabel::Negative,
        SentimentLabel::Neutral,
        SentimentLabel::Positive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Negative => "negative",
            SentimentLabel::Neutral => "neutral",
            SentimentLabel::Positive => "positive",
        }
    }
}

/// Accepts a text whose words name exactly one sentiment label.
pub fn parse_sentiment(text: &str) -> Result<SentimentLabel, TaskioError> {
    let lower = text.to_lowercase();
    let mut found: Vec<SentimentLabel> = lower
        .split(|c: char| !c.is_alphabetic())
        .filter_map(|w| SentimentLabel::ALL.into_iter().find(|l| l.as_str() == w))
        .collect();
    found.sort();
    found.dedup();
    match found.as_slice() {
        [label] => Ok(*label),
        [] => Err(TaskioError::UnknownLabel(text.to_owned())),
        _ => Err(TaskioError::AmbiguousLabel(text.to_owned())),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DacPrediction {
    pub action: String,
    pub object: String,
    pub location: String,
}

pub fn render_dac(dac: &DacPrediction) -> String {
    format!(
        "action: {} ; object: {} ; location: {}",
        escape_field(&dac.action),
        escape_field(&dac.object),
        escape_field(&dac.location)
    )
}

pub fn parse_dac(text: &str) -> DacPrediction {
    let mut out = DacPrediction::default();
    for (key, value) in sections(text).0 {
        let value = unescape_field(value);
        match key.as_str() {
            "action" => out.action = value,
            "object" => out.object = value,
            "location" => out.location = value,
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slot {
    pub slot: String,
    pub value: String,
}

impl Slot {
    pub fn new(slot: &str, value: &str) -> Self {
        Self {
            slot: slot.trim().to_owned(),
            value: value.trim().to_owned(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntentSlots {
    pub scenario: String,
    pub action: String,
    pub slots: Vec<Slot>,
    /// Sections or slot pairs that could not be parsed.
    pub dropped: usize,
}

impl IntentSlots {
    pub fn intent(&self) -> (&str, &str) {
        (&self.scenario, &self.action)
    }
}

pub fn render_intent_slots(scenario: &str, action: &str, slots: &[Slot]) -> String {
    let mut out = format!(
        "scenario: {} ; action: {}",
        escape_field(scenario),
        escape_field(action)
    );
    if !slots.is_empty() {
        let pairs: Vec<String> = slots
            .iter()
            .map(|s| format!("{}={}", escape_field(&s.slot), escape_field(&s.value)))
            .collect();
        out.push_str(" ; slots: ");
        out.push_str(&pairs.join(" | "));
    }
    out
}

pub fn parse_intent_slots(text: &str) -> IntentSlots {
    let (secs, mut dropped) = sections(text);
    let mut out = IntentSlots::default();
    for (key, value) in secs {
        match key.as_str() {
            "scenario" => out.scenario = unescape_field(value),
            "action" => out.action = unescape_field(value),
            // SLURP-style "intent: calendar_set"
            "intent" => {
                let intent = unescape_field(value);
                match intent.split_once('_') {
                    Some((s, a)) => {
                        out.scenario = s.to_owned();
                        out.action = a.to_owned();
                    }
                    None => dropped += 1,
                }
            }
            "slots" => {
                for pair in split_unescaped(value, '|') {
                    let pair = pair.trim();
                    if pair.is_empty() {
                        continue;
                    }
                    match split_once_unescaped(pair, '=') {
                        Some((s, v)) if !s.trim().is_empty() => out.slots.push(Slot {
                            slot: unescape_field(s.trim()),
                            value: unescape_field(v.trim()),
                        }),
                        _ => dropped += 1,
                    }
                }
            }
            _ => dropped += 1,
        }
    }
    out.dropped = dropped;
    out
}

/// Lowercases, removes punctuation and the articles a/an/the, and collapses
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaAnswer {
    pub text: String,
    pub normalized: String,
}

impl QaAnswer {
    pub fn new(text: &str) -> Self {
        Self {
            text: text.to_owned(),
            normalized: normalize_answer(text),
        }
    }
}
