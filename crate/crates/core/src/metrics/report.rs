//! Scoring a run: prediction and reference JSONL files in, one report out.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    accuracy, bleu4, dac_accuracy, macro_f1, ner_micro_f1, qa_accuracy, slu_f1, MetricsError,
    Result,
};
use crate::taskio::{
    parse_dac, parse_intent_slots, parse_ner, parse_sentiment, DacPrediction, Entity, IntentSlots,
    NerPrediction, SentimentLabel, Slot,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ner,
    Sa,
    Qa,
    Fsc,
    Slurp,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Ner => "ner",
            Task::Sa => "sa",
            Task::Qa => "qa",
            Task::Fsc => "fsc",
            Task::Slurp => "slurp",
        })
    }
}

/// One model output line: `{"id": ..., "text": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub utterances: usize,
    /// Predictions that failed to parse, fully or in part.
    pub unparseable: usize,
    /// Reference ids with no prediction; scored as misses.
    pub missing_predictions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub metrics: IndexMap<String, f64>,
    pub support: Support,
}

impl MetricReport {
    pub fn table(&self) -> String {
        let width = self.metrics.keys().map(String::len).max().unwrap_or(0);
        let mut out = format!("task: {}\n", self.task);
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k:<width$}  {v:.4}\n"));
        }
        out.push_str(&format!(
            "utterances: {}  unparseable: {}  missing: {}\n",
            self.support.utterances, self.support.unparseable, self.support.missing_predictions
        ));
        out
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NerRef {
    id: String,
    entities: Vec<Entity>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SaRef {
    id: String,
    label: SentimentLabel,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QaRef {
    id: String,
    answers: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FscRef {
    id: String,
    action: String,
    object: String,
    location: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SlurpRef {
    id: String,
    scenario: String,
    action: String,
    slots: Vec<Slot>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| MetricsError::Io {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| MetricsError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| MetricsError::Line {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    read_jsonl(path)
}

/// Orders prediction texts to follow `ref_ids`. Missing ids yield `None`.
fn align(preds: Vec<Prediction>, ref_ids: &[&str]) -> Result<Vec<Option<String>>> {
    let known: HashSet<&str> = ref_ids.iter().copied().collect();
    if known.len() != ref_ids.len() {
        return Err(MetricsError::Alignment("duplicate reference id".into()));
    }
    let mut by_id: HashMap<String, String> = HashMap::with_capacity(preds.len());
    for p in preds {
        if !known.contains(p.id.as_str()) {
            return Err(MetricsError::Alignment(format!(
                "prediction {:?} has no reference",
                p.id
            )));
        }
        if by_id.insert(p.id.clone(), p.text).is_some() {
            return Err(MetricsError::Alignment(format!(
                "duplicate prediction {:?}",
                p.id
            )));
        }
    }
    Ok(ref_ids.iter().map(|id| by_id.remove(*id)).collect())
}

fn metrics(pairs: &[(&str, f64)]) -> IndexMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn evaluate_run(task: Task, predictions: &Path, references: &Path) -> Result<MetricReport> {
    let preds = read_predictions(predictions)?;
    let mut support = Support::default();

    let metrics = match task {
        Task::Ner => {
            let refs: Vec<NerRef> = read_jsonl(references)?;
            let ids: Vec<&str> = refs.iter().map(|r| r.id.as_str()).collect();
            let texts = align(preds, &ids)?;
            let mut parsed = Vec::with_capacity(texts.len());
            for t in &texts {
                let p = match t {
                    Some(t) => parse_ner(t),
                    None => {
                        support.missing_predictions += 1;
                        NerPrediction::default()
                    }
                };
                if p.dropped > 0 {
                    support.unparseable += 1;
                }
                parsed.push(p);
            }
            let golds: Vec<NerPrediction> = refs
                .into_iter()
                .map(|r| NerPrediction {
                    entities: r
                        .entities
                        .iter()
                        .map(|e| Entity::new(&e.tag, &e.phrase))
                        .collect(),
                    dropped: 0,
                })
                .collect();
            support.utterances = golds.len();
            let prf = ner_micro_f1(&parsed, &golds)?;
            metrics(&[
                ("micro_precision", prf.precision),
                ("micro_recall", prf.recall),
                ("micro_f1", prf.f1),
            ])
        }
        Task::Sa => {
            let refs: Vec<SaRef> = read_jsonl(references)?;
            let ids: Vec<&str> = refs.iter().map(|r| r.id.as_str()).collect();
            let texts = align(preds, &ids)?;
            let parsed: Vec<Option<SentimentLabel>> = texts
                .iter()
                .map(|t| match t {
                    Some(t) => {
                        let p = parse_sentiment(t).ok();
                        if p.is_none() {
                            support.unparseable += 1;
                        }
                        p
                    }
                    None => {
                        support.missing_predictions += 1;
                        None
                    }
                })
                .collect();
            let golds: Vec<SentimentLabel> = refs.iter().map(|r| r.label).collect();
            support.utterances = golds.len();
            metrics(&[
                ("macro_f1", macro_f1(&parsed, &golds, &SentimentLabel::ALL)?),
                (
                    "accuracy",
                    accuracy(&parsed, &golds, |p, g| *p == Some(*g))?,
                ),
            ])
        }
        Task::Qa => {
            let refs: Vec<QaRef> = read_jsonl(references)?;
            let ids: Vec<&str> = refs.iter().map(|r| r.id.as_str()).collect();
            let texts = align(preds, &ids)?;
            let hyps: Vec<String> = texts
                .into_iter()
                .map(|t| {
                    t.unwrap_or_else(|| {
                        support.missing_predictions += 1;
                        String::new()
                    })
                })
                .collect();
            let answers: Vec<Vec<String>> = refs.into_iter().map(|r| r.answers).collect();
            support.utterances = answers.len();
            metrics(&[
                ("bleu4", bleu4(&hyps, &answers)?),
                ("accuracy", qa_accuracy(&hyps, &answers)?),
            ])
        }
        Task::Fsc => {
            let refs: Vec<FscRef> = read_jsonl(references)?;
            let ids: Vec<&str> = refs.iter().map(|r| r.id.as_str()).collect();
            let texts = align(preds, &ids)?;
            let parsed: Vec<DacPrediction> = texts
                .iter()
                .map(|t| match t {
                    Some(t) => {
                        let p = parse_dac(t);
                        if p.action.is_empty() && p.object.is_empty() && p.location.is_empty() {
                            support.unparseable += 1;
                        }
                        p
                    }
                    None => {
                        support.missing_predictions += 1;
                        DacPrediction::default()
                    }
                })
                .collect();
            let golds: Vec<DacPrediction> = refs
                .into_iter()
                .map(|r| DacPrediction {
                    action: r.action,
                    object: r.object,
                    location: r.location,
                })
                .collect();
            support.utterances = golds.len();
            let acc = dac_accuracy(&parsed, &golds)?;
            metrics(&[
                ("accuracy", acc.overall),
                ("action_acc", acc.action),
                ("object_acc", acc.object),
                ("location_acc", acc.location),
            ])
        }
        Task::Slurp => {
            let refs: Vec<SlurpRef> = read_jsonl(references)?;
            let ids: Vec<&str> = refs.iter().map(|r| r.id.as_str()).collect();
            let texts = align(preds, &ids)?;
            let parsed: Vec<IntentSlots> = texts
                .iter()
                .map(|t| match t {
                    Some(t) => {
                        let p = parse_intent_slots(t);
                        if p.dropped > 0 || p.scenario.is_empty() {
                            support.unparseable += 1;
                        }
                        p
                    }
                    None => {
                        support.missing_predictions += 1;
                        IntentSlots::default()
                    }
                })
                .collect();
            let golds: Vec<IntentSlots> = refs
                .into_iter()
                .map(|r| IntentSlots {
                    scenario: r.scenario,
                    action: r.action,
                    slots: r
                        .slots
                        .iter()
                        .map(|s| Slot::new(&s.slot, &s.value))
                        .collect(),
                    dropped: 0,
                })
                .collect();
            support.utterances = golds.len();
            let slu = slu_f1(&parsed, &golds)?;
            metrics(&[
                (
                    "intent_acc",
                    accuracy(&parsed, &golds, |p, g| p.intent() == g.intent())?,
                ),
                (
                    "scenario_acc",
                    accuracy(&parsed, &golds, |p, g| p.scenario == g.scenario)?,
                ),
                (
                    "action_acc",
                    accuracy(&parsed, &golds, |p, g| p.action == g.action)?,
                ),
                ("slu_f1", slu.slu_f1),
                ("span_f1", slu.span.f1),
                ("word_f1", slu.word.f1),
                ("char_f1", slu.char.f1),
            ])
        }
    };

    Ok(MetricReport {
        task,
        metrics,
        support,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(dir: &Path, name: &str, lines: &[&str]) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        path
    }

    #[test]
    fn sentiment_with_missing_prediction() {
        let dir = tempfile::tempdir().unwrap();
        let refs = file(
            dir.path(),
            "refs.jsonl",
            &[
                r#"{"id":"a","label":"positive"}"#,
                r#"{"id":"b","label":"negative"}"#,
            ],
        );
        let preds = file(
            dir.path(),
            "preds.jsonl",
            &[r#"{"id":"a","text":"Positive."}"#],
        );
        let r = evaluate_run(Task::Sa, &preds, &refs).unwrap();
        assert_eq!(r.metrics["accuracy"], 0.5);
        assert_eq!(r.support.missing_predictions, 1);
        assert_eq!(r.support.utterances, 2);
    }

    #[test]
    fn unknown_prediction_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let refs = file(
            dir.path(),
            "refs.jsonl",
            &[r#"{"id":"a","label":"positive"}"#],
        );
        let preds = file(
            dir.path(),
            "preds.jsonl",
            &[r#"{"id":"zzz","text":"positive"}"#],
        );
        assert!(matches!(
            evaluate_run(Task::Sa, &preds, &refs),
            Err(MetricsError::Alignment(_))
        ));
    }

    #[test]
    fn bad_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let refs = file(
            dir.path(),
            "refs.jsonl",
            &[r#"{"id":"a","label":"positive"}"#, "{oops"],
        );
        let preds = file(dir.path(), "preds.jsonl", &[]);
        match evaluate_run(Task::Sa, &preds, &refs) {
            Err(MetricsError::Line { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn metric_order_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let refs = file(
            dir.path(),
            "refs.jsonl",
            &[
                r#"{"id":"a","scenario":"alarm","action":"set","slots":[{"slot":"time","value":"nine am"}]}"#,
            ],
        );
        let preds = file(
            dir.path(),
            "preds.jsonl",
            &[r#"{"id":"a","text":"scenario: alarm ; action: set ; slots: time = nine am"}"#],
        );
        let r = evaluate_run(Task::Slurp, &preds, &refs).unwrap();
        let keys: Vec<&str> = r.metrics.keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            [
                "intent_acc",
                "scenario_acc",
                "action_acc",
                "slu_f1",
                "span_f1",
                "word_f1",
                "char_f1"
            ]
        );
        assert!(r.metrics.values().all(|v| *v == 1.0), "{r:?}");
    }
}
