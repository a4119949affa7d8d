//! Source dataset parsing and normalization into instruction/input/output triples.
//!
//! Two layouts are understood: Super-NaturalInstructions task files (a task
//! definition plus a list of instances with one or more gold outputs) and
//! Alpaca-style arrays of `{instruction, input, output}` records. Both are
//! normalized into [`UnifiedExample`] records; all text is NFC-normalized and
//! stripped of control characters other than `\n`.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::filter::{DropReason, DropRecord};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Superni,
    Alpaca,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Superni => f.write_str("superni"),
            Source::Alpaca => f.write_str("alpaca"),
        }
    }
}

/// How instances with several gold outputs are expanded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputPolicy {
    #[default]
    First,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInstance {
    pub id: String,
    pub input: String,
    pub output: Vec<String>,
}

/// A Super-NaturalInstructions task as found on disk, before unification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSuperNITask {
    pub task_name: String,
    pub definition: Vec<String>,
    pub instances: Vec<RawInstance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnifiedExample {
    pub id: String,
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub source: Source,
}

impl UnifiedExample {
    /// Task name encoded in a `superni/<task>/<instance>` id; empty for Alpaca.
    pub fn task_name(&self) -> &str {
        match self.source {
            Source::Superni => self.id.split('/').nth(1).unwrap_or(""),
            Source::Alpaca => "",
        }
    }
}

/// Examples produced by a unification step together with what was left out.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ingested {
    pub examples: Vec<UnifiedExample>,
    pub drops: Vec<DropRecord>,
}

impl Ingested {
    pub fn extend(&mut self, other: Ingested) {
        self.examples.extend(other.examples);
        self.drops.extend(other.drops);
    }
}

/// NFC-normalizes `text`, folds `\r\n` and `\r` to `\n` and replaces every
/// other control character with a space.
pub fn clean_text(text: &str) -> String {
    let unified = text.replace("\r\n", "\n").replace('\r', "\n");
    unified
        .nfc()
        .map(|c| if c.is_control() && c != '\n' { ' ' } else { c })
        .collect()
}

fn parse_value(document: &str) -> Result<Value> {
    serde_json::from_str(document).map_err(|e| IngestError::Parse {
        offset: byte_offset(document, e.line(), e.column()),
        message: e.to_string(),
    })
}

// serde_json reports 1-based line and byte column.
fn byte_offset(document: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = document
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(document.len())
}

fn get_any<'a>(obj: &'a Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(*k))
}

fn require<'a>(obj: &'a Map<String, Value>, keys: &[&str], ctx: &str) -> Result<&'a Value> {
    get_any(obj, keys)
        .ok_or_else(|| IngestError::Schema(format!("{ctx}: missing required key {:?}", keys[0])))
}

fn as_str<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| IngestError::Schema(format!("{ctx}: key {key:?} must be a string")))
}

fn string_list(v: &Value, key: &str, ctx: &str) -> Result<Vec<String>> {
    match v {
        Value::String(s) => Ok(vec![s.clone()]),
        Value::Array(items) => items
            .iter()
            .map(|i| as_str(i, key, ctx).map(str::to_owned))
            .collect(),
        _ => Err(IngestError::Schema(format!(
            "{ctx}: key {key:?} must be a string or list of strings"
        ))),
    }
}

fn parse_task_object(obj: &Map<String, Value>, task_name: String) -> Result<RawSuperNITask> {
    let ctx = format!("task {task_name:?}");
    let definition = string_list(
        require(obj, &["Definition", "definition"], &ctx)?,
        "Definition",
        &ctx,
    )?;
    if definition.iter().all(|d| d.trim().is_empty()) {
        return Err(IngestError::Schema(format!(
            "{ctx}: key \"Definition\" is empty"
        )));
    }
    let instances = require(obj, &["Instances", "instances"], &ctx)?
        .as_array()
        .ok_or_else(|| IngestError::Schema(format!("{ctx}: key \"Instances\" must be a list")))?;
    if instances.is_empty() {
        return Err(IngestError::Schema(format!(
            "{ctx}: key \"Instances\" is empty"
        )));
    }

    let instances = instances
        .iter()
        .enumerate()
        .map(|(idx, inst)| {
            let ictx = format!("{ctx} instance {idx}");
            let inst = inst
                .as_object()
                .ok_or_else(|| IngestError::Schema(format!("{ictx}: must be an object")))?;
            Ok(RawInstance {
                id: as_str(require(inst, &["id"], &ictx)?, "id", &ictx)?.to_owned(),
                input: as_str(require(inst, &["input"], &ictx)?, "input", &ictx)?.to_owned(),
                output: string_list(require(inst, &["output"], &ictx)?, "output", &ictx)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RawSuperNITask {
        task_name,
        definition,
        instances,
    })
}

/// Parses a Super-NaturalInstructions task file.
///
/// Task files do not carry their own name, so `task_name` (usually the file
/// stem) is used unless the object has a `Task_Name`/`task_name` key. A top
/// level array is read as several task objects.
pub fn parse_superni(document: &str, task_name: &str) -> Result<Vec<RawSuperNITask>> {
    let name_of = |obj: &Map<String, Value>, fallback: String| {
        get_any(obj, &["Task_Name", "task_name"])
            .and_then(Value::as_str)
            .map(str::to_owned)
            .unwrap_or(fallback)
    };
    match parse_value(document)? {
        Value::Object(obj) => {
            let name = name_of(&obj, task_name.to_owned());
            Ok(vec![parse_task_object(&obj, name)?])
        }
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(idx, item)| {
                let obj = item.as_object().ok_or_else(|| {
                    IngestError::Schema(format!("task element {idx}: must be an object"))
                })?;
                let name = name_of(obj, format!("{task_name}_{idx}"));
                parse_task_object(obj, name)
            })
            .collect(),
        _ => Err(IngestError::Schema(
            "Super-NaturalInstructions document must be an object or list of objects".into(),
        )),
    }
}

/// Converts a parsed task into unified examples.
///
/// The instruction is the definition paragraphs joined by a blank line.
/// Empty gold outputs are dropped with [`DropReason::EmptyOutput`].
pub fn unify_superni(task: &RawSuperNITask, policy: OutputPolicy) -> Ingested {
    let instruction = clean_text(
        &task
            .definition
            .iter()
            .map(|d| d.trim())
            .filter(|d| !d.is_empty())
            .collect::<Vec<_>>()
            .join("\n\n"),
    );
    let mut out = Ingested::default();
    for inst in &task.instances {
        let base_id = format!("superni/{}/{}", task.task_name, inst.id);
        let outputs: Vec<String> = inst
            .output
            .iter()
            .map(|o| clean_text(o))
            .filter(|o| !o.trim().is_empty())
            .collect();
        if outputs.is_empty() {
            out.drops.push(DropRecord::new(
                &base_id,
                DropReason::EmptyOutput,
                "instance has no non-empty output",
            ));
            continue;
        }
        let take = match policy {
            OutputPolicy::First => 1,
            OutputPolicy::All => outputs.len(),
        };
        let input = clean_text(&inst.input);
        for (k, output) in outputs.into_iter().take(take).enumerate() {
            let id = if k == 0 {
                base_id.clone()
            } else {
                format!("{base_id}#o{k}")
            };
            out.examples.push(UnifiedExample {
                id,
                instruction: instruction.clone(),
                input: input.clone(),
                output,
                source: Source::Superni,
            });
        }
    }
    out
}

/// Parses an Alpaca-style JSON array. Records with an empty output are
/// dropped; a missing `instruction` or `output` key is a schema error.
pub fn parse_alpaca(document: &str) -> Result<Ingested> {
    let items = match parse_value(document)? {
        Value::Array(items) => items,
        _ => {
            return Err(IngestError::Schema(
                "Alpaca document must be a JSON array".into(),
            ))
        }
    };
    let mut out = Ingested::default();
    for (idx, item) in items.iter().enumerate() {
        let ctx = format!("element {idx}");
        let obj = item
            .as_object()
            .ok_or_else(|| IngestError::Schema(format!("{ctx}: must be an object")))?;
        let instruction = as_str(require(obj, &["instruction"], &ctx)?, "instruction", &ctx)?;
        let output = as_str(require(obj, &["output"], &ctx)?, "output", &ctx)?;
        let input = match obj.get("input") {
            None | Some(Value::Null) => "",
            Some(v) => as_str(v, "input", &ctx)?,
        };
        let id = format!("alpaca/{idx}");
        let instruction = clean_text(instruction);
        if instruction.trim().is_empty() {
            return Err(IngestError::Schema(format!(
                "{ctx}: key \"instruction\" is empty"
            )));
        }
        let output = clean_text(output);
        if output.trim().is_empty() {
            out.drops.push(DropRecord::new(
                &id,
                DropReason::EmptyOutput,
                "record output is empty",
            ));
            continue;
        }
        out.examples.push(UnifiedExample {
            id,
            instruction,
            input: clean_text(input),
            output,
            source: Source::Alpaca,
        });
    }
    Ok(out)
}

pub fn check_unique_ids(examples: &[UnifiedExample]) -> Result<()> {
    let mut seen = HashSet::with_capacity(examples.len());
    for ex in examples {
        if !seen.insert(ex.id.as_str()) {
            return Err(IngestError::DuplicateId(ex.id.clone()));
        }
    }
    Ok(())
}

pub fn write_examples<W: Write>(examples: &[UnifiedExample], mut writer: W) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut writer, ex).map_err(std::io::Error::other)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_examples<R: BufRead>(reader: R) -> Result<Vec<UnifiedExample>> {
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: UnifiedExample = serde_json::from_str(&line).map_err(|e| IngestError::Line {
            line: idx + 1,
            message: e.to_string(),
        })?;
        examples.push(ex);
    }
    check_unique_ids(&examples)?;
    Ok(examples)
}
