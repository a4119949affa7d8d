//! Pipeline configuration and one function per command. Each command reads
//! and writes JSONL stage files so any stage can be rerun or audited alone.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio;
use crate::conditioning::{self, ByteTokenizer, Tokenizer};
use crate::corpus::{self, BuildOptions, BuildOutcome, CorpusStats, ManifestEntry};
use crate::filter::{self, DropRecord, FilterRuleSet};
use crate::ingest::{self, Ingested, OutputPolicy, UnifiedExample};
use crate::metrics::{self, MetricReport, Task};
use crate::tts::{
    self, BackendKind, MockBackend, RemoteBackend, RemoteConfig, RetryPolicy, SynthesisBackend,
    VoiceCatalog,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Ingest,
    Filter,
    Synth,
    Augment,
    Subsample,
    Expand,
    Batches,
    Stats,
    Score,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit enum serializes");
        f.write_str(s.as_str().unwrap_or("unknown"))
    }
}

/// A failed command, tagged with the stage it failed in and a short
/// machine-readable kind (`config`, `io`, `parse`, `backend`, ...).
#[derive(Debug, Error, Serialize)]
#[error("{stage} failed ({kind}): {message}")]
pub struct CliError {
    pub stage: Stage,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(stage: Stage, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            stage,
            kind,
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

fn io(stage: Stage, path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::new(stage, "io", format!("{}: {e}", path.display()))
}

fn corpus_err(stage: Stage) -> impl FnOnce(corpus::CorpusError) -> CliError {
    move |e| {
        use corpus::CorpusError::*;
        let kind = match &e {
            Line { .. } => "parse",
            Validation(_) => "validation",
            Argument(_) => "argument",
            Audio { .. } => "audio",
            Io { .. } | Stream(_) => "io",
        };
        CliError::new(stage, kind, e.to_string())
    }
}

fn ingest_err(stage: Stage) -> impl FnOnce(ingest::IngestError) -> CliError {
    move |e| {
        use ingest::IngestError::*;
        let kind = match &e {
            Parse { .. } | Line { .. } => "parse",
            Schema(_) => "schema",
            DuplicateId(_) => "validation",
            Io(_) => "io",
        };
        CliError::new(stage, kind, e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Superni,
    Alpaca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub path: PathBuf,
}

/// Fine-tuning settings carried into exported batch metadata for the
/// trainer. Nothing here is consumed by this tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerMetadata {
    pub learning_rate_search: Vec<f64>,
    pub learning_rate: f64,
    pub dropout: f64,
    pub gradient_accumulation_steps: usize,
    pub checkpoint_every_steps: usize,
    pub batch_size: usize,
    pub downstream_batch_sizes: Vec<usize>,
}

impl Default for TrainerMetadata {
    fn default() -> Self {
        Self {
            learning_rate_search: vec![1e-5, 3e-5, 1e-4],
            learning_rate: 1e-4,
            dropout: 0.1,
            gradient_accumulation_steps: 4,
            checkpoint_every_steps: 5000,
            batch_size: conditioning::DEFAULT_BATCH_SIZE,
            downstream_batch_sizes: vec![4, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sources: Vec<SourceSpec>,
    pub out_dir: PathBuf,
    /// Voice catalog JSON; the built-in catalog when absent.
    pub catalog: Option<PathBuf>,
    pub paraphrases: Option<PathBuf>,
    pub filter: FilterRuleSet,
    pub backend: BackendKind,
    pub seed: u64,
    /// Concurrent synthesis workers.
    pub parallelism: usize,
    pub max_requests_per_second: f64,
    pub retry: RetryPolicy,
    pub batch_size: usize,
    pub output_policy: OutputPolicy,
    pub speak_instruction_when_empty: bool,
    pub augment_factors: Vec<f64>,
    pub trainer: TrainerMetadata,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sources: Vec::new(),
            out_dir: PathBuf::from("out"),
            catalog: None,
            paraphrases: None,
            filter: FilterRuleSet::default(),
            backend: BackendKind::Mock,
            seed: 42,
            parallelism: 4,
            max_requests_per_second: 10.0,
            retry: RetryPolicy::default(),
            batch_size: conditioning::DEFAULT_BATCH_SIZE,
            output_policy: OutputPolicy::First,
            speak_instruction_when_empty: false,
            augment_factors: vec![0.95, 1.05],
            trainer: TrainerMetadata::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| CliError::new(Stage::Config, "config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io(Stage::Config, path))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::new(Stage::Config, "config", m));
        self.filter
            .validate()
            .map_err(|e| CliError::new(Stage::Config, "config", e.to_string()))?;
        self.retry
            .validate()
            .map_err(|e| CliError::new(Stage::Config, "config", e.to_string()))?;
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if !(self.max_requests_per_second.is_finite() && self.max_requests_per_second > 0.0) {
            return bad("max_requests_per_second must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        for &f in &self.augment_factors {
            if !(audio::MIN_SPEED_FACTOR..=audio::MAX_SPEED_FACTOR).contains(&f) {
                return bad(format!(
                    "augment factor {f} outside [{}, {}]",
                    audio::MIN_SPEED_FACTOR,
                    audio::MAX_SPEED_FACTOR
                ));
            }
        }
        Ok(())
    }

    pub fn load_catalog(&self) -> Result<VoiceCatalog> {
        match &self.catalog {
            None => Ok(VoiceCatalog::default_catalog()),
            Some(p) => VoiceCatalog::load(p).map_err(|e| {
                CliError::new(Stage::Config, "config", format!("{}: {e}", p.display()))
            }),
        }
    }

    pub fn make_backend(&self) -> Result<Box<dyn SynthesisBackend>> {
        match self.backend {
            BackendKind::Mock => Ok(Box::new(MockBackend)),
            BackendKind::Remote => {
                let cfg_err =
                    |e: tts::TtsError| CliError::new(Stage::Synth, "config", e.to_string());
                let mut cfg = RemoteConfig::from_env().map_err(cfg_err)?;
                cfg.retry = self.retry.clone();
                cfg.max_requests_per_second = self.max_requests_per_second;
                Ok(Box::new(RemoteBackend::new(cfg).map_err(cfg_err)?))
            }
        }
    }
}

/// `kept.jsonl` -> `kept.drops.jsonl`.
pub fn drops_path(path: &Path) -> PathBuf {
    path.with_extension("drops.jsonl")
}

fn create(stage: Stage, path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io(stage, parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io(stage, path))?))
}

fn write_jsonl<T: Serialize>(stage: Stage, items: &[T], path: &Path) -> Result<()> {
    let mut w = create(stage, path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)
            .map_err(|e| CliError::new(stage, "io", e.to_string()))?;
        w.write_all(b"\n").map_err(io(stage, path))?;
    }
    w.flush().map_err(io(stage, path))
}

pub fn read_drops(path: &Path) -> Result<Vec<DropRecord>> {
    let text = std::fs::read_to_string(path).map_err(io(Stage::Stats, path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                CliError::new(
                    Stage::Stats,
                    "parse",
                    format!("{} line {}: {e}", path.display(), i + 1),
                )
            })
        })
        .collect()
}

fn read_unified(stage: Stage, path: &Path) -> Result<Vec<UnifiedExample>> {
    let file = File::open(path).map_err(io(stage, path))?;
    ingest::read_examples(BufReader::new(file)).map_err(ingest_err(stage))
}

fn read_manifest(stage: Stage, path: &Path) -> Result<Vec<ManifestEntry>> {
    corpus::read_manifest_file(path).map_err(corpus_err(stage))
}

fn dir_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Audio paths are relative to the manifest, so a derived manifest has to be
/// written next to the one it came from.
fn require_same_dir(stage: Stage, input: &Path, output: &Path) -> Result<()> {
    let canon = |p: &Path| std::fs::canonicalize(dir_of(p)).map_err(io(stage, p));
    if canon(input)? != canon(output)? {
        return Err(CliError::new(
            stage,
            "argument",
            format!(
                "{} must be in the same directory as {}",
                output.display(),
                input.display()
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageSummary {
    pub written: usize,
    pub dropped: usize,
}

/// Reads every configured source and writes unified examples to `out`, plus
/// the drops next to it.
pub fn cmd_ingest(config: &PipelineConfig, out: &Path) -> Result<StageSummary> {
    let stage = Stage::Ingest;
    if config.sources.is_empty() {
        return Err(CliError::new(stage, "config", "no sources configured"));
    }
    let mut all = Ingested::default();
    for src in &config.sources {
        let text = std::fs::read_to_string(&src.path).map_err(io(stage, &src.path))?;
        let with_path = |e: ingest::IngestError| {
            let mut err = ingest_err(stage)(e);
            err.message = format!("{}: {}", src.path.display(), err.message);
            err
        };
        match src.kind {
            SourceKind::Superni => {
                let stem = src
                    .path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("task");
                for task in ingest::parse_superni(&text, stem).map_err(with_path)? {
                    all.extend(ingest::unify_superni(&task, config.output_policy));
                }
            }
            SourceKind::Alpaca => all.extend(ingest::parse_alpaca(&text).map_err(with_path)?),
        }
    }
    ingest::check_unique_ids(&all.examples).map_err(ingest_err(stage))?;
    let w = create(stage, out)?;
    ingest::write_examples(&all.examples, w).map_err(ingest_err(stage))?;
    write_jsonl(stage, &all.drops, &drops_path(out))?;
    log::info!(
        "ingested {} examples, {} dropped",
        all.examples.len(),
        all.drops.len()
    );
    Ok(StageSummary {
        written: all.examples.len(),
        dropped: all.drops.len(),
    })
}

pub fn cmd_filter(config: &PipelineConfig, unified: &Path, out: &Path) -> Result<StageSummary> {
    let stage = Stage::Filter;
    let examples = read_unified(stage, unified)?;
    let (kept, drops) = filter::filter_corpus(&examples, &config.filter);
    let w = create(stage, out)?;
    ingest::write_examples(&kept, w).map_err(ingest_err(stage))?;
    write_jsonl(stage, &drops, &drops_path(out))?;
    log::info!("kept {}, dropped {}", kept.len(), drops.len());
    Ok(StageSummary {
        written: kept.len(),
        dropped: drops.len(),
    })
}

/// Synthesizes every kept example into `out_dir`, writing WAVs,
/// `manifest.jsonl` and `manifest.drops.jsonl`.
///
/// Voices are drawn in input order from a generator seeded with
/// `config.seed`, so the assignment does not depend on scheduling. WAVs
/// already on disk are reused, which makes an interrupted run resumable.
pub fn cmd_synth(
    config: &PipelineConfig,
    backend: &dyn SynthesisBackend,
    kept: &Path,
    out_dir: &Path,
) -> Result<StageSummary> {
    let stage = Stage::Synth;
    let examples = read_unified(stage, kept)?;
    let catalog = config.load_catalog()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let voices = examples
        .iter()
        .map(|_| tts::sample_voice(&catalog, &mut rng))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::new(stage, "config", e.to_string()))?;

    std::fs::create_dir_all(out_dir).map_err(io(stage, out_dir))?;
    let options = BuildOptions {
        speak_instruction_when_empty: config.speak_instruction_when_empty,
        reuse_existing: true,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| CliError::new(stage, "config", e.to_string()))?;
    let outcomes = pool.install(|| {
        examples
            .par_iter()
            .zip(voices.par_iter())
            .map(|(ex, voice)| corpus::build_instance(ex, voice, backend, out_dir, options))
            .collect::<std::result::Result<Vec<_>, _>>()
    });
    let outcomes = outcomes.map_err(corpus_err(stage))?;

    let mut entries = Vec::new();
    let mut drops = Vec::new();
    for outcome in outcomes {
        match outcome {
            BuildOutcome::Built(e) => entries.push(e),
            BuildOutcome::Dropped(d) => {
                log::warn!("{}: {} ({})", d.example_id, d.reason, d.detail);
                drops.push(d)
            }
        }
    }
    let manifest = out_dir.join("manifest.jsonl");
    corpus::write_manifest_file(&entries, &manifest).map_err(corpus_err(stage))?;
    write_jsonl(stage, &drops, &drops_path(&manifest))?;
    Ok(StageSummary {
        written: entries.len(),
        dropped: drops.len(),
    })
}

/// Id suffix for a speed-perturbed copy, e.g. `#sp0.95`.
pub fn speed_suffix(factor: f64) -> String {
    format!("#sp{factor}")
}

/// Writes the original entries followed, for each, by one perturbed copy per
/// factor. Each copy gets its own WAV file.
pub fn cmd_augment(manifest: &Path, factors: &[f64], out: &Path) -> Result<StageSummary> {
    let stage = Stage::Augment;
    require_same_dir(stage, manifest, out)?;
    for &f in factors {
        if !(audio::MIN_SPEED_FACTOR..=audio::MAX_SPEED_FACTOR).contains(&f) {
            return Err(CliError::new(
                stage,
                "argument",
                format!("factor {f} out of range"),
            ));
        }
    }
    let dir = dir_of(manifest);
    let entries = read_manifest(stage, manifest)?;
    let audio_err = |path: &Path, e: audio::AudioError| {
        CliError::new(stage, "audio", format!("{}: {e}", path.display()))
    };
    let mut out_entries = Vec::with_capacity(entries.len() * (1 + factors.len()));
    for e in &entries {
        out_entries.push(e.clone());
        let src = dir.join(&e.audio_path);
        let clip = audio::read_wav(&src).map_err(|err| audio_err(&src, err))?;
        for &f in factors {
            let id = format!("{}{}", e.id, speed_suffix(f));
            let rel = corpus::audio_rel_path(&id);
            let dst = dir.join(&rel);
            let perturbed = audio::speed_perturb(&clip, f).map_err(|err| audio_err(&src, err))?;
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent).map_err(io(stage, parent))?;
            }
            audio::write_wav(&perturbed, &dst).map_err(|err| audio_err(&dst, err))?;
            out_entries.push(ManifestEntry {
                id,
                audio_path: rel,
                duration_s: perturbed.duration_s(),
                ..e.clone()
            });
        }
    }
    corpus::check_unique(&out_entries).map_err(corpus_err(stage))?;
    corpus::write_manifest_file(&out_entries, out).map_err(corpus_err(stage))?;
    Ok(StageSummary {
        written: out_entries.len(),
        dropped: 0,
    })
}

pub fn cmd_subsample(
    manifest: &Path,
    fraction: f64,
    seed: u64,
    out: &Path,
) -> Result<StageSummary> {
    let stage = Stage::Subsample;
    require_same_dir(stage, manifest, out)?;
    let entries = read_manifest(stage, manifest)?;
    let picked = corpus::subsample(&entries, fraction, seed).map_err(corpus_err(stage))?;
    corpus::write_manifest_file(&picked, out).map_err(corpus_err(stage))?;
    Ok(StageSummary {
        written: picked.len(),
        dropped: entries.len() - picked.len(),
    })
}

pub fn cmd_expand(manifest: &Path, paraphrases: &Path, out: &Path) -> Result<StageSummary> {
    let stage = Stage::Expand;
    require_same_dir(stage, manifest, out)?;
    let entries = read_manifest(stage, manifest)?;
    let map = corpus::load_paraphrases(paraphrases).map_err(corpus_err(stage))?;
    let expanded = corpus::expand_instructions(&entries, &map);
    corpus::check_unique(&expanded).map_err(corpus_err(stage))?;
    corpus::write_manifest_file(&expanded, out).map_err(corpus_err(stage))?;
    Ok(StageSummary {
        written: expanded.len(),
        dropped: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchMetadata {
    pub manifest: PathBuf,
    pub batches: usize,
    pub batch_size: usize,
    pub instances: usize,
    pub tokenizer: &'static str,
    pub vocab_size: u32,
    pub pad_id: u32,
    pub bos_id: u32,
    pub sep_id: u32,
    pub eos_id: u32,
    pub trainer: TrainerMetadata,
}

/// Writes collated batches to `out` and a `<out>.meta.json` sidecar with the
/// tokenizer ids and trainer settings.
pub fn cmd_batches(config: &PipelineConfig, manifest: &Path, out: &Path) -> Result<StageSummary> {
    let stage = Stage::Batches;
    let entries = read_manifest(stage, manifest)?;
    let tok = ByteTokenizer;
    let w = create(stage, out)?;
    let batches = conditioning::export_batches(&entries, &tok, config.batch_size, w)
        .map_err(|e| CliError::new(stage, "argument", e.to_string()))?;
    let meta = BatchMetadata {
        manifest: manifest.to_path_buf(),
        batches,
        batch_size: config.batch_size,
        instances: entries.len(),
        tokenizer: "byte",
        vocab_size: ByteTokenizer::VOCAB_SIZE,
        pad_id: tok.pad(),
        bos_id: tok.bos(),
        sep_id: tok.sep(),
        eos_id: tok.eos(),
        trainer: config.trainer.clone(),
    };
    let meta_path = out.with_extension("meta.json");
    let mut w = create(stage, &meta_path)?;
    serde_json::to_writer_pretty(&mut w, &meta)
        .map_err(|e| CliError::new(stage, "io", e.to_string()))?;
    w.write_all(b"\n").map_err(io(stage, &meta_path))?;
    w.flush().map_err(io(stage, &meta_path))?;
    Ok(StageSummary {
        written: batches,
        dropped: 0,
    })
}

/// Counts for `manifest`. Drop records are read from `drops` when given,
/// otherwise from the sibling `.drops.jsonl` file if it exists.
pub fn cmd_stats(manifest: &Path, drops: Option<&Path>) -> Result<CorpusStats> {
    let entries = read_manifest(Stage::Stats, manifest)?;
    let default_drops = drops_path(manifest);
    let drops = match drops {
        Some(p) => read_drops(p)?,
        None if default_drops.is_file() => read_drops(&default_drops)?,
        None => Vec::new(),
    };
    Ok(corpus::corpus_stats(&entries, &drops))
}

pub fn cmd_score(task: Task, predictions: &Path, references: &Path) -> Result<MetricReport> {
    metrics::evaluate_run(task, predictions, references).map_err(|e| {
        use metrics::MetricsError::*;
        let kind = match &e {
            Alignment(_) => "alignment",
            Argument(_) => "argument",
            Line { .. } => "parse",
            Io { .. } => "io",
        };
        CliError::new(Stage::Score, kind, e.to_string())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_unknown_keys() {
        let cfg = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.seed, 42);
        cfg.validate().unwrap();

        let err = PipelineConfig::from_json(r#"{"bach_size": 8}"#).unwrap_err();
        assert_eq!(err.stage, Stage::Config);
        assert!(err.message.contains("bach_size"), "{err}");

        let err = PipelineConfig::from_json(r#"{"filter": {"max_input_chars": 10, "nope": 1}}"#)
            .unwrap_err();
        assert!(err.message.contains("nope"), "{err}");
    }

    #[test]
    fn validation_rejects_bad_values() {
        for json in [
            r#"{"parallelism": 0}"#,
            r#"{"batch_size": 0}"#,
            r#"{"augment_factors": [3.0]}"#,
            r#"{"max_requests_per_second": 0}"#,
            r#"{"retry": {"max_attempts": 0}}"#,
            r#"{"filter": {"special_char_ratio_max": 2.0}}"#,
        ] {
            let cfg = PipelineConfig::from_json(json).unwrap();
            assert!(cfg.validate().is_err(), "{json}");
        }
    }

    #[test]
    fn trainer_defaults_are_exported() {
        let v = serde_json::to_value(TrainerMetadata::default()).unwrap();
        assert_eq!(
            v["learning_rate_search"],
            serde_json::json!([1e-5, 3e-5, 1e-4])
        );
        assert_eq!(v["batch_size"], 16);
    }

    #[test]
    fn error_json_shape() {
        let e = CliError::new(Stage::Synth, "config", "missing key");
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"]["stage"], "synth");
        assert_eq!(v["error"]["kind"], "config");
        assert_eq!(v["error"]["message"], "missing key");
    }

    #[test]
    fn suffixes() {
        assert_eq!(speed_suffix(0.95), "#sp0.95");
        assert_eq!(speed_suffix(1.05), "#sp1.05");
        assert_eq!(
            drops_path(Path::new("a/kept.jsonl")),
            Path::new("a/kept.drops.jsonl")
        );
    }

    #[test]
    fn derived_manifest_must_share_directory() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = a.path().join("manifest.jsonl");
        std::fs::write(&m, "").unwrap();
        let err = cmd_subsample(&m, 0.5, 1, &b.path().join("out.jsonl")).unwrap_err();
        assert_eq!(err.kind, "argument");
    }
}
