//! Corpus assembly: synthesized instances, manifests, statistics, seeded
//! subsampling and instruction-paraphrase expansion.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioClip};
use crate::filter::{DropReason, DropRecord};
use crate::ingest::{Source, UnifiedExample};
use crate::tts::{self, SynthesisBackend, SynthesisRequest, VoiceSpec};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("manifest validation: {0}")]
    Validation(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("audio {path}: {source}")]
    Audio {
        path: PathBuf,
        source: audio::AudioError,
    },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntrySource {
    Superni,
    Alpaca,
    Downstream,
}

impl From<Source> for EntrySource {
    fn from(s: Source) -> Self {
        match s {
            Source::Superni => EntrySource::Superni,
            Source::Alpaca => EntrySource::Alpaca,
        }
    }
}

impl fmt::Display for EntrySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntrySource::Superni => "superni",
            EntrySource::Alpaca => "alpaca",
            EntrySource::Downstream => "downstream",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

/// One instruction-speech training instance. `audio_path` is relative to the
/// directory holding the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub audio_path: String,
    pub instruction: String,
    pub target: String,
    pub duration_s: f64,
    pub voice: VoiceSpec,
    pub source: EntrySource,
    pub split: Split,
}

impl ManifestEntry {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.audio_path.is_empty() || Path::new(&self.audio_path).is_absolute() {
            return Err(format!("audio_path {:?} must be relative", self.audio_path));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(format!("duration_s {} must be positive", self.duration_s));
        }
        Ok(())
    }
}

/// Maps an example id to a relative WAV path, keeping `/` as directory
/// separators and replacing anything unusual in a file name.
pub fn audio_rel_path(id: &str) -> String {
    let parts: Vec<String> = id
        .split('/')
        .map(|part| {
            let cleaned: String = part
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || "._-#".contains(c) {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            if cleaned.is_empty() || cleaned.chars().all(|c| c == '.') {
                "_".repeat(cleaned.len().max(1))
            } else {
                cleaned
            }
        })
        .collect();
    format!("{}.wav", parts.join("/"))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildOptions {
    /// Synthesize the instruction when the example has no input, instead of
    /// dropping it.
    pub speak_instruction_when_empty: bool,
    /// Reuse a WAV already on disk when it matches the expected length.
    pub reuse_existing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BuildOutcome {
    Built(ManifestEntry),
    Dropped(DropRecord),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn existing_clip(
    path: &Path,
    backend: &dyn SynthesisBackend,
    request: &SynthesisRequest,
) -> Option<AudioClip> {
    if !path.is_file() {
        return None;
    }
    let clip = audio::read_wav(path).ok()?;
    let rate_ok = clip.sample_rate() == audio::TARGET_SAMPLE_RATE && !clip.is_empty();
    let len_ok = backend
        .expected_samples(request)
        .is_none_or(|n| n == clip.len());
    (rate_ok && len_ok).then_some(clip)
}

/// Synthesizes `example.input` with `voice` and writes `out_dir/<id>.wav`.
///
/// Examples without input and backend failures become drop records; failing
/// to write the WAV is an error.
pub fn build_instance(
    example: &UnifiedExample,
    voice: &VoiceSpec,
    backend: &dyn SynthesisBackend,
    out_dir: &Path,
    options: BuildOptions,
) -> Result<BuildOutcome> {
    let text = if !example.input.trim().is_empty() {
        example.input.as_str()
    } else if options.speak_instruction_when_empty {
        example.instruction.as_str()
    } else {
        return Ok(BuildOutcome::Dropped(DropRecord::new(
            &example.id,
            DropReason::EmptyInput,
            "example has no input text to synthesize",
        )));
    };

    let rel = audio_rel_path(&example.id);
    let wav_path = out_dir.join(&rel);
    let request = SynthesisRequest::new(text, voice.clone());

    let clip = match options
        .reuse_existing
        .then(|| existing_clip(&wav_path, backend, &request))
        .flatten()
    {
        Some(clip) => clip,
        None => {
            let result = match tts::synthesize(backend, &request) {
                Ok(r) => r,
                Err(e) => {
                    return Ok(BuildOutcome::Dropped(DropRecord::new(
                        &example.id,
                        DropReason::SynthesisFailed,
                        e.to_string(),
                    )))
                }
            };
            if let Some(parent) = wav_path.parent() {
                std::fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            let bytes = audio::encode_wav(&result.clip).map_err(|source| CorpusError::Audio {
                path: wav_path.clone(),
                source,
            })?;
            std::fs::write(&wav_path, bytes).map_err(io_err(&wav_path))?;
            result.clip
        }
    };

    Ok(BuildOutcome::Built(ManifestEntry {
        id: example.id.clone(),
        audio_path: rel,
        instruction: example.instruction.clone(),
        target: example.output.clone(),
        duration_s: clip.duration_s(),
        voice: voice.clone(),
        source: example.source.into(),
        split: Split::Train,
    }))
}

pub fn check_unique(entries: &[ManifestEntry]) -> Result<()> {
    let mut seen = HashSet::with_capacity(entries.len());
    for e in entries {
        if !seen.insert(e.id.as_str()) {
            return Err(CorpusError::Validation(format!("duplicate id {:?}", e.id)));
        }
    }
    Ok(())
}

pub fn write_manifest<W: Write>(entries: &[ManifestEntry], mut writer: W) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut writer, e).map_err(std::io::Error::other)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            line: idx + 1,
            message: e.to_string(),
        })?;
        entry.validate().map_err(|message| CorpusError::Line {
            line: idx + 1,
            message,
        })?;
        entries.push(entry);
    }
    check_unique(&entries)?;
    Ok(entries)
}

pub fn write_manifest_file(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    write_manifest(entries, std::io::BufWriter::new(file))
}

pub fn read_manifest_file(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_manifest(std::io::BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_instances: usize,
    pub per_source: BTreeMap<String, usize>,
    pub per_locale: BTreeMap<String, usize>,
    pub per_gender: BTreeMap<String, usize>,
    pub distinct_instructions: usize,
    pub distinct_audio: usize,
    pub total_duration_s: f64,
    pub dropped: BTreeMap<String, usize>,
}

pub fn corpus_stats(entries: &[ManifestEntry], drops: &[DropRecord]) -> CorpusStats {
    let mut per_source: BTreeMap<String, usize> = ["superni", "alpaca", "downstream"]
        .iter()
        .map(|s| (s.to_string(), 0))
        .collect();
    let mut per_gender: BTreeMap<String, usize> = ["female", "male"]
        .iter()
        .map(|s| (s.to_string(), 0))
        .collect();
    let mut per_locale = BTreeMap::new();
    for e in entries {
        *per_source.entry(e.source.to_string()).or_default() += 1;
        *per_gender.entry(e.voice.gender.to_string()).or_default() += 1;
        *per_locale.entry(e.voice.locale.to_string()).or_default() += 1;
    }
    let mut dropped = BTreeMap::new();
    for d in drops {
        *dropped.entry(d.reason.to_string()).or_default() += 1;
    }
    CorpusStats {
        total_instances: entries.len(),
        per_source,
        per_locale,
        per_gender,
        distinct_instructions: entries
            .iter()
            .map(|e| e.instruction.as_str())
            .collect::<BTreeSet<_>>()
            .len(),
        distinct_audio: entries
            .iter()
            .map(|e| e.audio_path.as_str())
            .collect::<BTreeSet<_>>()
            .len(),
        total_duration_s: entries.iter().map(|e| e.duration_s).sum(),
        dropped,
    }
}

/// Seeded uniform sample without replacement of `max(1, round(fraction * n))`
/// entries, returned in their original order.
pub fn subsample(
    entries: &[ManifestEntry],
    fraction: f64,
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    if entries.is_empty() {
        return Err(CorpusError::Argument(
            "cannot subsample an empty manifest".into(),
        ));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::Argument(format!(
            "fraction {fraction} must lie in (0, 1]"
        )));
    }
    if fraction == 1.0 {
        return Ok(entries.to_vec());
    }
    let n = entries.len();
    let k = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| entries[i].clone()).collect())
}

/// Instruction text to alternative phrasings of it.
pub type ParaphraseMap = BTreeMap<String, Vec<String>>;

pub fn load_paraphrases(path: &Path) -> Result<ParaphraseMap> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CorpusError::Line {
        line: e.line(),
        message: format!("paraphrase map {}: {e}", path.display()),
    })
}

/// Adds one copy of each entry per paraphrase of its instruction. Copies share
/// the audio file and target; ids get a `#p<k>` suffix, `k` from 1.
pub fn expand_instructions(
    entries: &[ManifestEntry],
    paraphrases: &ParaphraseMap,
) -> Vec<ManifestEntry> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        out.push(e.clone());
        if let Some(variants) = paraphrases.get(&e.instruction) {
            for (k, p) in variants.iter().enumerate() {
                out.push(ManifestEntry {
                    id: format!("{}#p{}", e.id, k + 1),
                    instruction: p.clone(),
                    ..e.clone()
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tts::{Gender, MockBackend};
    use proptest::prelude::*;

    fn voice() -> VoiceSpec {
        VoiceSpec::new(Gender::Female, "en-GB", "en-GB-SoniaNeural").unwrap()
    }

    pub(crate) fn entry(id: &str, source: EntrySource) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            audio_path: audio_rel_path(id),
            instruction: format!("instruction for {id}"),
            target: "target".into(),
            duration_s: 0.6,
            voice: voice(),
            source,
            split: Split::Train,
        }
    }

    fn example(id: &str, input: &str) -> UnifiedExample {
        UnifiedExample {
            id: id.into(),
            instruction: "Classify.".into(),
            input: input.into(),
            output: "positive".into(),
            source: Source::Superni,
        }
    }

    #[test]
    fn rel_paths() {
        assert_eq!(
            audio_rel_path("superni/task1_x/task1-7"),
            "superni/task1_x/task1-7.wav"
        );
        assert_eq!(audio_rel_path("alpaca/3#p2"), "alpaca/3#p2.wav");
        assert_eq!(audio_rel_path("a/../b c"), "a/__/b_c.wav");
        assert_eq!(audio_rel_path("/x"), "_/x.wav");
    }

    #[test]
    fn build_instance_mock() {
        let dir = tempfile::tempdir().unwrap();
        let ex = example("superni/t/1", "0123456789");
        let opts = BuildOptions::default();
        let BuildOutcome::Built(e) =
            build_instance(&ex, &voice(), &MockBackend, dir.path(), opts).unwrap()
        else {
            panic!("expected entry")
        };
        assert_eq!(e.duration_s, 0.6);
        assert_eq!(e.instruction, "Classify.");
        assert_eq!(e.target, "positive");
        assert_eq!(e.source, EntrySource::Superni);
        let first = std::fs::read(dir.path().join(&e.audio_path)).unwrap();

        let again = build_instance(&ex, &voice(), &MockBackend, dir.path(), opts).unwrap();
        assert_eq!(again, BuildOutcome::Built(e.clone()));
        assert_eq!(
            std::fs::read(dir.path().join(&e.audio_path)).unwrap(),
            first
        );
    }

    #[test]
    fn build_instance_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let ex = example("alpaca/0", "");
        let out = build_instance(
            &ex,
            &voice(),
            &MockBackend,
            dir.path(),
            BuildOptions::default(),
        )
        .unwrap();
        assert!(matches!(out, BuildOutcome::Dropped(ref d) if d.reason == DropReason::EmptyInput));

        let opts = BuildOptions {
            speak_instruction_when_empty: true,
            ..Default::default()
        };
        let BuildOutcome::Built(e) =
            build_instance(&ex, &voice(), &MockBackend, dir.path(), opts).unwrap()
        else {
            panic!("expected entry")
        };
        assert!((e.duration_s - 0.06 * "Classify.".len() as f64).abs() < 1e-9);
    }

    #[test]
    fn build_instance_unwritable_dir() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let ex = example("superni/t/1", "hello");
        let err = build_instance(
            &ex,
            &voice(),
            &MockBackend,
            &blocker,
            BuildOptions::default(),
        );
        assert!(matches!(err, Err(CorpusError::Io { .. })), "{err:?}");
    }

    #[test]
    fn reuse_checks_length() {
        let dir = tempfile::tempdir().unwrap();
        let ex = example("alpaca/1", "abc");
        let path = dir.path().join(audio_rel_path(&ex.id));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        // wrong length on disk gets replaced
        audio::write_wav(&AudioClip::new(16_000, vec![0.0; 10]).unwrap(), &path).unwrap();
        let opts = BuildOptions {
            reuse_existing: true,
            ..Default::default()
        };
        let BuildOutcome::Built(e) =
            build_instance(&ex, &voice(), &MockBackend, dir.path(), opts).unwrap()
        else {
            panic!()
        };
        assert_eq!(audio::read_wav(&path).unwrap().len(), 3 * 960);
        assert!((e.duration_s - 0.18).abs() < 1e-12);
    }

    #[test]
    fn manifest_io() {
        let entries: Vec<_> = (0..10)
            .map(|i| entry(&format!("alpaca/{i}"), EntrySource::Alpaca))
            .collect();
        let mut buf = Vec::new();
        write_manifest(&entries, &mut buf).unwrap();
        assert_eq!(read_manifest(buf.as_slice()).unwrap(), entries);
        assert!(read_manifest(&b""[..]).unwrap().is_empty());

        let mut dup = Vec::new();
        write_manifest(&[entries[0].clone(), entries[0].clone()], &mut dup).unwrap();
        assert!(matches!(
            read_manifest(dup.as_slice()),
            Err(CorpusError::Validation(_))
        ));

        let first_line = std::str::from_utf8(&buf).unwrap().lines().next().unwrap();
        let bad = format!("{first_line}\n{{\"id\": 3}}\n");
        match read_manifest(bad.as_bytes()) {
            Err(CorpusError::Line { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stats_counts() {
        let mut entries: Vec<_> = (0..7)
            .map(|i| entry(&format!("superni/t/{i}"), EntrySource::Superni))
            .collect();
        entries.extend((0..3).map(|i| entry(&format!("alpaca/{i}"), EntrySource::Alpaca)));
        let drops = vec![DropRecord::new("x", DropReason::Url, "")];
        let s = corpus_stats(&entries, &drops);
        assert_eq!(s.total_instances, 10);
        assert_eq!(s.per_source["superni"], 7);
        assert_eq!(s.per_source["alpaca"], 3);
        assert_eq!(s.per_source.values().sum::<usize>(), 10);
        assert_eq!(s.per_gender["female"], 10);
        assert_eq!(s.per_locale["en-GB"], 10);
        assert_eq!(s.dropped["url"], 1);
        assert!((s.total_duration_s - 6.0).abs() < 1e-9);

        let empty = corpus_stats(&[], &[]);
        assert_eq!(empty.total_instances, 0);
        assert!(empty.per_source.values().all(|&n| n == 0));
        assert_eq!(empty.total_duration_s, 0.0);
    }

    #[test]
    fn subsample_sizes() {
        let entries: Vec<_> = (0..5800)
            .map(|i| entry(&format!("downstream/{i}"), EntrySource::Downstream))
            .collect();
        let a = subsample(&entries, 0.01, 3).unwrap();
        assert_eq!(a.len(), 58);
        assert_eq!(a, subsample(&entries, 0.01, 3).unwrap());
        assert_ne!(a, subsample(&entries, 0.01, 4).unwrap());
        assert_eq!(subsample(&entries, 1.0, 0).unwrap(), entries);
        assert_eq!(subsample(&entries[..10], 0.001, 0).unwrap().len(), 1);
        assert!(subsample(&[], 0.5, 0).is_err());
        assert!(subsample(&entries, 0.0, 0).is_err());
        assert!(subsample(&entries, 1.5, 0).is_err());
    }

    #[test]
    fn expansion() {
        let e = entry("alpaca/0", EntrySource::Alpaca);
        let map: ParaphraseMap = [(
            e.instruction.clone(),
            (1..=5).map(|k| format!("variant {k}")).collect(),
        )]
        .into_iter()
        .collect();
        let out = expand_instructions(std::slice::from_ref(&e), &map);
        assert_eq!(out.len(), 6);
        assert!(out
            .iter()
            .all(|x| x.audio_path == e.audio_path && x.target == e.target));
        assert_eq!(out[3].id, "alpaca/0#p3");
        assert_eq!(out[3].instruction, "variant 3");
        assert_eq!(
            expand_instructions(std::slice::from_ref(&e), &ParaphraseMap::new()),
            vec![e]
        );
    }

    proptest! {
        #[test]
        fn subsample_size_law(n in 1usize..400, fraction in 0.001f64..=1.0, seed: u64) {
            let entries: Vec<_> = (0..n)
                .map(|i| entry(&format!("d/{i}"), EntrySource::Downstream))
                .collect();
            let out = subsample(&entries, fraction, seed).unwrap();
            let expected = ((fraction * n as f64).round() as usize).max(1);
            prop_assert_eq!(out.len(), expected);
            check_unique(&out).unwrap();
        }
    }
}
