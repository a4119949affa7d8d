//! Mono PCM clips, 16-bit WAV I/O and waveform transforms.

use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV header: {0}")]
    Header(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedCodec(String),
    #[error("unsupported channel count {0}; only mono is accepted")]
    UnsupportedChannels(u16),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AudioError> = std::result::Result<T, E>;

pub const TARGET_SAMPLE_RATE: u32 = 16_000;
const I16_SCALE: f32 = 32767.0;

/// Mono waveform with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    sample_rate: u32,
    samples: Vec<f32>,
}

impl AudioClip {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(AudioError::Argument("sample rate must be positive".into()));
        }
        if let Some(s) = samples.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return Err(AudioError::Argument(format!("sample {s} outside [-1, 1]")));
        }
        Ok(Self {
            sample_rate,
            samples,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            AudioError::Header(format!("unexpected end of file: {e}"))
        }
        hound::Error::IoError(e) => AudioError::Io(e),
        hound::Error::FormatError(m) => AudioError::Header(m.to_string()),
        hound::Error::Unsupported => AudioError::UnsupportedCodec("unsupported WAV feature".into()),
        other => AudioError::Header(other.to_string()),
    }
}

fn decode<R: Read>(reader: R) -> Result<AudioClip> {
    let reader = hound::WavReader::new(reader).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedCodec(format!(
            "{:?} with {} bits per sample; expected 16-bit PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedChannels(spec.channels));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| (v as f32 / I16_SCALE).max(-1.0)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(map_hound)?;
    AudioClip::new(spec.sample_rate, samples)
}

fn encode<W: Write + Seek>(clip: &AudioClip, writer: W) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::new(writer, spec).map_err(map_hound)?;
    for &s in &clip.samples {
        w.write_sample(quantize(s)).map_err(map_hound)?;
    }
    w.finalize().map_err(map_hound)
}

pub fn quantize(sample: f32) -> i16 {
    (sample.clamp(-1.0, 1.0) * I16_SCALE).round() as i16
}

/// Decodes a RIFF/WAVE 16-bit mono PCM byte buffer.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    // A slice cannot fail to read, so any I/O error here is a short or
    // malformed buffer.
    decode(Cursor::new(bytes)).map_err(|e| match e {
        AudioError::Io(io) => AudioError::Header(io.to_string()),
        other => other,
    })
}

pub fn encode_wav(clip: &AudioClip) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    encode(clip, &mut buf)?;
    Ok(buf.into_inner())
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    decode_wav(&std::fs::read(path)?)
}

pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    std::fs::write(path, encode_wav(clip)?)?;
    Ok(())
}

pub const MIN_SPEED_FACTOR: f64 = 0.5;
pub const MAX_SPEED_FACTOR: f64 = 2.0;

/// Resamples without changing the declared rate, so playback is `factor`
/// times faster (tempo and pitch both shift).
///
/// Output sample `j` is the linear interpolation of the source at position
/// `j * factor`; the output holds `round(n / factor)` samples.
pub fn speed_perturb(clip: &AudioClip, factor: f64) -> Result<AudioClip> {
    if !(MIN_SPEED_FACTOR..=MAX_SPEED_FACTOR).contains(&factor) {
        return Err(AudioError::Argument(format!(
            "speed factor {factor} outside [{MIN_SPEED_FACTOR}, {MAX_SPEED_FACTOR}]"
        )));
    }
    if factor == 1.0 {
        return Ok(clip.clone());
    }
    let src = &clip.samples;
    let n = src.len();
    let out_len = (n as f64 / factor).round() as usize;
    let samples = (0..out_len)
        .map(|j| {
            let pos = j as f64 * factor;
            let i = pos.floor() as usize;
            if i + 1 >= n {
                return src[n - 1];
            }
            let frac = (pos - i as f64) as f32;
            let v = src[i] + (src[i + 1] - src[i]) * frac;
            v.clamp(-1.0, 1.0)
        })
        .collect();
    Ok(AudioClip {
        sample_rate: clip.sample_rate,
        samples,
    })
}

/// Concatenates clips in order and keeps the first
/// `floor(max_seconds * sample_rate)` samples.
pub fn concat_truncate(clips: &[AudioClip], max_seconds: f64) -> Result<AudioClip> {
    let first = clips
        .first()
        .ok_or_else(|| AudioError::Argument("no clips to concatenate".into()))?;
    if !(max_seconds.is_finite() && max_seconds > 0.0) {
        return Err(AudioError::Argument(format!(
            "max_seconds must be positive, got {max_seconds}"
        )));
    }
    let rate = first.sample_rate;
    if let Some(c) = clips.iter().find(|c| c.sample_rate != rate) {
        return Err(AudioError::Argument(format!(
            "mixed sample rates {rate} and {}",
            c.sample_rate
        )));
    }
    let cap = (max_seconds * rate as f64).floor() as usize;
    let mut samples = Vec::with_capacity(cap.min(clips.iter().map(AudioClip::len).sum()));
    for c in clips {
        let room = cap - samples.len();
        if room == 0 {
            break;
        }
        samples.extend_from_slice(&c.samples[..c.len().min(room)]);
    }
    Ok(AudioClip {
        sample_rate: rate,
        samples,
    })
}

pub const QA_MAX_SECONDS: f64 = 30.0;
