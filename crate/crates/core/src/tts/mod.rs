//! Speech synthesis: voice catalog and sampling, SSML construction, and the
//! backends that turn text into 16 kHz mono clips.
//!
//! [`MockBackend`] is a pure function of `(text, voice)` and is what tests and
//! offline runs use. [`RemoteBackend`] talks to an SSML-over-HTTPS service with
//! retries and a shared request-rate budget.

mod catalog;
mod clock;
mod mock;
mod remote;
mod ssml;

pub use catalog::{sample_voice, Gender, Locale, VoiceCatalog, VoiceSpec};
pub use clock::{Clock, FakeClock, RateLimiter, SystemClock};
pub use mock::{mock_waveform, MockBackend, MOCK_AMPLITUDE, MOCK_SAMPLES_PER_CHAR};
pub use remote::{RemoteBackend, RemoteConfig, RetryPolicy, ENV_API_KEY, ENV_ENDPOINT};
pub use ssml::{build_ssml, xml_escape};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioClip, AudioError, TARGET_SAMPLE_RATE};

#[derive(Debug, Error)]
pub enum TtsError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("synthesis rejected with HTTP {status}: {body}")]
    Permanent { status: u16, body: String },
    #[error("synthesis failed after {attempts} attempts: {last_error}")]
    TransientExhausted { attempts: u32, last_error: String },
    #[error("backend returned unusable audio: {0}")]
    InvalidAudio(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

pub type Result<T, E = TtsError> = std::result::Result<T, E>;

/// Output format requested from every backend.
pub const OUTPUT_FORMAT: &str = "riff-16khz-16bit-mono-pcm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRequest {
    pub text: String,
    pub voice: VoiceSpec,
}

impl SynthesisRequest {
    pub fn new(text: impl Into<String>, voice: VoiceSpec) -> Self {
        Self {
            text: text.into(),
            voice,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub clip: AudioClip,
    pub voice: VoiceSpec,
    pub backend: BackendKind,
}

pub trait SynthesisBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn synthesize(&self, request: &SynthesisRequest) -> Result<SynthesisResult>;

    /// Sample count the backend will produce for `request`, when it is known
    /// without synthesizing.
    fn expected_samples(&self, _request: &SynthesisRequest) -> Option<usize> {
        None
    }
}

/// Runs `request` through `backend` and checks the result contract
/// (16 kHz, non-empty).
pub fn synthesize(
    backend: &dyn SynthesisBackend,
    request: &SynthesisRequest,
) -> Result<SynthesisResult> {
    let result = backend.synthesize(request)?;
    if result.clip.sample_rate() != TARGET_SAMPLE_RATE {
        return Err(TtsError::InvalidAudio(format!(
            "sample rate {} != {TARGET_SAMPLE_RATE}",
            result.clip.sample_rate()
        )));
    }
    if result.clip.is_empty() {
        return Err(TtsError::InvalidAudio("empty clip".into()));
    }
    Ok(result)
}
