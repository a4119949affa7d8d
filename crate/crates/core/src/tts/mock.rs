use super::{BackendKind, Result, SynthesisBackend, SynthesisRequest, SynthesisResult, VoiceSpec};
use crate::audio::{AudioClip, TARGET_SAMPLE_RATE};

/// 60 ms at 16 kHz.
pub const MOCK_SAMPLES_PER_CHAR: usize = 960;
pub const MOCK_AMPLITUDE: f32 = 0.3;

// FNV-1a, 64 bit. Stable across platforms and releases, unlike std's hasher.
fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // separator so ("ab","c") and ("a","bc") differ
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn tone_hz(c: Option<char>, speaker_id: &str) -> f64 {
    let mut buf = [0u8; 4];
    let char_bytes: &[u8] = match c {
        Some(c) => c.encode_utf8(&mut buf).as_bytes(),
        None => &[],
    };
    200.0 + 10.0 * (fnv1a(&[char_bytes, speaker_id.as_bytes()]) % 200) as f64
}

fn push_tone(out: &mut Vec<f32>, hz: f64) {
    let rate = TARGET_SAMPLE_RATE as f64;
    out.extend((0..MOCK_SAMPLES_PER_CHAR).map(|j| {
        MOCK_AMPLITUDE * (2.0 * std::f64::consts::PI * hz * j as f64 / rate).sin() as f32
    }));
}

/// Deterministic stand-in for speech: one 60 ms sine tone per character, its
/// pitch keyed on the character and the speaker. Empty text yields one tone
/// at the speaker's base pitch.
pub fn mock_waveform(text: &str, voice: &VoiceSpec) -> AudioClip {
    let n = text.chars().count().max(1);
    let mut samples = Vec::with_capacity(n * MOCK_SAMPLES_PER_CHAR);
    if text.is_empty() {
        push_tone(&mut samples, tone_hz(None, &voice.speaker_id));
    }
    for c in text.chars() {
        push_tone(&mut samples, tone_hz(Some(c), &voice.speaker_id));
    }
    AudioClip::new(TARGET_SAMPLE_RATE, samples).expect("mock amplitude is within [-1, 1]")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl SynthesisBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn synthesize(&self, request: &SynthesisRequest) -> Result<SynthesisResult> {
        Ok(SynthesisResult {
            clip: mock_waveform(&request.text, &request.voice),
            voice: request.voice.clone(),
            backend: BackendKind::Mock,
        })
    }

    fn expected_samples(&self, request: &SynthesisRequest) -> Option<usize> {
        Some(request.text.chars().count().max(1) * MOCK_SAMPLES_PER_CHAR)
    }
}
