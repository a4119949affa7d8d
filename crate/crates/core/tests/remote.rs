mod common;

use std::sync::Arc;
use std::time::Duration;

use common::FakeServer;
use speechinstruct::audio::encode_wav;
use speechinstruct::tts::{
    mock_waveform, FakeClock, Gender, RemoteBackend, RemoteConfig, SynthesisBackend,
    SynthesisRequest, TtsError, VoiceSpec,
};

fn voice() -> VoiceSpec {
    VoiceSpec::new(Gender::Male, "en-AU", "en-AU-WilliamNeural").unwrap()
}

fn wav() -> Vec<u8> {
    encode_wav(&mock_waveform("hi", &voice())).unwrap()
}

fn backend(server: &FakeServer, clock: Arc<FakeClock>) -> RemoteBackend {
    RemoteBackend::with_clock(RemoteConfig::new(&server.url, "secret-key"), clock).unwrap()
}

#[test]
fn retries_once_after_429() {
    let server = FakeServer::start(vec![(429, b"slow down".to_vec()), (200, wav())]);
    let clock = Arc::new(FakeClock::new());
    let b = backend(&server, clock.clone());
    let out = b.synthesize(&SynthesisRequest::new("hi", voice())).unwrap();
    assert_eq!(out.clip.len(), 2 * 960);
    assert_eq!(server.count(), 2);
    assert_eq!(clock.sleeps(), vec![Duration::from_secs(1)]);
}

#[test]
fn request_carries_ssml_and_headers() {
    let server = FakeServer::start(vec![(200, wav())]);
    let b = backend(&server, Arc::new(FakeClock::new()));
    b.synthesize(&SynthesisRequest::new("a < b & c", voice()))
        .unwrap();
    let req = server.requests.lock().unwrap()[0].clone();
    assert_eq!(req.header("content-type"), Some("application/ssml+xml"));
    assert_eq!(
        req.header("x-microsoft-outputformat"),
        Some("riff-16khz-16bit-mono-pcm")
    );
    assert_eq!(req.header("ocp-apim-subscription-key"), Some("secret-key"));
    let doc = roxmltree::Document::parse(&req.body).unwrap();
    let v = doc.descendants().find(|n| n.has_tag_name("voice")).unwrap();
    assert_eq!(v.attribute("name"), Some("en-AU-WilliamNeural"));
    assert_eq!(v.text(), Some("a < b & c"));
}

#[test]
fn client_error_is_permanent() {
    let server = FakeServer::start(vec![(400, b"bad ssml".to_vec())]);
    let clock = Arc::new(FakeClock::new());
    let b = backend(&server, clock.clone());
    match b.synthesize(&SynthesisRequest::new("x", voice())) {
        Err(TtsError::Permanent { status, body }) => {
            assert_eq!(status, 400);
            assert_eq!(body, "bad ssml");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(server.count(), 1);
    assert!(clock.sleeps().is_empty());
}

#[test]
fn server_errors_exhaust_retries() {
    let server = FakeServer::start(vec![(503, Vec::new())]);
    let clock = Arc::new(FakeClock::new());
    let b = backend(&server, clock.clone());
    match b.synthesize(&SynthesisRequest::new("x", voice())) {
        Err(TtsError::TransientExhausted { attempts, .. }) => assert_eq!(attempts, 5),
        other => panic!("{other:?}"),
    }
    assert_eq!(server.count(), 5);
    let secs: Vec<f64> = clock.sleeps().iter().map(Duration::as_secs_f64).collect();
    assert_eq!(secs, vec![1.0, 2.0, 4.0, 8.0]);
}

#[test]
fn non_wav_success_body_is_invalid_audio() {
    let server = FakeServer::start(vec![(200, b"not audio".to_vec())]);
    let b = backend(&server, Arc::new(FakeClock::new()));
    assert!(matches!(
        b.synthesize(&SynthesisRequest::new("x", voice())),
        Err(TtsError::InvalidAudio(_))
    ));
}

#[test]
fn rate_limit_is_respected_across_requests() {
    let server = FakeServer::start(vec![(200, wav())]);
    let clock = Arc::new(FakeClock::new());
    let mut cfg = RemoteConfig::new(&server.url, "k");
    cfg.max_requests_per_second = 4.0;
    let b = RemoteBackend::with_clock(cfg, clock.clone()).unwrap();
    for _ in 0..5 {
        b.synthesize(&SynthesisRequest::new("hi", voice())).unwrap();
    }
    // First request is immediate; each later one waits a quarter second of
    // fake time.
    assert_eq!(clock.sleeps(), vec![Duration::from_millis(250); 4]);
}
