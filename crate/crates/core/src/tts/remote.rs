use std::sync::Arc;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{
    build_ssml, BackendKind, Clock, RateLimiter, Result, SynthesisBackend, SynthesisRequest,
    SynthesisResult, SystemClock, TtsError, OUTPUT_FORMAT,
};
use crate::audio::decode_wav;

pub const ENV_ENDPOINT: &str = "TTS_ENDPOINT";
pub const ENV_API_KEY: &str = "TTS_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_delay_s: f64,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_s: 1.0,
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        Duration::from_secs_f64(self.base_delay_s * self.factor.powi(retry as i32 - 1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_attempts == 0 {
            return Err(TtsError::Config(
                "retry.max_attempts must be at least 1".into(),
            ));
        }
        if !(self.base_delay_s.is_finite() && self.base_delay_s >= 0.0) {
            return Err(TtsError::Config(
                "retry.base_delay_s must be non-negative".into(),
            ));
        }
        if !(self.factor.is_finite() && self.factor >= 1.0) {
            return Err(TtsError::Config("retry.factor must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: String,
    pub retry: RetryPolicy,
    pub max_requests_per_second: f64,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            retry: RetryPolicy::default(),
            max_requests_per_second: 10.0,
            timeout: Duration::from_secs(30),
        }
    }

    /// Endpoint and key from `TTS_ENDPOINT` / `TTS_API_KEY`.
    pub fn from_env() -> Result<Self> {
        let var = |name: &str| {
            std::env::var(name)
                .ok()
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| TtsError::Config(format!("environment variable {name} is not set")))
        };
        let api_key = var(ENV_API_KEY)?;
        let endpoint = var(ENV_ENDPOINT)?;
        Ok(Self::new(endpoint, api_key))
    }
}

enum Attempt {
    Done(SynthesisResult),
    Transient(String),
}

/// SSML-over-HTTP synthesis client with retry and a shared rate budget.
pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    limiter: Arc<RateLimiter>,
    clock: Arc<dyn Clock>,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        Self::with_clock(config, Arc::new(SystemClock::new()))
    }

    pub fn with_clock(config: RemoteConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        config.retry.validate()?;
        if !(config.max_requests_per_second.is_finite() && config.max_requests_per_second > 0.0) {
            return Err(TtsError::Config(
                "max_requests_per_second must be positive".into(),
            ));
        }
        if config.api_key.trim().is_empty() {
            return Err(TtsError::Config("API key is empty".into()));
        }
        reqwest::Url::parse(&config.endpoint)
            .map_err(|e| TtsError::Config(format!("endpoint {:?}: {e}", config.endpoint)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .user_agent(concat!("speechinstruct/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| TtsError::Config(format!("HTTP client: {e}")))?;
        let limiter = Arc::new(RateLimiter::new(
            config.max_requests_per_second,
            clock.clone(),
        ));
        Ok(Self {
            config,
            client,
            limiter,
            clock,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn attempt(&self, ssml: &str, request: &SynthesisRequest) -> Result<Attempt> {
        self.limiter.acquire();
        let response = self
            .client
            .post(&self.config.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/ssml+xml")
            .header("X-Microsoft-OutputFormat", OUTPUT_FORMAT)
            .header("Ocp-Apim-Subscription-Key", &self.config.api_key)
            .body(ssml.to_owned())
            .send();
        let response = match response {
            Ok(r) => r,
            Err(e) if e.is_builder() => return Err(TtsError::Config(e.to_string())),
            Err(e) => return Ok(Attempt::Transient(format!("request error: {e}"))),
        };
        let status = response.status();
        let body = match response.bytes() {
            Ok(b) => b,
            Err(e) => return Ok(Attempt::Transient(format!("reading body: {e}"))),
        };
        if status.is_success() {
            let clip = decode_wav(&body).map_err(|e| TtsError::InvalidAudio(e.to_string()))?;
            return Ok(Attempt::Done(SynthesisResult {
                clip,
                voice: request.voice.clone(),
                backend: BackendKind::Remote,
            }));
        }
        let text = String::from_utf8_lossy(&body).into_owned();
        if status.as_u16() == 429 || status.is_server_error() {
            Ok(Attempt::Transient(format!(
                "HTTP {}: {text}",
                status.as_u16()
            )))
        } else {
            Err(TtsError::Permanent {
                status: status.as_u16(),
                body: text,
            })
        }
    }
}

impl SynthesisBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn synthesize(&self, request: &SynthesisRequest) -> Result<SynthesisResult> {
        let ssml = build_ssml(&request.text, &request.voice);
        let policy = &self.config.retry;
        let mut last_error = String::new();
        for attempt in 1..=policy.max_attempts {
            if attempt > 1 {
                let delay = policy.delay(attempt - 1);
                debug!("retrying synthesis in {delay:?} (attempt {attempt})");
                self.clock.sleep(delay);
            }
            match self.attempt(&ssml, request)? {
                Attempt::Done(result) => return Ok(result),
                Attempt::Transient(msg) => {
                    warn!("transient synthesis failure: {msg}");
                    last_error = msg;
                }
            }
        }
        Err(TtsError::TransientExhausted {
            attempts: policy.max_attempts,
            last_error,
        })
    }
}
