//! Generation endpoint client.
//!
//! Wire contract: `POST` with JSON `{prompt, max_new_tokens, temperature,
//! stop}` (plus `seed` when set), answered by JSON `{text}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::program::default_stops;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub stop_sequences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_new_tokens: 512,
            stop_sequences: default_stops(),
            seed: None,
        }
    }
}

impl GenerationConfig {
    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }

    pub fn validate(&self) -> Result<(), EndpointError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(EndpointError::InvalidConfig(format!(
                "temperature {} must be finite and non-negative",
                self.temperature
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(EndpointError::InvalidConfig(
                "max_new_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(prompt: &str, cfg: &GenerationConfig) -> Self {
        Self {
            prompt: prompt.to_string(),
            max_new_tokens: cfg.max_new_tokens,
            temperature: cfg.temperature,
            stop: cfg.stop_sequences.clone(),
            seed: cfg.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
}

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {0}")]
    Status(u16),
    #[error("bad response body: {0}")]
    Decode(String),
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("gave up after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: Box<EndpointError> },
}

pub trait CompletionEndpoint: Send + Sync {
    /// One request, no retries.
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, EndpointError>;
}

pub struct HttpEndpoint {
    url: String,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl CompletionEndpoint for HttpEndpoint {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, EndpointError> {
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(request)
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if status != 200 {
            return Err(EndpointError::Status(status));
        }
        let body = response
            .body_mut()
            .with_config()
            .limit(16 << 20)
            .read_to_vec()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        serde_json::from_slice(&body).map_err(|e| EndpointError::Decode(e.to_string()))
    }
}

/// Delay before retry `attempt` (1-based).
fn backoff(attempt: u32) -> Duration {
    Duration::from_millis(50 * (1 << attempt.min(6)))
}

/// Requests a continuation of `prompt`, making up to `retry_budget + 1`
/// attempts. A response that repeats the prompt verbatim has it stripped.
pub fn generate_completion(
    client: &dyn CompletionEndpoint,
    prompt: &str,
    cfg: &GenerationConfig,
    retry_budget: u32,
) -> Result<String, EndpointError> {
    cfg.validate()?;
    let request = GenerationRequest::new(prompt, cfg);
    let attempts = retry_budget + 1;
    let mut last = None;
    for attempt in 1..=attempts {
        match client.complete(&request) {
            Ok(response) => {
                let text = match response.text.strip_prefix(prompt) {
                    Some(rest) if !prompt.is_empty() => rest.to_string(),
                    _ => response.text,
                };
                return Ok(text);
            }
            Err(e) => {
                log::debug!("generation attempt {attempt}/{attempts} failed: {e}");
                last = Some(e);
                if attempt < attempts {
                    std::thread::sleep(backoff(attempt));
                }
            }
        }
    }
    Err(EndpointError::Exhausted {
        attempts,
        last: Box::new(last.expect("at least one attempt")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Fixed(String);
    impl CompletionEndpoint for Fixed {
        fn complete(&self, _: &GenerationRequest) -> Result<GenerationResponse, EndpointError> {
            Ok(GenerationResponse { text: self.0.clone() })
        }
    }

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
    }
    impl CompletionEndpoint for Flaky {
        fn complete(&self, _: &GenerationRequest) -> Result<GenerationResponse, EndpointError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(EndpointError::Status(503))
            } else {
                Ok(GenerationResponse { text: "ok".into() })
            }
        }
    }

    #[test]
    fn echo_prefix_is_stripped() {
        let cfg = GenerationConfig::default();
        let echo = Fixed("def f():\n    return 1\n".into());
        assert_eq!(
            generate_completion(&echo, "def f():\n", &cfg, 0).unwrap(),
            "    return 1\n"
        );
        let plain = Fixed("    return 1\n".into());
        assert_eq!(
            generate_completion(&plain, "def f():\n", &cfg, 0).unwrap(),
            "    return 1\n"
        );
    }

    #[test]
    fn retries_then_succeeds_or_exhausts() {
        let cfg = GenerationConfig::default();
        let ok = Flaky {
            failures: 2,
            calls: AtomicU32::new(0),
        };
        assert_eq!(generate_completion(&ok, "p", &cfg, 2).unwrap(), "ok");
        assert_eq!(ok.calls.load(Ordering::SeqCst), 3);

        let bad = Flaky {
            failures: 10,
            calls: AtomicU32::new(0),
        };
        let err = generate_completion(&bad, "p", &cfg, 2).unwrap_err();
        assert!(matches!(err, EndpointError::Exhausted { attempts: 3, .. }));
        assert_eq!(bad.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn greedy_and_validation() {
        let mut cfg = GenerationConfig::default();
        assert!(cfg.is_greedy());
        cfg.temperature = 0.2;
        assert!(!cfg.is_greedy());
        cfg.temperature = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn wire_body_shape() {
        let body = serde_json::to_value(GenerationRequest::new("x", &GenerationConfig::default())).unwrap();
        let keys: Vec<_> = body.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["max_new_tokens", "prompt", "stop", "temperature"]);
    }
}
