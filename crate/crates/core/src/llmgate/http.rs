use std::time::Duration;

use serde::Deserialize;

use super::{ChatBackend, CompletionRequest, GateError, Provenance};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "JARGON_BENCH_API_KEY";

/// OpenAI-compatible chat-completions client.
pub struct HttpBackend {
    url: String,
    api_key: String,
    agent: ureq::Agent,
    /// Send `n` in one call; otherwise issue `n` single-sample calls.
    supports_n: bool,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpBackend {
    /// `endpoint` may be a base URL (`.../v1`) or the full completions URL.
    pub fn new(endpoint: &str, api_key: impl Into<String>) -> Result<Self, GateError> {
        let api_key = api_key.into();
        if api_key.trim().is_empty() {
            return Err(GateError::Credential(format!("{API_KEY_ENV} is empty")));
        }
        let trimmed = endpoint.trim_end_matches('/');
        if !(trimmed.starts_with("http://") || trimmed.starts_with("https://")) {
            return Err(GateError::Config(format!("endpoint {endpoint:?} is not an http(s) URL")));
        }
        let url = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        };
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout(Duration::from_secs(120))
            .build();
        Ok(HttpBackend {
            url,
            api_key,
            agent,
            supports_n: true,
        })
    }

    pub fn from_env(endpoint: &str) -> Result<Self, GateError> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| GateError::Credential(format!("{API_KEY_ENV} is not set")))?;
        HttpBackend::new(endpoint, key)
    }

    pub fn with_n_support(mut self, supports_n: bool) -> Self {
        self.supports_n = supports_n;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn call(&self, request: &CompletionRequest, n: u32) -> Result<Vec<String>, GateError> {
        let response = self
            .agent
            .post(&self.url)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .set("Content-Type", "application/json")
            .send_json(request.wire_body(n));
        let response = match response {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                let body = r.into_string().unwrap_or_default();
                return Err(match status {
                    401 | 403 => GateError::Credential(format!("HTTP {status}: {body}")),
                    408 | 409 | 429 | 500..=599 => GateError::Transient(format!("HTTP {status}: {body}")),
                    _ => GateError::Http { status, body },
                });
            }
            Err(ureq::Error::Transport(t)) => return Err(GateError::Transient(t.to_string())),
        };
        let parsed: ChatResponse = response
            .into_json()
            .map_err(|e| GateError::Protocol(e.to_string()))?;
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect())
    }
}

impl ChatBackend for HttpBackend {
    fn provenance(&self) -> Provenance {
        Provenance::Live
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, GateError> {
        let n = request.config.n;
        let mut samples = if self.supports_n {
            self.call(request, n)?
        } else {
            Vec::new()
        };
        samples.truncate(n as usize);
        if !samples.is_empty() && samples.len() < n as usize {
            log::warn!(
                "endpoint returned {} of {n} choices; topping up with single-sample calls",
                samples.len()
            );
        }
        while samples.len() < n as usize {
            let mut one = self.call(request, 1)?;
            if one.is_empty() {
                return Err(GateError::Protocol("response contained no choices".into()));
            }
            samples.push(one.swap_remove(0));
        }
        Ok(samples)
    }
}
