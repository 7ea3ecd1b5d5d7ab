use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatBackend, CompletionRequest, GateError, Provenance};
use crate::promptkit::ChatMessage;

/// Hash of the message list alone, for fixtures that should answer a prompt
/// regardless of sampling parameters.
pub fn messages_digest(messages: &[ChatMessage]) -> String {
    let bytes = serde_json::to_vec(messages).expect("messages serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// One scripted answer. Either key may be given; `request_key` wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub messages_digest: Option<String>,
    pub samples: Vec<String>,
}

/// Offline backend answering from scripted fixtures; unscripted requests fail.
pub struct MockBackend {
    by_key: HashMap<String, Vec<String>>,
    by_digest: HashMap<String, Vec<String>>,
}

impl MockBackend {
    pub fn new(fixtures: impl IntoIterator<Item = MockFixture>) -> Self {
        let mut by_key = HashMap::new();
        let mut by_digest = HashMap::new();
        for f in fixtures {
            if let Some(k) = f.request_key {
                by_key.insert(k, f.samples.clone());
            }
            if let Some(d) = f.messages_digest {
                by_digest.insert(d, f.samples);
            }
        }
        MockBackend { by_key, by_digest }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, GateError> {
        let mut fixtures = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: MockFixture = serde_json::from_str(line)
                .map_err(|e| GateError::Config(format!("mock fixtures line {}: {e}", i + 1)))?;
            if f.request_key.is_none() && f.messages_digest.is_none() {
                return Err(GateError::Config(format!(
                    "mock fixtures line {}: needs request_key or messages_digest",
                    i + 1
                )));
            }
            fixtures.push(f);
        }
        Ok(MockBackend::new(fixtures))
    }

    pub fn len(&self) -> usize {
        self.by_key.len() + self.by_digest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ChatBackend for MockBackend {
    fn provenance(&self) -> Provenance {
        Provenance::Mock
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, GateError> {
        let samples = self
            .by_key
            .get(&request.request_key)
            .or_else(|| self.by_digest.get(&messages_digest(&request.messages)))
            .ok_or_else(|| GateError::MockMiss(request.request_key.clone()))?;
        let n = request.config.n as usize;
        if samples.len() < n {
            return Err(GateError::Protocol(format!(
                "fixture for {} scripts {} samples, request needs {n}",
                request.request_key,
                samples.len()
            )));
        }
        Ok(samples[..n].to_vec())
    }
}
