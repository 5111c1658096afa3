//! Fixture-backed mock provider routed by request fingerprint.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{fingerprint, ChatGateway, ChatRequest, ChatResponse, GatewayError};

/// What to do when a fingerprint has no scripted response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackPolicy {
    /// Fail the call. Default, so missing fixtures surface in tests instead
    /// of being papered over.
    Error,
    /// Echo the last message's content back.
    Echo,
    /// Return a fixed canned string.
    Canned(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureRecord {
    fingerprint: String,
    response: String,
}

/// Deterministic mock: same fingerprint, same response, every time.
pub struct FixtureGateway {
    responses: Mutex<HashMap<String, String>>,
    fallback: FallbackPolicy,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl FixtureGateway {
    pub fn new(fallback: FallbackPolicy) -> Self {
        Self {
            responses: Mutex::new(HashMap::new()),
            fallback,
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        }
    }

    pub fn insert(&self, request: &ChatRequest, response: impl Into<String>) {
        self.responses
            .lock()
            .unwrap()
            .insert(fingerprint(request), response.into());
    }

    pub fn insert_fingerprint(&self, fp: impl Into<String>, response: impl Into<String>) {
        self.responses.lock().unwrap().insert(fp.into(), response.into());
    }

    /// Load fixtures from a line-delimited JSON file of
    /// `{"fingerprint": ..., "response": ...}` records.
    pub fn load(path: &Path, fallback: FallbackPolicy) -> std::io::Result<Self> {
        let gw = Self::new(fallback);
        let file = std::fs::File::open(path)?;
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord = serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            gw.insert_fingerprint(rec.fingerprint, rec.response);
        }
        Ok(gw)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::fs::File::create(path)?;
        let map = self.responses.lock().unwrap();
        let mut entries: Vec<_> = map.iter().collect();
        entries.sort();
        for (fp, response) in entries {
            let rec = FixtureRecord { fingerprint: fp.clone(), response: response.clone() };
            writeln!(file, "{}", serde_json::to_string(&rec).unwrap())?;
        }
        Ok(())
    }

    /// Highest number of simultaneously open calls observed, for asserting
    /// concurrency bounds in tests.
    pub fn max_observed_concurrency(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

impl ChatGateway for FixtureGateway {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);

        let fp = fingerprint(request);
        let result = match self.responses.lock().unwrap().get(&fp) {
            Some(response) => Ok(ChatResponse::complete(response.clone())),
            None => match &self.fallback {
                FallbackPolicy::Error => Err(GatewayError::FixtureMiss(fp)),
                FallbackPolicy::Echo => Ok(ChatResponse::complete(
                    request.messages.last().unwrap().content.clone(),
                )),
                FallbackPolicy::Canned(text) => Ok(ChatResponse::complete(text.clone())),
            },
        };

        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;

    fn req(user: &str) -> ChatRequest {
        ChatRequest::new(
            "mock",
            0.0,
            vec![ChatMessage::system("system"), ChatMessage::user(user)],
        )
    }

    #[test]
    fn scripted_lookup() {
        let gw = FixtureGateway::new(FallbackPolicy::Error);
        gw.insert(&req("hi"), "hello");
        assert_eq!(gw.complete(&req("hi")).unwrap().content, "hello");
    }

    #[test]
    fn identical_fingerprints_get_identical_responses() {
        let gw = FixtureGateway::new(FallbackPolicy::Error);
        gw.insert(&req("hi"), "hello");
        let a = gw.complete(&req("hi")).unwrap();
        let b = gw.complete(&req("hi")).unwrap();
        assert_eq!(a.content, b.content);
    }

    #[test]
    fn miss_with_error_fallback_fails() {
        let gw = FixtureGateway::new(FallbackPolicy::Error);
        assert!(matches!(
            gw.complete(&req("hi")),
            Err(GatewayError::FixtureMiss(_))
        ));
    }

    #[test]
    fn miss_with_echo_fallback_echoes() {
        let gw = FixtureGateway::new(FallbackPolicy::Echo);
        assert_eq!(gw.complete(&req("hi")).unwrap().content, "hi");
    }

    #[test]
    fn round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixtures.jsonl");
        let gw = FixtureGateway::new(FallbackPolicy::Error);
        gw.insert(&req("hi"), "hello");
        gw.insert(&req("bye"), "goodbye");
        gw.save(&path).unwrap();

        let loaded = FixtureGateway::load(&path, FallbackPolicy::Error).unwrap();
        assert_eq!(loaded.complete(&req("hi")).unwrap().content, "hello");
        assert_eq!(loaded.complete(&req("bye")).unwrap().content, "goodbye");
    }
}
