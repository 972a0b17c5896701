//! Wire protocol for the vision-language model: two JSON POST endpoints,
//! `/v1/attributes` (token probabilities for a candidate set) and
//! `/v1/caption` (free text for a prompt).

use std::collections::BTreeMap;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ureq::Agent;

use crate::error::{Error, Result};

/// Anything that can answer attribute probes and caption prompts for a set
/// of frames (image paths or base64 payloads).
pub trait VlmClient {
    fn attributes(
        &self,
        frames: &[String],
        query: &str,
        candidates: &[String],
    ) -> Result<BTreeMap<String, f64>>;

    fn caption(&self, frames: &[String], prompt: &str) -> Result<String>;
}

#[derive(Serialize)]
struct AttributesRequest<'a> {
    frames: &'a [String],
    query: &'a str,
    candidates: &'a [String],
}

#[derive(Deserialize)]
struct AttributesResponse {
    probabilities: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct CaptionRequest<'a> {
    frames: &'a [String],
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CaptionResponse {
    text: String,
}

/// HTTP client with bounded retries and exponential backoff. Transport
/// failures retry; a malformed body fails immediately (retrying cannot fix
/// a protocol violation).
pub struct HttpVlmClient {
    endpoint: String,
    agent: Agent,
    attempts: u32,
    initial_backoff: Duration,
}

impl HttpVlmClient {
    pub fn new(endpoint: &str) -> Self {
        Self::with_retry(endpoint, 3, Duration::from_millis(500))
    }

    pub fn with_retry(endpoint: &str, attempts: u32, initial_backoff: Duration) -> Self {
        let agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .new_agent();
        HttpVlmClient {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            agent,
            attempts: attempts.max(1),
            initial_backoff,
        }
    }

    fn post_json<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{path}", self.endpoint);
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self.agent.post(&url).send_json(body) {
                Ok(mut res) => {
                    return res
                        .body_mut()
                        .read_json::<Resp>()
                        .map_err(|e| Error::VlmResponse(e.to_string()));
                }
                Err(e) => {
                    last = e.to_string();
                    if attempt < self.attempts {
                        std::thread::sleep(self.initial_backoff * (1 << (attempt - 1)));
                    }
                }
            }
        }
        Err(Error::Vlm { attempts: self.attempts, reason: last })
    }
}

impl VlmClient for HttpVlmClient {
    fn attributes(
        &self,
        frames: &[String],
        query: &str,
        candidates: &[String],
    ) -> Result<BTreeMap<String, f64>> {
        let req = AttributesRequest { frames, query, candidates };
        let res: AttributesResponse = self.post_json("/v1/attributes", &req)?;
        Ok(res.probabilities)
    }

    fn caption(&self, frames: &[String], prompt: &str) -> Result<String> {
        let req = CaptionRequest { frames, prompt };
        let res: CaptionResponse = self.post_json("/v1/caption", &req)?;
        Ok(res.text)
    }
}
