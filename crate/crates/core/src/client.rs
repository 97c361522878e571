//! Clients for the external model services, plus model-free stubs.
//!
//! Wire contracts (JSON over HTTP POST):
//!
//! ```text
//! /generate      {prompt, beam_size, length_penalty, max_new_tokens} -> {text, model_tag}
//! /score         {query, document}                                 -> {score}
//! /count         {text}                                            -> {count}
//! /embed_tokens  {tokens}                                          -> {embeddings}
//! ```

use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::embedding::{TokenEmbedder, TokenMatrix};
use crate::error::{Error, Result};
use crate::prompt::{PromptBundle, TokenCounter};
use crate::rerank::{RankedContext, RelevanceScorer};

pub const DEFAULT_BEAM_SIZE: u32 = 4;
pub const DEFAULT_LENGTH_PENALTY: f64 = 1.0;
pub const DEFAULT_MAX_NEW_TOKENS: u32 = 256;
pub const DEFAULT_TIMEOUT_MS: u64 = 60_000;
pub const DEFAULT_GENERATOR_IN_FLIGHT: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub beam_size: u32,
    pub length_penalty: f64,
    pub max_new_tokens: u32,
    pub timeout_ms: u64,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            beam_size: DEFAULT_BEAM_SIZE,
            length_penalty: DEFAULT_LENGTH_PENALTY,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size < 1 || self.max_new_tokens < 1 {
            return Err(Error::Config("beam_size and max_new_tokens must be at least 1".into()));
        }
        if !self.length_penalty.is_finite() {
            return Err(Error::Config("length_penalty must be finite".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// The `/generate` body.
    pub fn wire_body(&self) -> GenerateBody<'_> {
        GenerateBody {
            prompt: &self.prompt,
            beam_size: self.beam_size,
            length_penalty: self.length_penalty,
            max_new_tokens: self.max_new_tokens,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct GenerateBody<'a> {
    pub prompt: &'a str,
    pub beam_size: u32,
    pub length_penalty: f64,
    pub max_new_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct GenerateReply {
    text: String,
    #[serde(default)]
    model_tag: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResponse {
    pub text: String,
    pub latency: Duration,
    pub model_tag: String,
}

/// Service location and transport settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    /// Base URL, e.g. `http://127.0.0.1:8000`.
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Extra attempts after a transport failure (0 or 1 in practice).
    #[serde(default)]
    pub retries: u32,
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl Endpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            retries: 0,
        }
    }

    fn route(&self, path: &str) -> String {
        format!("{}/{}", self.url.trim_end_matches('/'), path.trim_start_matches('/'))
    }

    /// POSTs `body` as JSON to `path` and decodes the JSON reply.
    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B, timeout: Duration) -> Result<R> {
        let url = self.route(path);
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut attempt = 0;
        loop {
            match agent.post(&url).send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status();
                    if !status.is_success() {
                        let text = resp.body_mut().read_to_string().unwrap_or_default();
                        let snippet: String = text.chars().take(200).collect();
                        return Err(Error::endpoint(&url, format!("status {status}: {snippet}")));
                    }
                    return resp
                        .body_mut()
                        .read_json::<R>()
                        .map_err(|e| Error::endpoint(&url, format!("bad response body: {e}")));
                }
                Err(e) if attempt < self.retries => {
                    log::warn!("{url}: {e}; retrying");
                    attempt += 1;
                }
                Err(e) => return Err(Error::endpoint(&url, e)),
            }
        }
    }
}

/// Calls `/generate` on `endpoint`, forwarding the decoding parameters as is.
pub fn generate(endpoint: &Endpoint, request: &GenerationRequest) -> Result<GenerationResponse> {
    request.validate()?;
    let start = Instant::now();
    let reply: GenerateReply = endpoint.post_json("/generate", &request.wire_body(), request.timeout())?;
    if reply.text.trim().is_empty() {
        return Err(Error::endpoint(&endpoint.route("/generate"), "empty generated text"));
    }
    Ok(GenerationResponse {
        text: reply.text,
        latency: start.elapsed(),
        model_tag: reply.model_tag,
    })
}

/// Echoes the rank-1 context's answer.
pub fn stub_generate(request: &GenerationRequest, top_context: Option<&RankedContext>) -> Result<GenerationResponse> {
    request.validate()?;
    let top = top_context.ok_or(Error::NoContexts)?;
    Ok(GenerationResponse {
        text: top.qa.answer.clone(),
        latency: Duration::ZERO,
        model_tag: StubGenerator.model_tag(),
    })
}

/// Anything that turns a prompt into an answer.
pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest, bundle: &PromptBundle) -> Result<GenerationResponse>;

    /// Configured tag, reported before any response is seen.
    fn model_tag(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StubGenerator;

impl Generator for StubGenerator {
    fn generate(&self, request: &GenerationRequest, bundle: &PromptBundle) -> Result<GenerationResponse> {
        stub_generate(request, bundle.top_context())
    }

    fn model_tag(&self) -> String {
        "stub-echo-top".to_string()
    }
}

#[derive(Debug, Clone)]
pub struct HttpGenerator {
    pub endpoint: Endpoint,
    pub label: String,
}

impl Generator for HttpGenerator {
    fn generate(&self, request: &GenerationRequest, _bundle: &PromptBundle) -> Result<GenerationResponse> {
        generate(&self.endpoint, request)
    }

    fn model_tag(&self) -> String {
        self.label.clone()
    }
}

#[derive(Serialize)]
struct ScoreBody<'a> {
    query: &'a str,
    document: &'a str,
}

#[derive(Deserialize)]
struct ScoreReply {
    score: f64,
}

/// `/score` client.
#[derive(Debug, Clone)]
pub struct HttpRelevanceScorer {
    pub endpoint: Endpoint,
}

impl RelevanceScorer for HttpRelevanceScorer {
    fn score(&self, query: &str, document: &str) -> Result<f64> {
        let reply: ScoreReply = self.endpoint.post_json(
            "/score",
            &ScoreBody { query, document },
            Duration::from_millis(self.endpoint.timeout_ms),
        )?;
        Ok(reply.score)
    }

    fn name(&self) -> String {
        format!("http:{}", self.endpoint.url)
    }
}

#[derive(Serialize)]
struct CountBody<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct CountReply {
    count: usize,
}

/// `/count` client for subword token budgets.
#[derive(Debug, Clone)]
pub struct HttpTokenCounter {
    pub endpoint: Endpoint,
}

impl TokenCounter for HttpTokenCounter {
    fn count(&self, text: &str) -> Result<usize> {
        let reply: CountReply =
            self.endpoint
                .post_json("/count", &CountBody { text }, Duration::from_millis(self.endpoint.timeout_ms))?;
        Ok(reply.count)
    }

    fn name(&self) -> String {
        format!("http:{}", self.endpoint.url)
    }
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    tokens: &'a [String],
}

#[derive(Deserialize)]
struct EmbedReply {
    embeddings: Vec<Vec<f32>>,
}

/// `/embed_tokens` client used for BERTScore with a real encoder.
#[derive(Debug, Clone)]
pub struct HttpTokenEmbedder {
    pub endpoint: Endpoint,
}

impl TokenEmbedder for HttpTokenEmbedder {
    fn embed_tokens(&self, tokens: &[String]) -> Result<TokenMatrix> {
        let reply: EmbedReply =
            self.endpoint
                .post_json("/embed_tokens", &EmbedBody { tokens }, Duration::from_millis(self.endpoint.timeout_ms))?;
        TokenMatrix::from_rows(&reply.embeddings)
    }

    fn name(&self) -> String {
        format!("http:{}", self.endpoint.url)
    }
}
