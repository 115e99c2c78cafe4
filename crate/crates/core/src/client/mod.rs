//! Access to chat-completion, scoring and embedding endpoints.
//!
//! [`ModelClient`] is the narrow transport surface. The free functions in
//! this module build the higher-level operations on top of it: paraphrase
//! generation, bounded-concurrency answer sampling with retries, token
//! scoring and embeddings. [`MockClient`] answers every call
//! deterministically and offline; [`HttpClient`] talks to endpoints that
//! follow the common chat-completions JSON shape.

mod http;
mod mock;
mod pool;

use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{param, Error, Result};
use crate::prompts::{render, PARAPHRASE};

pub use http::{HttpClient, RequestLog};
pub use mock::{AnswerProfile, MockAnswers, MockClient, MockProbe};
pub use pool::bounded_map;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestPurpose {
    Paraphrase,
    Answer,
    Summarize,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub purpose: RequestPurpose,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    /// Per-request sampling seed, forwarded to endpoints that accept one.
    pub seed: u64,
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(purpose: RequestPurpose, prompt: impl Into<String>, temperature: f64, seed: u64) -> Self {
        Self {
            purpose,
            messages: vec![ChatMessage::user(prompt)],
            temperature,
            seed,
            max_tokens: None,
        }
    }

    pub fn prompt(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    ContentFilter,
    /// Every retry failed; the slot counts as an invalid response.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
}

/// One answer sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledResponse {
    pub paraphrase_index: usize,
    pub text: String,
    pub finish_reason: FinishReason,
}

/// Realized token with its top-k alternatives (natural-log probabilities).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub logprob: f64,
    pub top_alternatives: Vec<(String, f64)>,
}

/// How many samples to draw and how to spread them over paraphrases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_paraphrases: usize,
    pub samples_per_paraphrase: usize,
    pub temperature: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { n_paraphrases: 20, samples_per_paraphrase: 5, temperature: 1.0 }
    }
}

impl SamplingConfig {
    /// Splits `n_samples` evenly over `n_paraphrases`.
    pub fn even(n_samples: usize, n_paraphrases: usize, temperature: f64) -> Result<Self> {
        if n_paraphrases == 0 || !n_samples.is_multiple_of(n_paraphrases) {
            return param(format!("{n_samples} samples do not split evenly over {n_paraphrases} paraphrases"));
        }
        let cfg = Self {
            n_paraphrases,
            samples_per_paraphrase: n_samples / n_paraphrases,
            temperature,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_samples(&self) -> usize {
        self.n_paraphrases * self.samples_per_paraphrase
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paraphrases == 0 || self.samples_per_paraphrase == 0 {
            return param("sampling needs at least one paraphrase and one sample each");
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return param(format!("temperature {} must be positive", self.temperature));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub credential_env: String,
    pub embedding_model: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_concurrency: usize,
    pub top_logprobs: usize,
}

impl Default for ModelEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "mock".into(),
            credential_env: "KSCOPE_API_KEY".into(),
            embedding_model: None,
            timeout_secs: 120,
            max_retries: 3,
            max_concurrency: 8,
            top_logprobs: 20,
        }
    }
}

impl ModelEndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency == 0 {
            return param("max concurrency must be at least 1");
        }
        if self.max_retries == 0 {
            return param("max retries must be at least 1 attempt");
        }
        Ok(())
    }
}

/// Transport surface of a model endpoint.
pub trait ModelClient: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse>;

    /// Log-probabilities of every token of `text`, optionally conditioned on
    /// a preceding `conditioning` text.
    fn score(&self, text: &str, conditioning: Option<&str>, top_k: usize) -> Result<Vec<TokenScore>>;

    fn embed(&self, text: &str) -> Result<Vec<f64>>;

    fn max_concurrency(&self) -> usize {
        1
    }

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(250) }
    }
}

/// Retries transport failures with exponential backoff.
pub fn with_retries<T>(policy: RetryPolicy, mut call: impl FnMut() -> Result<T>) -> Result<T> {
    let mut delay = policy.base_delay;
    let mut attempt = 1;
    loop {
        match call() {
            Err(Error::Transport(msg)) if attempt < policy.attempts => {
                warn!("transport failure (attempt {attempt}/{}): {msg}", policy.attempts);
                std::thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Stable 64-bit hash of byte strings, independent of platform and run.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Request seed derived from a run seed and a slot description.
pub fn request_seed(run_seed: u64, key: &str, slot: usize) -> u64 {
    stable_hash(&[&run_seed.to_le_bytes(), key.as_bytes(), &(slot as u64).to_le_bytes()])
}

/// Paraphrases of a question; the first entry is the question itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paraphrases {
    pub texts: Vec<String>,
    pub requested: usize,
    /// Duplicate or empty outputs dropped from the result.
    pub dropped: usize,
}

/// Asks the model for `m - 1` rephrasings of `question`.
pub fn generate_paraphrases(
    client: &dyn ModelClient,
    question: &str,
    m: usize,
    temperature: f64,
    run_seed: u64,
) -> Result<Paraphrases> {
    if m == 0 {
        return param("at least one paraphrase is required");
    }
    let prompt = render(PARAPHRASE, &[("question", question)]);
    let slots: Vec<usize> = (1..m).collect();
    let policy = client.retry_policy();
    let outputs = bounded_map(&slots, client.max_concurrency(), |_, &slot| {
        let req = ChatRequest::new(
            RequestPurpose::Paraphrase,
            prompt.clone(),
            temperature,
            request_seed(run_seed, question, slot),
        );
        with_retries(policy, || client.chat(&req))
    });

    let mut texts = vec![question.to_string()];
    let mut dropped = 0;
    for out in outputs {
        let text = out?.text.trim().to_string();
        if text.is_empty() || texts.contains(&text) {
            dropped += 1;
        } else {
            texts.push(text);
        }
    }
    if dropped > 0 {
        warn!("paraphrasing produced {} distinct texts of {m} requested ({dropped} dropped)", texts.len());
    }
    Ok(Paraphrases { texts, requested: m, dropped })
}

/// Draws `n` answers to one prompt.
pub fn sample_answers(
    client: &dyn ModelClient,
    prompt: &str,
    n: usize,
    temperature: f64,
    run_seed: u64,
) -> Result<Vec<SampledResponse>> {
    if n == 0 {
        return param("at least one sample is required");
    }
    sample_paraphrased(client, &[prompt.to_string()], n, temperature, run_seed)
}

/// Draws `per_prompt` answers for each prompt, returned grouped by prompt in
/// request order. A slot whose retries are exhausted comes back as an empty
/// [`FinishReason::Failed`] response.
pub fn sample_paraphrased(
    client: &dyn ModelClient,
    prompts: &[String],
    per_prompt: usize,
    temperature: f64,
    run_seed: u64,
) -> Result<Vec<SampledResponse>> {
    if temperature.is_nan() || temperature <= 0.0 {
        return param(format!("temperature {temperature} must be positive"));
    }
    let slots: Vec<(usize, usize)> = (0..prompts.len())
        .flat_map(|p| (0..per_prompt).map(move |s| (p, s)))
        .collect();
    let policy = client.retry_policy();
    let results = bounded_map(&slots, client.max_concurrency(), |_, &(p, s)| {
        let req = ChatRequest::new(
            RequestPurpose::Answer,
            prompts[p].clone(),
            temperature,
            request_seed(run_seed, &prompts[p], s),
        );
        with_retries(policy, || client.chat(&req))
    });
    slots
        .iter()
        .zip(results)
        .map(|(&(p, _), r)| match r {
            Ok(resp) => Ok(SampledResponse {
                paraphrase_index: p,
                text: resp.text,
                finish_reason: resp.finish_reason,
            }),
            Err(Error::Transport(msg)) => {
                warn!("sample for paraphrase {p} failed after retries: {msg}");
                Ok(SampledResponse {
                    paraphrase_index: p,
                    text: String::new(),
                    finish_reason: FinishReason::Failed,
                })
            }
            Err(e) => Err(e),
        })
        .collect()
}

/// Token scores for `text`, rejecting empty input.
pub fn score_text(
    client: &dyn ModelClient,
    text: &str,
    conditioning: Option<&str>,
    top_k: usize,
) -> Result<Vec<TokenScore>> {
    if text.trim().is_empty() {
        return param("cannot score empty text");
    }
    if top_k == 0 {
        return param("top-k must be positive");
    }
    with_retries(client.retry_policy(), || client.score(text, conditioning, top_k))
}

pub fn embed_text(client: &dyn ModelClient, text: &str) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return param("cannot embed empty text");
    }
    with_retries(client.retry_policy(), || client.embed(text))
}
