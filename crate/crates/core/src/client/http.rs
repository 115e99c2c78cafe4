use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{ChatRequest, ChatResponse, FinishReason, ModelClient, ModelEndpointConfig, RetryPolicy, TokenScore};
use crate::error::{Error, Result};

/// Append-only JSON-lines log of every request and response.
#[derive(Clone)]
pub struct RequestLog {
    file: Arc<Mutex<File>>,
}

impl RequestLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Arc::new(Mutex::new(file)) })
    }

    fn record(&self, endpoint: &str, request: &Value, outcome: std::result::Result<&Value, &str>) {
        let line = match outcome {
            Ok(resp) => json!({"endpoint": endpoint, "request": request, "response": resp}),
            Err(err) => json!({"endpoint": endpoint, "request": request, "error": err}),
        };
        if let Ok(mut f) = self.file.lock() {
            let _ = writeln!(f, "{line}");
        }
    }
}

/// Client for endpoints following the widely used chat-completions shape.
///
/// Token scoring uses the legacy `completions` route with `echo` and
/// `logprobs`, which self-hosted servers commonly expose.
pub struct HttpClient {
    config: ModelEndpointConfig,
    api_key: Option<String>,
    http: Client,
    log: Option<RequestLog>,
}

impl HttpClient {
    /// Reads the API key from the environment variable named in `config`.
    pub fn new(config: ModelEndpointConfig) -> Result<Self> {
        config.validate()?;
        let api_key = std::env::var(&config.credential_env).ok().filter(|k| !k.is_empty());
        let http = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { config, api_key, http, log: None })
    }

    pub fn with_log(mut self, log: RequestLog) -> Self {
        self.log = Some(log);
        self
    }

    fn url(&self, route: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), route)
    }

    fn post(&self, route: &str, body: Value) -> Result<Value> {
        let mut req = self.http.post(self.url(route)).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let result = match req.send() {
            Err(e) => Err(Error::Transport(e.to_string())),
            Ok(resp) => {
                let status = resp.status();
                let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
                if status.is_success() {
                    serde_json::from_str::<Value>(&text).map_err(|e| Error::Contract(format!("malformed response: {e}")))
                } else if status == StatusCode::TOO_MANY_REQUESTS
                    || status == StatusCode::REQUEST_TIMEOUT
                    || status.is_server_error()
                {
                    Err(Error::Transport(format!("HTTP {status}: {text}")))
                } else {
                    Err(Error::Contract(format!("HTTP {status}: {text}")))
                }
            }
        };
        if let Some(log) = &self.log {
            match &result {
                Ok(v) => log.record(route, &body, Ok(v)),
                Err(e) => log.record(route, &body, Err(&e.to_string())),
            }
        }
        result
    }
}

fn contract(msg: &str) -> Error {
    Error::Contract(format!("unexpected response shape: {msg}"))
}

fn finish_reason(raw: Option<&str>) -> FinishReason {
    match raw {
        Some("length") => FinishReason::Length,
        Some("content_filter") => FinishReason::ContentFilter,
        _ => FinishReason::Stop,
    }
}

impl ModelClient for HttpClient {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "seed": request.seed,
            "n": 1,
        });
        if let Some(max) = request.max_tokens {
            body["max_tokens"] = json!(max);
        }
        let resp = self.post("chat/completions", body)?;
        let choice = resp["choices"].get(0).ok_or_else(|| contract("no choices"))?;
        let text = choice["message"]["content"].as_str().unwrap_or_default().to_string();
        Ok(ChatResponse { text, finish_reason: finish_reason(choice["finish_reason"].as_str()) })
    }

    fn score(&self, text: &str, conditioning: Option<&str>, top_k: usize) -> Result<Vec<TokenScore>> {
        let prefix = conditioning.map(|c| format!("{c}\n")).unwrap_or_default();
        let prompt = format!("{prefix}{text}");
        let body = json!({
            "model": self.config.model,
            "prompt": prompt,
            "echo": true,
            "max_tokens": 1,
            "temperature": 0.0,
            "logprobs": top_k,
        });
        let resp = self.post("completions", body)?;
        let lp = &resp["choices"][0]["logprobs"];
        let (Some(tokens), Some(token_lps), Some(tops)) = (
            lp["tokens"].as_array(),
            lp["token_logprobs"].as_array(),
            lp["top_logprobs"].as_array(),
        ) else {
            return Err(Error::Capability(
                "endpoint returned no prompt logprobs; use the mock client or an endpoint supporting echo+logprobs".into(),
            ));
        };
        let offsets = lp["text_offset"].as_array();
        if offsets.is_none() && conditioning.is_some() {
            return Err(contract("token offsets missing"));
        }
        let start = prefix.chars().count() as u64;
        let end = prompt.chars().count() as u64;

        let mut scores = Vec::new();
        // Without offsets, only the trailing generated token can be excluded.
        let limit = if offsets.is_some() { tokens.len() } else { tokens.len().saturating_sub(1) };
        for (i, tok) in tokens.iter().enumerate().take(limit) {
            if let Some(off) = offsets.and_then(|o| o.get(i)).and_then(Value::as_u64) {
                if off < start || off >= end {
                    continue;
                }
            }
            // The first prompt token has no probability.
            let Some(logprob) = token_lps.get(i).and_then(Value::as_f64) else { continue };
            let mut alts: Vec<(String, f64)> = tops
                .get(i)
                .and_then(Value::as_object)
                .map(|m| m.iter().filter_map(|(t, v)| Some((t.clone(), v.as_f64()?))).collect())
                .unwrap_or_default();
            alts.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            alts.truncate(top_k);
            scores.push(TokenScore {
                token: tok.as_str().unwrap_or_default().to_string(),
                logprob,
                top_alternatives: alts,
            });
        }
        Ok(scores)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let model = self.config.embedding_model.as_deref().unwrap_or(&self.config.model);
        let resp = self.post("embeddings", json!({"model": model, "input": text}))?;
        resp["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| contract("no embedding"))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| contract("non-numeric embedding")))
            .collect()
    }

    fn max_concurrency(&self) -> usize {
        self.config.max_concurrency
    }

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy { attempts: self.config.max_retries, ..RetryPolicy::default() }
    }
}
