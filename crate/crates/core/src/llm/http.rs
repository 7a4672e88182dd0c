use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::RETRY_AFTER;
use serde_json::{json, Value};

use super::{BackendFailure, BackendReply, ChatBackend, ChatRequest, ModelEndpoint, Speaker};

/// Backend speaking the common `/chat/completions` JSON schema.
#[derive(Debug, Clone, Default)]
pub struct HttpBackend {
    client: Client,
}

impl HttpBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn request_body(endpoint: &ModelEndpoint, req: &ChatRequest) -> Value {
        let messages: Vec<Value> = req
            .messages
            .iter()
            .map(|m| {
                let role = match m.speaker {
                    Speaker::System => "system",
                    Speaker::User => "user",
                };
                json!({"role": role, "content": m.text})
            })
            .collect();
        let mut body = json!({
            "model": endpoint.model_name,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    pub fn parse_reply(body: &Value) -> Result<BackendReply, BackendFailure> {
        let text = body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendFailure::Malformed("response has no choices[0].message.content".into()))?;
        let usage = |k: &str| {
            body.pointer(&format!("/usage/{k}"))
                .and_then(Value::as_u64)
                .unwrap_or(0)
        };
        Ok(BackendReply {
            text: text.to_string(),
            prompt_tokens: usage("prompt_tokens"),
            completion_tokens: usage("completion_tokens"),
        })
    }
}

impl ChatBackend for HttpBackend {
    fn send(
        &self,
        endpoint: &ModelEndpoint,
        req: &ChatRequest,
        credential: Option<&str>,
    ) -> Result<BackendReply, BackendFailure> {
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        let mut builder = self
            .client
            .post(url)
            .timeout(Duration::from_secs(endpoint.request_timeout_s))
            .json(&Self::request_body(endpoint, req));
        if let Some(key) = credential {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                BackendFailure::Timeout
            } else {
                BackendFailure::Transport(e.without_url().to_string())
            }
        })?;
        let status = resp.status();
        if status.as_u16() == 429 {
            let retry_after = resp
                .headers()
                .get(RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(BackendFailure::RateLimited { retry_after });
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(BackendFailure::Status {
                code: status.as_u16(),
                body,
            });
        }
        let body: Value = resp.json().map_err(|e| {
            if e.is_timeout() {
                BackendFailure::Timeout
            } else {
                BackendFailure::Malformed(e.without_url().to_string())
            }
        })?;
        Self::parse_reply(&body)
    }
}
