//! Provider-agnostic chat completion gateway.
//!
//! Every model call in the pipeline goes through [`Gateway::complete`], which
//! resolves the role's endpoint, enforces that endpoint's rate and concurrency
//! limits, retries transient failures with exponential backoff, and records
//! token usage in a per-role ledger.

mod clock;
mod http;
mod ledger;
mod limit;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use clock::{Clock, SystemClock, VirtualClock};
pub use http::HttpBackend;
pub use ledger::{RoleUsage, UsageLedger};
pub use limit::{max_in_any_window, EndpointLimiter};
pub use scripted::{ScriptEntry, ScriptedBackend, ScriptedFailure};

/// The job a model performs in a run. Each role binds to one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Translator,
    Backtranslator,
    Checker,
    Judge,
    Rater,
    Prover,
}

impl ModelRole {
    pub const ALL: [ModelRole; 6] = [
        ModelRole::Translator,
        ModelRole::Backtranslator,
        ModelRole::Checker,
        ModelRole::Judge,
        ModelRole::Rater,
        ModelRole::Prover,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::Translator => "translator",
            ModelRole::Backtranslator => "backtranslator",
            ModelRole::Checker => "checker",
            ModelRole::Judge => "judge",
            ModelRole::Rater => "rater",
            ModelRole::Prover => "prover",
        }
    }
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown model role '{s}'"))
    }
}

/// Where a role's requests go and how hard they may be sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub model_name: String,
    pub base_url: String,
    /// Name of the environment variable holding the API key. Never the key itself.
    pub auth_env: String,
    pub max_concurrent: u32,
    pub requests_per_minute: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Per-request timeout in seconds for HTTP backends.
    #[serde(default = "default_request_timeout")]
    pub request_timeout_s: u64,
}

fn default_request_timeout() -> u64 {
    900
}

impl ModelEndpoint {
    /// Defaults for a role: translator samples at temperature 1.0 with a large
    /// completion budget; verdict-producing roles run cooler.
    pub fn default_for(role: ModelRole) -> Self {
        let (temperature, max_tokens) = match role {
            ModelRole::Translator => (1.0, 8192),
            ModelRole::Prover => (1.0, 8192),
            _ => (0.3, 4096),
        };
        Self {
            model_name: "deepseek-reasoner".into(),
            base_url: "https://api.deepseek.com/v1".into(),
            auth_env: "DEEPSEEK_API_KEY".into(),
            max_concurrent: 8,
            requests_per_minute: 60,
            temperature,
            max_tokens,
            request_timeout_s: default_request_timeout(),
        }
    }

    fn limiter_key(&self) -> (String, String) {
        (self.base_url.clone(), self.model_name.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: ModelRole,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// Concatenated message texts, used for script matching and hashing.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if !self.messages.iter().any(|m| m.speaker == Speaker::User) {
            return Err(GatewayError::InvalidRequest("request has no user message".into()));
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

/// What a backend hands back on success.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Backend-level failure of a single attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendFailure {
    Timeout,
    RateLimited { retry_after: Option<Duration> },
    Status { code: u16, body: String },
    Transport(String),
    Malformed(String),
    ScriptMiss(String),
}

impl BackendFailure {
    fn is_retryable(&self) -> bool {
        match self {
            BackendFailure::Timeout | BackendFailure::RateLimited { .. } => true,
            BackendFailure::Status { code, .. } => *code >= 500,
            _ => false,
        }
    }
}

/// A chat-completion transport.
pub trait ChatBackend: Send + Sync {
    fn send(
        &self,
        endpoint: &ModelEndpoint,
        request: &ChatRequest,
        credential: Option<&str>,
    ) -> Result<BackendReply, BackendFailure>;

    /// Whether the gateway must resolve a credential before calling `send`.
    fn requires_credential(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("no endpoint bound for role {0}")]
    UnboundRole(ModelRole),
    #[error("credential for role {role} missing: environment variable {var} is not set")]
    AuthMissing { role: ModelRole, var: String },
    #[error("role {role}: rate limited after {attempts} attempts")]
    RateLimitedExhausted { role: ModelRole, attempts: u32 },
    #[error("role {role}: backend error: {message}")]
    BackendError { role: ModelRole, message: String },
    #[error("role {role}: request timed out after {attempts} attempts")]
    Timeout { role: ModelRole, attempts: u32 },
    #[error("scripted backend has no entry for this request ({0})")]
    ScriptMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Retry schedule: `base * 2^k` plus up to `jitter` of that delay, for at most
/// `max_retries` retries. Only timeouts, 429s and 5xx are retried.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            base_delay: Duration::from_secs(1),
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let base = self.base_delay.saturating_mul(1u32 << retry.min(16));
        let extra = if self.jitter > 0.0 {
            base.mul_f64(rand::thread_rng().gen_range(0.0..self.jitter))
        } else {
            Duration::ZERO
        };
        base + extra
    }
}

type EnvLookup = Arc<dyn Fn(&str) -> Option<String> + Send + Sync>;

/// Shared, thread-safe front door to every model role.
pub struct Gateway {
    endpoints: BTreeMap<ModelRole, ModelEndpoint>,
    limiters: BTreeMap<ModelRole, Arc<EndpointLimiter>>,
    backend: Arc<dyn ChatBackend>,
    ledger: Mutex<UsageLedger>,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    env: EnvLookup,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("endpoints", &self.endpoints)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    /// Builds a gateway over `backend`. Roles missing from `endpoints` get
    /// [`ModelEndpoint::default_for`]. Roles that share a `(base_url, model)`
    /// pair share one limiter, using the strictest limits among them.
    pub fn new(mut endpoints: BTreeMap<ModelRole, ModelEndpoint>, backend: Arc<dyn ChatBackend>) -> Self {
        for role in ModelRole::ALL {
            endpoints
                .entry(role)
                .or_insert_with(|| ModelEndpoint::default_for(role));
        }

        let mut limits: BTreeMap<(String, String), (u32, u32)> = BTreeMap::new();
        for ep in endpoints.values() {
            let e = limits
                .entry(ep.limiter_key())
                .or_insert((ep.requests_per_minute, ep.max_concurrent));
            e.0 = e.0.min(ep.requests_per_minute);
            e.1 = e.1.min(ep.max_concurrent);
        }
        let shared: BTreeMap<_, _> = limits
            .into_iter()
            .map(|(k, (rpm, conc))| (k, Arc::new(EndpointLimiter::new(rpm, conc))))
            .collect();
        let limiters = endpoints
            .iter()
            .map(|(role, ep)| (*role, shared[&ep.limiter_key()].clone()))
            .collect();

        Self {
            endpoints,
            limiters,
            backend,
            ledger: Mutex::new(UsageLedger::default()),
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock::new()),
            env: Arc::new(|k| std::env::var(k).ok()),
        }
    }

    /// Gateway over a scripted backend with default endpoints and no retry delay.
    pub fn scripted(backend: Arc<ScriptedBackend>) -> Self {
        Self::new(BTreeMap::new(), backend).with_clock(Arc::new(VirtualClock::new()))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Overrides how credentials are looked up (tests inject a map here).
    pub fn with_env(mut self, env: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        self.env = Arc::new(env);
        self
    }

    pub fn endpoint(&self, role: ModelRole) -> Option<&ModelEndpoint> {
        self.endpoints.get(&role)
    }

    pub fn limiter(&self, role: ModelRole) -> Option<&Arc<EndpointLimiter>> {
        self.limiters.get(&role)
    }

    /// A single-user-message request using the role's configured sampling defaults.
    pub fn request(&self, role: ModelRole, prompt: impl Into<String>) -> ChatRequest {
        let ep = self
            .endpoints
            .get(&role)
            .cloned()
            .unwrap_or_else(|| ModelEndpoint::default_for(role));
        ChatRequest {
            role,
            messages: vec![ChatMessage {
                speaker: Speaker::User,
                text: prompt.into(),
            }],
            temperature: ep.temperature,
            max_tokens: ep.max_tokens,
            seed: None,
        }
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let role = req.role;
        let endpoint = self.endpoints.get(&role).ok_or(GatewayError::UnboundRole(role))?;
        let credential = if self.backend.requires_credential() {
            match (self.env)(&endpoint.auth_env) {
                Some(v) if !v.is_empty() => Some(v),
                _ => {
                    self.ledger.lock().unwrap().record_failure(role);
                    return Err(GatewayError::AuthMissing {
                        role,
                        var: endpoint.auth_env.clone(),
                    });
                }
            }
        } else {
            None
        };

        let limiter = &self.limiters[&role];
        let _permit = limiter.acquire();
        let mut retry = 0;
        loop {
            limiter.admit(self.clock.as_ref());
            let started = self.clock.now();
            let wall = std::time::Instant::now();
            let result = self.backend.send(endpoint, req, credential.as_deref());
            let latency = (self.clock.now().saturating_sub(started)).max(wall.elapsed());
            match result {
                Ok(reply) => {
                    let resp = ChatResponse {
                        text: reply.text,
                        prompt_tokens: reply.prompt_tokens,
                        completion_tokens: reply.completion_tokens,
                        latency_ms: latency.as_millis() as u64,
                    };
                    self.ledger.lock().unwrap().record(role, &resp);
                    return Ok(resp);
                }
                Err(failure) if failure.is_retryable() && retry < self.retry.max_retries => {
                    let mut delay = self.retry.delay(retry);
                    if let BackendFailure::RateLimited {
                        retry_after: Some(after),
                    } = failure
                    {
                        delay = delay.max(after);
                    }
                    log::warn!("{role}: transient failure {failure:?}; retrying in {delay:?}");
                    self.clock.sleep(delay);
                    retry += 1;
                }
                Err(failure) => {
                    self.ledger.lock().unwrap().record_failure(role);
                    let attempts = retry + 1;
                    return Err(match failure {
                        BackendFailure::Timeout => GatewayError::Timeout { role, attempts },
                        BackendFailure::RateLimited { .. } => GatewayError::RateLimitedExhausted { role, attempts },
                        BackendFailure::ScriptMiss(m) => GatewayError::ScriptMiss(m),
                        BackendFailure::Status { code, body } => GatewayError::BackendError {
                            role,
                            message: format!("HTTP {code}: {}", truncate(&body, 400)),
                        },
                        BackendFailure::Transport(m) | BackendFailure::Malformed(m) => {
                            GatewayError::BackendError { role, message: m }
                        }
                    });
                }
            }
        }
    }

    /// Point-in-time copy of the usage ledger.
    pub fn usage_totals(&self) -> UsageLedger {
        self.ledger.lock().unwrap().clone()
    }

    /// Adds externally measured usage to the ledger (e.g. imported from another run).
    pub fn record_usage(&self, role: ModelRole, prompt_tokens: u64, completion_tokens: u64) {
        self.ledger.lock().unwrap().record(
            role,
            &ChatResponse {
                text: String::new(),
                prompt_tokens,
                completion_tokens,
                latency_ms: 0,
            },
        );
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        fail_first: u32,
        failure: BackendFailure,
        calls: AtomicU32,
    }

    impl ChatBackend for Flaky {
        fn send(
            &self,
            _: &ModelEndpoint,
            _: &ChatRequest,
            credential: Option<&str>,
        ) -> Result<BackendReply, BackendFailure> {
            assert_eq!(credential, Some("sk-secret"));
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(self.failure.clone())
            } else {
                Ok(BackendReply {
                    text: "ok".into(),
                    prompt_tokens: 1,
                    completion_tokens: 2,
                })
            }
        }
    }

    fn gateway(fail_first: u32, failure: BackendFailure) -> (Gateway, Arc<Flaky>, Arc<VirtualClock>) {
        let backend = Arc::new(Flaky {
            fail_first,
            failure,
            calls: AtomicU32::new(0),
        });
        let clock = Arc::new(VirtualClock::new());
        let gw = Gateway::new(BTreeMap::new(), backend.clone())
            .with_clock(clock.clone())
            .with_retry(RetryPolicy {
                jitter: 0.0,
                ..RetryPolicy::default()
            })
            .with_env(|k| (k == "DEEPSEEK_API_KEY").then(|| "sk-secret".to_string()));
        (gw, backend, clock)
    }

    #[test]
    fn retries_transient_failures_with_exponential_backoff() {
        let (gw, backend, clock) = gateway(
            3,
            BackendFailure::Status {
                code: 503,
                body: String::new(),
            },
        );
        let resp = gw.complete(&gw.request(ModelRole::Checker, "hi")).unwrap();
        assert_eq!(resp.text, "ok");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 4);
        // 1 + 2 + 4 seconds of backoff
        assert_eq!(clock.now(), Duration::from_secs(7));
    }

    #[test]
    fn exhausted_rate_limit_is_reported() {
        let (gw, backend, _) = gateway(100, BackendFailure::RateLimited { retry_after: None });
        let err = gw.complete(&gw.request(ModelRole::Judge, "hi")).unwrap_err();
        assert_eq!(
            err,
            GatewayError::RateLimitedExhausted {
                role: ModelRole::Judge,
                attempts: 5
            }
        );
        assert_eq!(backend.calls.load(Ordering::SeqCst), 5);
        assert_eq!(gw.usage_totals().role(ModelRole::Judge).failure_count, 1);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (gw, backend, _) = gateway(
            100,
            BackendFailure::Status {
                code: 400,
                body: "bad".into(),
            },
        );
        let err = gw.complete(&gw.request(ModelRole::Judge, "hi")).unwrap_err();
        assert!(matches!(err, GatewayError::BackendError { .. }));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn timeouts_map_to_timeout_error() {
        let (gw, _, _) = gateway(100, BackendFailure::Timeout);
        let err = gw.complete(&gw.request(ModelRole::Rater, "hi")).unwrap_err();
        assert_eq!(
            err,
            GatewayError::Timeout {
                role: ModelRole::Rater,
                attempts: 5
            }
        );
    }

    #[test]
    fn missing_credential_names_the_variable_only() {
        let (gw, _, _) = gateway(0, BackendFailure::Timeout);
        let gw = gw.with_env(|_| None);
        let err = gw.complete(&gw.request(ModelRole::Translator, "hi")).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("DEEPSEEK_API_KEY"));
        assert!(!text.contains("sk-secret"));
    }

    #[test]
    fn request_validation() {
        let (gw, _, _) = gateway(0, BackendFailure::Timeout);
        let mut req = gw.request(ModelRole::Translator, "x");
        req.temperature = f64::NAN;
        assert!(matches!(gw.complete(&req), Err(GatewayError::InvalidRequest(_))));
        let mut req = gw.request(ModelRole::Translator, "x");
        req.messages[0].speaker = Speaker::System;
        assert!(matches!(gw.complete(&req), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn role_defaults() {
        assert_eq!(ModelEndpoint::default_for(ModelRole::Translator).temperature, 1.0);
        assert_eq!(ModelEndpoint::default_for(ModelRole::Translator).max_tokens, 8192);
        assert_eq!(ModelEndpoint::default_for(ModelRole::Checker).temperature, 0.3);
        for r in ModelRole::ALL {
            assert_eq!(r.as_str().parse::<ModelRole>().unwrap(), r);
        }
    }
}
