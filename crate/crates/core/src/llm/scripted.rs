use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendFailure, BackendReply, ChatBackend, ChatRequest, ModelEndpoint, ModelRole};

/// Failure a script entry can inject instead of answering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedFailure {
    Timeout,
    RateLimited,
    ServerError,
    BadRequest,
}

/// One rule of a scripted backend. All present matchers must hold; the first
/// matching entry answers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<ModelRole>,
    /// Substrings that must all occur in the prompt text.
    #[serde(
        default,
        rename = "match",
        alias = "contains",
        deserialize_with = "one_or_many",
        skip_serializing_if = "Vec::is_empty"
    )]
    pub contains: Vec<String>,
    /// Hex SHA-256 of the prompt text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ScriptedFailure>,
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

impl ScriptEntry {
    pub fn new(contains: &str, response: &str) -> Self {
        Self {
            contains: vec![contains.to_string()],
            response: response.to_string(),
            ..Self::default()
        }
    }

    pub fn for_role(mut self, role: ModelRole) -> Self {
        self.role = Some(role);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn also(mut self, needle: &str) -> Self {
        self.contains.push(needle.to_string());
        self
    }

    pub fn tokens(mut self, prompt: u64, completion: u64) -> Self {
        self.prompt_tokens = Some(prompt);
        self.completion_tokens = Some(completion);
        self
    }

    pub fn failing(mut self, failure: ScriptedFailure) -> Self {
        self.error = Some(failure);
        self
    }

    fn matches(&self, req: &ChatRequest, prompt: &str, digest: &str) -> bool {
        self.role.is_none_or(|r| r == req.role)
            && self.seed.is_none_or(|s| req.seed == Some(s))
            && self
                .prompt_sha256
                .as_deref()
                .is_none_or(|h| h.eq_ignore_ascii_case(digest))
            && self.contains.iter().all(|c| prompt.contains(c.as_str()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Entries(Vec<ScriptEntry>),
    Wrapped { entries: Vec<ScriptEntry> },
}

/// Deterministic offline backend answering from a fixed rule list.
///
/// Responses depend only on the request, so concurrent callers see the same
/// answers in any order. Every request is captured for later inspection.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    captured: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self {
            entries,
            captured: Mutex::new(Vec::new()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let file: ScriptFile = serde_json::from_str(text)?;
        Ok(Self::new(match file {
            ScriptFile::Entries(e) | ScriptFile::Wrapped { entries: e } => e,
        }))
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    /// Every request seen so far, in arrival order.
    pub fn captured(&self) -> Vec<ChatRequest> {
        self.captured.lock().unwrap().clone()
    }

    pub fn prompt_digest(prompt: &str) -> String {
        hex::encode(Sha256::digest(prompt.as_bytes()))
    }

    fn resolve(&self, req: &ChatRequest) -> Result<BackendReply, BackendFailure> {
        let prompt = req.prompt_text();
        let digest = Self::prompt_digest(&prompt);
        let entry = self
            .entries
            .iter()
            .find(|e| e.matches(req, &prompt, &digest))
            .ok_or_else(|| {
                BackendFailure::ScriptMiss(format!(
                    "role={} seed={:?} sha256={} prompt starts {:?}",
                    req.role,
                    req.seed,
                    digest,
                    prompt.chars().take(80).collect::<String>()
                ))
            })?;
        if let Some(f) = entry.error {
            return Err(match f {
                ScriptedFailure::Timeout => BackendFailure::Timeout,
                ScriptedFailure::RateLimited => BackendFailure::RateLimited { retry_after: None },
                ScriptedFailure::ServerError => BackendFailure::Status {
                    code: 503,
                    body: "scripted outage".into(),
                },
                ScriptedFailure::BadRequest => BackendFailure::Status {
                    code: 400,
                    body: "scripted bad request".into(),
                },
            });
        }
        Ok(BackendReply {
            text: entry.response.clone(),
            prompt_tokens: entry
                .prompt_tokens
                .unwrap_or_else(|| prompt.split_whitespace().count() as u64),
            completion_tokens: entry
                .completion_tokens
                .unwrap_or_else(|| entry.response.split_whitespace().count() as u64),
        })
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(
        &self,
        _endpoint: &ModelEndpoint,
        request: &ChatRequest,
        _credential: Option<&str>,
    ) -> Result<BackendReply, BackendFailure> {
        self.captured.lock().unwrap().push(request.clone());
        self.resolve(request)
    }

    fn requires_credential(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Gateway, GatewayError, ModelRole};
    use std::sync::Arc;

    #[test]
    fn answers_from_first_matching_entry() {
        let backend = Arc::new(ScriptedBackend::new(vec![
            ScriptEntry::new("translate", "theorem test : 1 = 1 := by sorry").tokens(100, 200),
            ScriptEntry::new("translate", "never reached"),
        ]));
        let gw = Gateway::scripted(backend.clone());
        let req = gw.request(ModelRole::Translator, "please translate this");
        let a = gw.complete(&req).unwrap();
        let b = gw.complete(&req).unwrap();
        assert_eq!(a.text, "theorem test : 1 = 1 := by sorry");
        assert_eq!(a.text, b.text);
        assert_eq!((a.prompt_tokens, a.completion_tokens), (100, 200));
        assert_eq!(backend.captured().len(), 2);
    }

    #[test]
    fn empty_script_misses() {
        let gw = Gateway::scripted(Arc::new(ScriptedBackend::default()));
        let err = gw.complete(&gw.request(ModelRole::Judge, "anything")).unwrap_err();
        assert!(matches!(err, GatewayError::ScriptMiss(_)));
    }

    #[test]
    fn matches_on_prompt_hash_role_and_seed() {
        let prompt = "exact prompt";
        let h = ScriptedBackend::prompt_digest(prompt);
        let entries = vec![
            ScriptEntry {
                prompt_sha256: Some(h),
                response: "by hash".into(),
                ..ScriptEntry::default()
            }
            .for_role(ModelRole::Checker),
            ScriptEntry::new("", "seed two").with_seed(2),
            ScriptEntry::new("", "fallback"),
        ];
        let gw = Gateway::scripted(Arc::new(ScriptedBackend::new(entries)));
        assert_eq!(
            gw.complete(&gw.request(ModelRole::Checker, prompt)).unwrap().text,
            "by hash"
        );
        assert_eq!(
            gw.complete(&gw.request(ModelRole::Judge, prompt)).unwrap().text,
            "fallback"
        );
        let mut req = gw.request(ModelRole::Judge, "x");
        req.seed = Some(2);
        assert_eq!(gw.complete(&req).unwrap().text, "seed two");
    }

    #[test]
    fn parses_script_files() {
        let s = ScriptedBackend::from_json(
            r#"[{"match": "translate", "response": "r1", "prompt_tokens": 3, "completion_tokens": 4},
                {"match": ["a", "b"], "role": "checker", "response": "r2"},
                {"match": "down", "error": "server_error"}]"#,
        )
        .unwrap();
        assert_eq!(s.entries().len(), 3);
        assert_eq!(s.entries()[1].contains, vec!["a", "b"]);
        assert!(ScriptedBackend::from_json(r#"{"entries": []}"#).is_ok());
    }

    #[test]
    fn scripted_failures_surface_after_retries() {
        let gw = Gateway::scripted(Arc::new(ScriptedBackend::new(vec![
            ScriptEntry::new("down", "").failing(ScriptedFailure::ServerError)
        ])));
        let err = gw.complete(&gw.request(ModelRole::Translator, "down")).unwrap_err();
        assert!(matches!(err, GatewayError::BackendError { .. }));
    }
}
