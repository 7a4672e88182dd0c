use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{classify_messages, VerificationResult, Verifier, VerifyError};

#[derive(Debug, Clone, Deserialize)]
struct StubRule {
    #[serde(rename = "match", alias = "contains")]
    needle: String,
    #[serde(default)]
    response: Option<Value>,
    #[serde(default)]
    timeout: bool,
}

#[derive(Debug, Clone, Deserialize)]
struct StubFile {
    #[serde(default)]
    rules: Vec<StubRule>,
    #[serde(default)]
    default: Option<Value>,
}

/// Offline verifier answering with canned REPL responses.
///
/// The first rule whose `match` substring occurs in the statement supplies the
/// response object, which is then classified exactly like a live reply. With
/// no matching rule and no `default`, statements containing `sorry` get the
/// sorry warning and everything else passes cleanly.
#[derive(Debug, Clone, Default)]
pub struct StubVerifier {
    rules: Vec<StubRule>,
    default: Option<Value>,
}

impl StubVerifier {
    pub fn from_json(text: &str) -> Result<Self, VerifyError> {
        let f: StubFile = serde_json::from_str(text).map_err(|e| VerifyError::StubFile(e.to_string()))?;
        Ok(Self {
            rules: f.rules,
            default: f.default,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, VerifyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Statements containing `needle` get `response`.
    pub fn rule(mut self, needle: &str, response: Value) -> Self {
        self.rules.push(StubRule {
            needle: needle.into(),
            response: Some(response),
            timeout: false,
        });
        self
    }

    pub fn timeout_on(mut self, needle: &str) -> Self {
        self.rules.push(StubRule {
            needle: needle.into(),
            response: None,
            timeout: true,
        });
        self
    }

    pub fn error_on(self, needle: &str, message: &str) -> Self {
        self.rule(
            needle,
            json!({"messages": [{"severity": "error", "pos": {"line": 1, "column": 0}, "data": message}]}),
        )
    }
}

impl Verifier for StubVerifier {
    fn verify(&self, statement: &str) -> Result<VerificationResult, VerifyError> {
        if let Some(rule) = self.rules.iter().find(|r| statement.contains(&r.needle)) {
            if rule.timeout {
                return Ok(VerificationResult::timeout(0));
            }
            if let Some(resp) = &rule.response {
                return Ok(classify_messages(resp));
            }
        }
        let fallback = self.default.clone().unwrap_or_else(|| {
            if statement.contains("sorry") {
                json!({"messages": [{"severity": "warning", "pos": {"line": 1, "column": 8}, "data": "declaration uses 'sorry'"}], "env": 0})
            } else {
                json!({"env": 0})
            }
        });
        Ok(classify_messages(&fallback))
    }
}
