//! Lean 4 statement checking.
//!
//! Statements are elaborated by a Lean REPL child process speaking
//! newline-delimited JSON: one `{"cmd": ...}` object followed by a blank line
//! per request, one JSON object per response. [`classify_messages`] turns a
//! response into a [`VerificationResult`]; it is a pure function so the
//! classification rules can be pinned by transcript fixtures.

mod repl;
mod stub;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use repl::{encode_request, ReplConfig, ReplPool, ReplSession};
pub use stub::StubVerifier;

/// Warning text Lean emits for a declaration proved with `sorry`.
pub const SORRY_MARKER: &str = "declaration uses 'sorry'";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationStatus {
    Pass,
    PassWithSorry,
    Error,
    Timeout,
    Crash,
}

impl VerificationStatus {
    /// Whether the statement elaborated (with or without a `sorry`).
    pub fn is_valid(self) -> bool {
        matches!(self, VerificationStatus::Pass | VerificationStatus::PassWithSorry)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeanMessage {
    pub severity: Severity,
    pub line: u32,
    pub column: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub status: VerificationStatus,
    #[serde(default)]
    pub messages: Vec<LeanMessage>,
    #[serde(default)]
    pub elapsed_ms: u64,
    /// Undecodable response text, kept for crash diagnosis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl VerificationResult {
    pub fn timeout(elapsed_ms: u64) -> Self {
        Self {
            status: VerificationStatus::Timeout,
            messages: Vec::new(),
            elapsed_ms,
            raw: None,
        }
    }

    pub fn crash(raw: impl Into<String>) -> Self {
        Self {
            status: VerificationStatus::Crash,
            messages: Vec::new(),
            elapsed_ms: 0,
            raw: Some(raw.into()),
        }
    }

    /// An error result that never reached Lean, e.g. no declaration in the model output.
    pub fn synthetic_error(text: impl Into<String>) -> Self {
        Self {
            status: VerificationStatus::Error,
            messages: vec![LeanMessage {
                severity: Severity::Error,
                line: 0,
                column: 0,
                text: text.into(),
            }],
            elapsed_ms: 0,
            raw: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("failed to launch REPL: {0}")]
    LaunchFailed(String),
    #[error("REPL did not finish loading the header within {0:.3}s")]
    StartupTimeout(f64),
    #[error("REPL rejected the header: {0}")]
    HeaderRejected(String),
    #[error("REPL session died: {0}")]
    SessionDead(String),
    #[error("invalid stub verifier file: {0}")]
    StubFile(String),
    #[error("i/o error talking to REPL: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything that can check a statement. Errors are reserved for
/// infrastructure failures; bad statements come back as results.
pub trait Verifier: Send + Sync {
    fn verify(&self, statement: &str) -> Result<VerificationResult, VerifyError>;
}

fn parse_severity(s: &str) -> Option<Severity> {
    match s {
        "error" => Some(Severity::Error),
        "warning" => Some(Severity::Warning),
        "info" | "information" => Some(Severity::Info),
        _ => None,
    }
}

fn parse_message(v: &Value) -> Option<LeanMessage> {
    let severity = parse_severity(v.get("severity")?.as_str()?)?;
    let text = v.get("data")?.as_str()?.to_string();
    let pos = v.get("pos");
    let coord = |k: &str| pos.and_then(|p| p.get(k)).and_then(Value::as_u64).unwrap_or(0) as u32;
    Some(LeanMessage {
        severity,
        line: coord("line"),
        column: coord("column"),
        text,
    })
}

/// Classifies one REPL response.
///
/// `error` if any message has error severity; otherwise `pass_with_sorry` if
/// the `sorries` array is non-empty or a warning carries the sorry marker;
/// otherwise `pass`. Responses that are not objects, have a non-array
/// `messages`, carry undecodable messages, or are REPL-level failures
/// (`{"message": ...}`) classify as `crash`.
pub fn classify_messages(response: &Value) -> VerificationResult {
    let Some(obj) = response.as_object() else {
        return VerificationResult::crash(response.to_string());
    };
    if obj.get("messages").is_none() && obj.get("env").is_none() {
        if let Some(msg) = obj.get("message").and_then(Value::as_str) {
            return VerificationResult::crash(format!("REPL error: {msg}"));
        }
    }

    let messages = match obj.get("messages") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => {
            let parsed: Option<Vec<_>> = items.iter().map(parse_message).collect();
            match parsed {
                Some(m) => m,
                None => return VerificationResult::crash(response.to_string()),
            }
        }
        Some(_) => return VerificationResult::crash(response.to_string()),
    };
    let sorries = match obj.get("sorries") {
        None | Some(Value::Null) => 0,
        Some(Value::Array(s)) => s.len(),
        Some(_) => return VerificationResult::crash(response.to_string()),
    };

    let has_error = messages.iter().any(|m| m.severity == Severity::Error);
    let sorry_warning = messages
        .iter()
        .any(|m| m.severity == Severity::Warning && m.text.contains(SORRY_MARKER));
    let status = if has_error {
        VerificationStatus::Error
    } else if sorries > 0 || sorry_warning {
        VerificationStatus::PassWithSorry
    } else {
        VerificationStatus::Pass
    };
    VerificationResult {
        status,
        messages,
        elapsed_ms: 0,
        raw: None,
    }
}

/// Classifies raw response text; undecodable text is a crash with the text preserved.
pub fn classify_response_text(text: &str) -> VerificationResult {
    match serde_json::from_str::<Value>(text) {
        Ok(v) => classify_messages(&v),
        Err(_) => VerificationResult::crash(text),
    }
}

/// Error feedback for a failed check, one diagnostic per line.
pub fn summarize_errors(r: &VerificationResult) -> String {
    match r.status {
        VerificationStatus::Timeout => {
            format!(
                "verification timed out after {}s",
                (r.elapsed_ms as f64 / 1000.0).round()
            )
        }
        VerificationStatus::Crash => format!(
            "verification crashed: {}",
            r.raw.as_deref().unwrap_or("no response from Lean")
        ),
        _ => r
            .messages
            .iter()
            .filter(|m| m.severity == Severity::Error)
            .map(|m| format!("line {}, col {}: {}", m.line, m.column, m.text))
            .collect::<Vec<_>>()
            .join("\n"),
    }
}
