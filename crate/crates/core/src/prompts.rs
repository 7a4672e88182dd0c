//! Prompt families and parsers for what comes back.
//!
//! Templates live in `templates/` as plain text with named `{placeholders}`.
//! Substitution is a single left-to-right pass, so problem text that happens to
//! contain `{problem}` or braces is inserted verbatim and never re-expanded.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::Problem;

pub const PROOF_PLACEHOLDER: &str = ":= by sorry";

pub const TRANSLATE_FEW_SHOT: &str = include_str!("../templates/translate_few_shot.txt");
pub const TRANSLATE_ZERO_SHOT: &str = include_str!("../templates/translate_zero_shot.txt");
pub const TRANSLATE_FEEDBACK: &str = include_str!("../templates/translate_feedback.txt");
pub const BACKTRANSLATE: &str = include_str!("../templates/backtranslate.txt");
pub const CONSISTENCY: &str = include_str!("../templates/consistency.txt");
pub const RATING: &str = include_str!("../templates/rating.txt");
pub const PROVE: &str = include_str!("../templates/prove.txt");

const DEFAULT_EXEMPLARS: &str = include_str!("../fixtures/exemplars.json");

/// Substitutes `{key}` occurrences for the given keys in one pass.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + vars.iter().map(|v| v.1.len()).sum::<usize>());
    let mut rest = template;
    'scan: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (key, value) in vars {
            let token_len = key.len() + 2;
            if tail.len() >= token_len && tail.as_bytes()[token_len - 1] == b'}' && &tail[1..token_len - 1] == *key {
                out.push_str(value);
                rest = &tail[token_len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    Algebra,
    NumberTheory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExemplar {
    pub nl_statement: String,
    pub lean_statement: String,
    pub topic: Topic,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("exemplar set needs exactly one algebra and one number theory exemplar")]
    ExemplarTopics,
    #[error("exemplar texts must be non-empty and the Lean text must end with the proof placeholder")]
    ExemplarShape,
    #[error("invalid exemplar file: {0}")]
    ExemplarFile(String),
}

/// The two fixed translation exemplars: one algebra, one number theory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExemplarSet {
    exemplars: [FewShotExemplar; 2],
}

impl ExemplarSet {
    pub fn new(exemplars: Vec<FewShotExemplar>) -> Result<Self, PromptError> {
        let [a, b]: [FewShotExemplar; 2] = exemplars.try_into().map_err(|_| PromptError::ExemplarTopics)?;
        let mut topics = [a.topic, b.topic];
        topics.sort_by_key(|t| *t as u8);
        if topics != [Topic::Algebra, Topic::NumberTheory] {
            return Err(PromptError::ExemplarTopics);
        }
        for e in [&a, &b] {
            if e.nl_statement.trim().is_empty() || !e.lean_statement.trim_end().ends_with(PROOF_PLACEHOLDER) {
                return Err(PromptError::ExemplarShape);
            }
        }
        Ok(Self { exemplars: [a, b] })
    }

    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let v: Vec<FewShotExemplar> =
            serde_json::from_str(text).map_err(|e| PromptError::ExemplarFile(e.to_string()))?;
        Self::new(v)
    }

    /// The exemplars shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_EXEMPLARS).expect("bundled exemplars are valid")
    }

    pub fn exemplars(&self) -> &[FewShotExemplar] {
        &self.exemplars
    }

    /// The `{few_shot}` block.
    pub fn render_block(&self) -> String {
        let body = self
            .exemplars
            .iter()
            .map(|e| {
                format!(
                    "Natural language: {}\nLean4: {}",
                    e.nl_statement.trim(),
                    e.lean_statement.trim()
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        format!("\n{body}\n")
    }
}

pub fn build_translation_prompt(p: &Problem, exemplars: &ExemplarSet, few_shot: bool) -> String {
    if few_shot {
        let block = exemplars.render_block();
        render(TRANSLATE_FEW_SHOT, &[("few_shot", &block), ("problem", &p.statement)])
    } else {
        render(TRANSLATE_ZERO_SHOT, &[("problem", &p.statement)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureStage {
    Verification,
    Consistency,
}

/// Why an earlier translation was rejected, carried into the retry prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureContext {
    pub failed_lean: String,
    pub stage: FailureStage,
    pub error_text: String,
}

impl FailureContext {
    /// `{failed_info}`: the rejected Lean text followed by its diagnostics.
    pub fn failed_info(&self) -> String {
        format!("{}\nErrors:\n{}", self.failed_lean, self.error_text)
    }
}

/// Retry prompt. Carries no exemplars, only the failure.
pub fn build_feedback_prompt(p: &Problem, fail: &FailureContext) -> String {
    render(
        TRANSLATE_FEEDBACK,
        &[("problem", &p.statement), ("failed_info", &fail.failed_info())],
    )
}

pub fn build_backtranslation_prompt(lean: &str) -> String {
    render(BACKTRANSLATE, &[("prompt", lean)])
}

pub fn build_consistency_prompt(origin: &str, back: &str) -> String {
    render(CONSISTENCY, &[("origin", origin), ("back", back)])
}

pub fn build_rating_prompt(lean: &str) -> String {
    render(RATING, &[("prompt", lean)])
}

pub fn build_proof_prompt(statement: &str) -> String {
    render(PROVE, &[("statement", statement)])
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no theorem, lemma or example declaration found")]
    NoTheoremFound,
    #[error("no consistency verdict object found")]
    VerdictUnparseable,
    #[error("rating response is missing or malformed: {0}")]
    RatingUnparseable(String),
}

fn think_re() -> &'static Regex {
    static RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<think>.*?</think>").unwrap());
    &RE
}

/// Contents of the first fenced block, or `None` if there is no closed fence.
fn first_fenced_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let close = body.find("```")?;
    Some(&body[..close])
}

/// Reply text with reasoning blocks removed, narrowed to the first fenced
/// block when present, without `import` lines.
pub(crate) fn code_body(completion: &str) -> String {
    let cleaned = think_re().replace_all(completion, "");
    let body = first_fenced_block(&cleaned).unwrap_or(&cleaned);
    body.lines()
        .filter(|l| !l.trim_start().starts_with("import "))
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}

const DECL_KEYWORDS: [&str; 3] = ["theorem", "lemma", "example"];
const COMMAND_KEYWORDS: [&str; 16] = [
    "theorem",
    "lemma",
    "example",
    "open",
    "set_option",
    "def",
    "abbrev",
    "noncomputable",
    "variable",
    "universe",
    "namespace",
    "section",
    "end",
    "@[",
    "private",
    "protected",
];

fn starts_with_word(line: &str, words: &[&str]) -> bool {
    let t = line.trim_start();
    words.iter().any(|w| {
        t.starts_with(w)
            && (w.ends_with('[')
                || t[w.len()..]
                    .chars()
                    .next()
                    .is_none_or(|c| !(c.is_alphanumeric() || c == '_' || c == '.')))
    })
}

fn is_decl_line(line: &str) -> bool {
    let t = line.trim_start();
    let t = t
        .strip_prefix("private ")
        .or_else(|| t.strip_prefix("protected "))
        .unwrap_or(t);
    starts_with_word(t, &DECL_KEYWORDS)
}

/// Pulls a single Lean declaration out of a model completion.
///
/// Takes the first closed fenced block if there is one, otherwise the whole
/// text. Drops `import` lines, leading prose, and every declaration after
/// the first theorem. Appends the proof placeholder when the declaration
/// has no `:=`.
pub fn extract_lean_code(completion: &str) -> Result<String, ParseError> {
    let cleaned = think_re().replace_all(completion, "");
    let candidate = first_fenced_block(&cleaned).unwrap_or(&cleaned);

    let lines: Vec<&str> = candidate
        .lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .filter(|l| !starts_with_word(l, &["import"]))
        .collect();

    let Some(decl) = lines.iter().position(|l| is_decl_line(l)) else {
        return inline_declaration(candidate);
    };

    // Lean commands immediately above the declaration (opens, options, defs).
    let mut start = decl;
    while start > 0 {
        let prev = lines[start - 1];
        if prev.trim().is_empty() || starts_with_word(prev, &COMMAND_KEYWORDS) || prev.starts_with([' ', '\t']) {
            start -= 1;
        } else {
            break;
        }
    }
    while start < decl && !starts_with_word(lines[start], &COMMAND_KEYWORDS) {
        start += 1;
    }

    let mut end = lines.len();
    for (i, line) in lines.iter().enumerate().skip(decl + 1) {
        if is_decl_line(line) {
            end = i;
            break;
        }
        let after_blank = lines[i - 1].trim().is_empty();
        let unindented = !line.starts_with([' ', '\t']) && !line.trim().is_empty();
        if after_blank
            && unindented
            && !starts_with_word(line, &COMMAND_KEYWORDS)
            && !line.trim_start().starts_with("--")
        {
            end = i;
            break;
        }
    }
    let text = lines[start..end].join("\n");
    let has_proof = lines[decl..end].iter().any(|l| l.contains(":="));
    Ok(with_placeholder(text.trim(), has_proof))
}

/// A declaration that does not start its own line, as in `Answer: theorem t ...`.
fn inline_declaration(text: &str) -> Result<String, ParseError> {
    static DECL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(theorem|lemma|example)\b").unwrap());
    let m = DECL.find(text).ok_or(ParseError::NoTheoremFound)?;
    let rest = &text[m.start()..];
    let rest = rest.split("\n\n").next().unwrap_or(rest).trim();
    Ok(with_placeholder(rest, rest.contains(":=")))
}

fn with_placeholder(text: &str, has_proof: bool) -> String {
    if has_proof {
        text.to_string()
    } else {
        format!("{text} {PROOF_PLACEHOLDER}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    pub same: bool,
    pub analysis: String,
}

/// Every JSON object embedded in `text`, in order of appearance.
fn embedded_objects(text: &str) -> impl Iterator<Item = serde_json::Map<String, Value>> + '_ {
    text.char_indices()
        .filter(|(_, c)| *c == '{')
        .filter_map(move |(i, _)| {
            let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
            match stream.next() {
                Some(Ok(Value::Object(map))) => Some(map),
                _ => None,
            }
        })
}

fn norm_key(k: &str) -> String {
    k.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

fn get_key<'a>(map: &'a serde_json::Map<String, Value>, key: &str) -> Option<&'a Value> {
    let want = norm_key(key);
    map.iter().find(|(k, _)| norm_key(k) == want).map(|(_, v)| v)
}

fn as_bool(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

/// Finds the first `{"Same": bool, "Analysis": text}` object in a checker reply,
/// tolerating surrounding prose and `'''` fences.
pub fn parse_consistency_verdict(completion: &str) -> Result<ConsistencyVerdict, ParseError> {
    let cleaned = think_re().replace_all(completion, "");
    for obj in embedded_objects(&cleaned) {
        let Some(same) = get_key(&obj, "Same").and_then(as_bool) else {
            continue;
        };
        let analysis = match get_key(&obj, "Analysis") {
            Some(Value::String(s)) => s.trim().to_string(),
            Some(other @ (Value::Object(_) | Value::Array(_))) => other.to_string(),
            _ => String::new(),
        };
        if !analysis.is_empty() {
            return Ok(ConsistencyVerdict { same, analysis });
        }
    }

    // Non-JSON near misses such as Python-style `True`.
    static LOOSE: LazyLock<Regex> = LazyLock::new(|| {
        Regex::new(r#"(?is)"Same"\s*:\s*"?(true|false)"?\s*,\s*"Analysis"\s*:\s*"((?:[^"\\]|\\.)*)""#).unwrap()
    });
    if let Some(c) = LOOSE.captures(&cleaned) {
        let same = c[1].eq_ignore_ascii_case("true");
        let analysis = c[2].replace("\\\"", "\"").trim().to_string();
        if !analysis.is_empty() {
            return Ok(ConsistencyVerdict { same, analysis });
        }
    }
    Err(ParseError::VerdictUnparseable)
}

/// Renders a verdict in the exact format the consistency prompt requests.
pub fn render_verdict(v: &ConsistencyVerdict) -> String {
    format!(
        "'''{{\"Same\": {}, \"Analysis\": {}}}'''",
        v.same,
        Value::String(v.analysis.clone())
    )
}

/// Five-level ordinal used for every rating dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rating {
    Poor,
    Fair,
    AboveAverage,
    Good,
    Excellent,
}

impl Rating {
    pub const ALL: [Rating; 5] = [
        Rating::Poor,
        Rating::Fair,
        Rating::AboveAverage,
        Rating::Good,
        Rating::Excellent,
    ];

    /// The label as it appears in the rating prompt.
    pub fn label(self) -> &'static str {
        match self {
            Rating::Poor => "poor",
            Rating::Fair => "fair",
            Rating::AboveAverage => "above average",
            Rating::Good => "good",
            Rating::Excellent => "excellent",
        }
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Rating {
    type Err = ();

    /// Case, underscores, hyphens and surrounding punctuation are ignored. A
    /// label followed by an explanation ("Good. The statement ...") also parses.
    fn from_str(s: &str) -> Result<Self, ()> {
        let words: Vec<String> = s
            .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_ascii_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        match words.as_slice() {
            [a, b, ..] if a == "above" && b == "average" => Ok(Rating::AboveAverage),
            [w, ..] => match w.as_str() {
                "poor" => Ok(Rating::Poor),
                "fair" => Ok(Rating::Fair),
                "good" => Ok(Rating::Good),
                "excellent" => Ok(Rating::Excellent),
                _ => Err(()),
            },
            [] => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Relevance,
    ComplexityDepth,
    Interdisciplinary,
    CommunityNeeds,
    Innovativeness,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Relevance,
        Dimension::ComplexityDepth,
        Dimension::Interdisciplinary,
        Dimension::CommunityNeeds,
        Dimension::Innovativeness,
    ];

    /// Criterion heading used in the rating prompt and response.
    pub fn heading(self) -> &'static str {
        match self {
            Dimension::Relevance => "Relevance to Current Research",
            Dimension::ComplexityDepth => "Complexity and Depth",
            Dimension::Interdisciplinary => "Interdisciplinary Potential",
            Dimension::CommunityNeeds => "Community Needs and Gaps",
            Dimension::Innovativeness => "Innovativeness",
        }
    }

    /// Normalized key prefixes accepted for this criterion in a reply.
    fn stems(self) -> &'static [&'static str] {
        match self {
            Dimension::Relevance => &["relevance"],
            Dimension::ComplexityDepth => &["complexity"],
            Dimension::Interdisciplinary => &["interdisciplinary"],
            Dimension::CommunityNeeds => &["community"],
            Dimension::Innovativeness => &["innovat", "novel"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityAssessment {
    pub ratings: BTreeMap<Dimension, Rating>,
    pub overall: Rating,
    pub analysis: String,
}

impl QualityAssessment {
    pub fn rating(&self, d: Dimension) -> Rating {
        self.ratings[&d]
    }
}

fn rating_of(v: &Value) -> Option<Rating> {
    match v {
        Value::String(s) => s.parse().ok(),
        Value::Object(m) => get_key(m, "rating")
            .and_then(|r| r.as_str())
            .and_then(|s| s.parse().ok()),
        _ => None,
    }
}

/// Parses an `{"Analysis": {...per criterion...}, "Assessment": ...}` reply.
pub fn parse_rating(completion: &str) -> Result<QualityAssessment, ParseError> {
    let cleaned = think_re().replace_all(completion, "");
    let mut last_err = "no JSON object with Analysis and Assessment keys".to_string();
    for obj in embedded_objects(&cleaned) {
        let (Some(analysis), Some(assessment)) = (get_key(&obj, "Analysis"), get_key(&obj, "Assessment")) else {
            continue;
        };
        let Some(overall) = assessment.as_str().and_then(|s| s.parse::<Rating>().ok()) else {
            last_err = format!("unrecognised overall assessment {assessment}");
            continue;
        };
        let Value::Object(per_dim) = analysis else {
            last_err = "Analysis is not an object of per-criterion ratings".into();
            continue;
        };

        let mut ratings = BTreeMap::new();
        let mut notes = Vec::new();
        for d in Dimension::ALL {
            let entry = per_dim
                .iter()
                .find(|(k, _)| d.stems().iter().any(|s| norm_key(k).starts_with(s)));
            let Some((_, v)) = entry else {
                break;
            };
            let Some(r) = rating_of(v) else {
                break;
            };
            ratings.insert(d, r);
            let reason = v
                .as_object()
                .and_then(|m| get_key(m, "reason"))
                .and_then(Value::as_str)
                .unwrap_or("");
            notes.push(
                format!("{}: {}. {}", d.heading(), r.label(), reason)
                    .trim_end()
                    .to_string(),
            );
        }
        if ratings.len() != Dimension::ALL.len() {
            last_err = format!("only {} of 5 criteria rated", ratings.len());
            continue;
        }
        return Ok(QualityAssessment {
            ratings,
            overall,
            analysis: notes.join("\n"),
        });
    }
    Err(ParseError::RatingUnparseable(last_err))
}

/// Renders an assessment in the response shape the rating prompt asks for.
pub fn render_rating(q: &QualityAssessment, reasons: &BTreeMap<Dimension, String>) -> String {
    let mut analysis = serde_json::Map::new();
    for d in Dimension::ALL {
        analysis.insert(
            d.heading().to_string(),
            serde_json::json!({
                "rating": q.rating(d).label(),
                "reason": reasons.get(&d).cloned().unwrap_or_default(),
            }),
        );
    }
    serde_json::json!({"Analysis": analysis, "Assessment": q.overall.label()}).to_string()
}
