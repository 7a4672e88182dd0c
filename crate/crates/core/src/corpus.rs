//! Problem corpora: extraction from markdown and judge-assisted preprocessing.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm::{Gateway, GatewayError, ModelRole};
use crate::par::par_map;

/// Default problem header: a line starting with "Problem <n>", optionally
/// decorated with markdown heading or emphasis markers.
pub const DEFAULT_HEADER_PATTERN: &str = r"(?m)^[ \t]*(?:#{1,6}[ \t]*)?(?:\*\*)?Problem[ \t]+(\d+)[.:]?(?:\*\*)?[.:]?";

const CLASSIFY_TEMPLATE: &str = include_str!("../templates/classify.txt");
const SPLIT_TEMPLATE: &str = include_str!("../templates/split.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub source_id: String,
    pub body: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Algebra,
    NumberTheory,
    Combinatorics,
    Geometry,
    Other,
    #[default]
    Unknown,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Algebra => "algebra",
            Category::NumberTheory => "number_theory",
            Category::Combinatorics => "combinatorics",
            Category::Geometry => "geometry",
            Category::Other => "other",
            Category::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = ();

    /// Lenient: case, spaces, hyphens and a trailing period are ignored.
    fn from_str(s: &str) -> Result<Self, ()> {
        let norm: String = s
            .trim()
            .trim_end_matches('.')
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        Ok(match norm.as_str() {
            "algebra" => Category::Algebra,
            "number_theory" | "numbertheory" => Category::NumberTheory,
            "combinatorics" => Category::Combinatorics,
            "geometry" => Category::Geometry,
            "other" => Category::Other,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub source_id: String,
    pub statement: String,
    #[serde(default)]
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgoal_index: Option<u32>,
}

impl Problem {
    pub fn new(id: impl Into<String>, source_id: impl Into<String>, statement: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            source_id: source_id.into(),
            statement: statement.into(),
            category: Category::Unknown,
            parent_id: None,
            subgoal_index: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid header pattern: {0}")]
    PatternInvalid(#[from] regex::Error),
    #[error("problem {0} has an empty statement")]
    EmptyStatement(String),
    #[error("duplicate problem id {0}")]
    DuplicateId(String),
    #[error("problem {id}: parent_id and subgoal_index must be set together")]
    InconsistentSplit { id: String },
    #[error("problem {0} is already a split child")]
    AlreadySplit(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Checks the corpus-wide invariants: non-empty statements, unique ids, and
/// parent/subgoal fields set together.
pub fn validate_corpus(problems: &[Problem]) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for p in problems {
        if p.statement.trim().is_empty() {
            return Err(CorpusError::EmptyStatement(p.id.clone()));
        }
        if !seen.insert(p.id.as_str()) {
            return Err(CorpusError::DuplicateId(p.id.clone()));
        }
        if p.parent_id.is_some() != p.subgoal_index.is_some() {
            return Err(CorpusError::InconsistentSplit { id: p.id.clone() });
        }
    }
    Ok(())
}

/// Splits a markdown document into problems at each header match.
///
/// The statement is the trimmed text between one header and the next. Problems
/// are numbered from the header's first capture group when it has one, else by
/// position. Headers followed by no text are skipped.
pub fn extract_problems(doc: &RawDocument, header_pattern: &str) -> Result<Vec<Problem>, CorpusError> {
    let re = Regex::new(header_pattern)?;
    let headers: Vec<(usize, usize, Option<String>)> = re
        .captures_iter(&doc.body)
        .map(|c| {
            let m = c.get(0).unwrap();
            (m.start(), m.end(), c.get(1).map(|g| g.as_str().to_string()))
        })
        .collect();

    let mut used = HashSet::new();
    let mut out = Vec::new();
    for (i, (_, end, number)) in headers.iter().enumerate() {
        let stop = headers.get(i + 1).map_or(doc.body.len(), |h| h.0);
        let statement = doc.body[*end..stop].trim();
        if statement.is_empty() {
            continue;
        }
        let ordinal = i + 1;
        let label = number.clone().unwrap_or_else(|| ordinal.to_string());
        let mut id = format!("{}-{}", doc.source_id, label);
        if !used.insert(id.clone()) {
            id = format!("{}-{}-{}", doc.source_id, label, ordinal);
            used.insert(id.clone());
        }
        out.push(Problem::new(id, doc.source_id.clone(), statement));
    }
    Ok(out)
}

fn render(template: &str, problem: &str) -> String {
    template.replacen("{problem}", problem, 1)
}

fn category_verdict(text: &str) -> Option<Category> {
    static RE: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"(?im)^[ \t*`]*CATEGORY[ \t*`]*:[ \t*`]*([A-Za-z_ \-]+?)[ \t*`.]*$").unwrap());
    RE.captures(text)
        .and_then(|c| c.get(1))
        .and_then(|m| m.as_str().parse().ok())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub category: Category,
    pub drop: bool,
    /// Set when the judge never produced a parseable verdict.
    pub needs_review: bool,
}

/// Asks the judge for the problem's category. Geometry problems are flagged for
/// dropping. An unparseable verdict is retried once, then the problem is kept as
/// `unknown` and flagged for review.
pub fn classify_problem(p: &Problem, judge: &Gateway) -> Result<Classification, GatewayError> {
    let prompt = render(CLASSIFY_TEMPLATE, &p.statement);
    for _ in 0..2 {
        let resp = judge.complete(&judge.request(ModelRole::Judge, prompt.clone()))?;
        if let Some(category) = category_verdict(&resp.text) {
            return Ok(Classification {
                category,
                drop: category == Category::Geometry,
                needs_review: false,
            });
        }
    }
    Ok(Classification {
        category: Category::Unknown,
        drop: false,
        needs_review: true,
    })
}

/// Parsed splitter reply: shared conditions plus the ordered subgoals.
#[derive(Debug, Clone, PartialEq, Eq)]
struct SplitVerdict {
    shared: String,
    subgoals: Vec<String>,
}

fn parse_split(text: &str) -> Option<SplitVerdict> {
    static GOALS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?im)^[ \t*`]*GOALS[ \t*`]*:[ \t*`]*(\d+)").unwrap());
    static BLOCK: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"(?im)^[ \t*`]*(SHARED|SUBGOAL[ \t]*(\d+))[ \t*`]*:").unwrap());
    let n: usize = GOALS.captures(text)?.get(1)?.as_str().parse().ok()?;
    if n == 0 {
        return None;
    }
    if n == 1 {
        return Some(SplitVerdict {
            shared: String::new(),
            subgoals: Vec::new(),
        });
    }

    let marks: Vec<_> = BLOCK.captures_iter(text).collect();
    let mut shared = String::new();
    let mut subgoals = Vec::new();
    for (i, c) in marks.iter().enumerate() {
        let start = c.get(0).unwrap().end();
        let stop = marks.get(i + 1).map_or(text.len(), |m| m.get(0).unwrap().start());
        let body = text[start..stop].trim().to_string();
        match c.get(2) {
            None => shared = body,
            Some(k) => {
                let k: usize = k.as_str().parse().ok()?;
                if k != subgoals.len() + 1 || body.is_empty() {
                    return None;
                }
                subgoals.push(body);
            }
        }
    }
    (subgoals.len() == n).then_some(SplitVerdict { shared, subgoals })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitOutcome {
    pub problems: Vec<Problem>,
    pub needs_review: bool,
}

/// Splits a multi-goal problem into one child per subgoal, each stating the
/// shared conditions followed by that subgoal. Single-goal problems and
/// unparseable verdicts (after one retry) come back unchanged; the latter are
/// flagged for review.
pub fn split_subproblems(p: &Problem, judge: &Gateway) -> Result<SplitOutcome, CorpusError> {
    if p.parent_id.is_some() {
        return Err(CorpusError::AlreadySplit(p.id.clone()));
    }
    let prompt = render(SPLIT_TEMPLATE, &p.statement);
    for _ in 0..2 {
        let resp = judge.complete(&judge.request(ModelRole::Judge, prompt.clone()))?;
        let Some(verdict) = parse_split(&resp.text) else {
            continue;
        };
        if verdict.subgoals.is_empty() {
            return Ok(SplitOutcome {
                problems: vec![p.clone()],
                needs_review: false,
            });
        }
        let children = verdict
            .subgoals
            .iter()
            .enumerate()
            .map(|(i, goal)| {
                let statement = if verdict.shared.is_empty() {
                    goal.clone()
                } else {
                    format!("{}\n{}", verdict.shared, goal)
                };
                Problem {
                    id: format!("{}-{}", p.id, i + 1),
                    source_id: p.source_id.clone(),
                    statement,
                    category: p.category,
                    parent_id: Some(p.id.clone()),
                    subgoal_index: Some(i as u32 + 1),
                }
            })
            .collect();
        return Ok(SplitOutcome {
            problems: children,
            needs_review: false,
        });
    }
    Ok(SplitOutcome {
        problems: vec![p.clone()],
        needs_review: true,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub total_in: usize,
    pub geometry_dropped: usize,
    pub split_parents: usize,
    pub split_children: usize,
    pub total_out: usize,
}

impl PreprocessReport {
    pub fn is_balanced(&self) -> bool {
        self.total_out + self.geometry_dropped + self.split_parents == self.total_in + self.split_children
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewFlag {
    pub problem_id: String,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOutput {
    pub kept: Vec<Problem>,
    /// Geometry problems, retained for auditing rather than deleted.
    pub dropped: Vec<Problem>,
    pub review: Vec<ReviewFlag>,
    pub report: PreprocessReport,
}

/// Classifies every problem, drops geometry, then splits the survivors.
pub fn preprocess(problems: &[Problem], judge: &Gateway, workers: usize) -> Result<PreprocessOutput, CorpusError> {
    validate_corpus(problems)?;
    let classified = par_map(problems, workers, |_, p| classify_problem(p, judge));

    let mut review = Vec::new();
    let mut dropped = Vec::new();
    let mut survivors = Vec::new();
    for (p, c) in problems.iter().zip(classified) {
        let c = c?;
        let mut p = p.clone();
        p.category = c.category;
        if c.needs_review {
            review.push(ReviewFlag {
                problem_id: p.id.clone(),
                stage: "classify".into(),
            });
        }
        if c.drop {
            dropped.push(p);
        } else {
            survivors.push(p);
        }
    }

    let split = par_map(&survivors, workers, |_, p| {
        if p.parent_id.is_some() {
            Ok(SplitOutcome {
                problems: vec![p.clone()],
                needs_review: false,
            })
        } else {
            split_subproblems(p, judge)
        }
    });
    let mut kept = Vec::new();
    let mut report = PreprocessReport {
        total_in: problems.len(),
        geometry_dropped: dropped.len(),
        ..PreprocessReport::default()
    };
    for (p, s) in survivors.iter().zip(split) {
        let s = s?;
        if s.needs_review {
            review.push(ReviewFlag {
                problem_id: p.id.clone(),
                stage: "split".into(),
            });
        }
        if s.problems.len() > 1 || s.problems[0].parent_id.as_deref() == Some(p.id.as_str()) {
            report.split_parents += 1;
            report.split_children += s.problems.len();
        }
        kept.extend(s.problems);
    }
    report.total_out = kept.len();
    validate_corpus(&kept)?;
    Ok(PreprocessOutput {
        kept,
        dropped,
        review,
        report,
    })
}
