use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AttemptRecord, ProblemOutcome, RunConfig};
use crate::corpus::Problem;

pub const LOG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub format_version: u32,
    pub config: RunConfig,
    pub corpus_hash: String,
    pub problem_count: usize,
}

impl RunHeader {
    pub fn new(config: &RunConfig, problems: &[Problem]) -> Self {
        Self {
            format_version: LOG_FORMAT_VERSION,
            config: config.clone(),
            corpus_hash: corpus_hash(problems),
            problem_count: problems.len(),
        }
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEvent {
    Header(RunHeader),
    Attempt(AttemptRecord),
    /// The problem could not finish because a service was down.
    Incomplete {
        problem_id: String,
        reason: String,
    },
}

/// Digest over problem ids and statements, in corpus order.
pub fn corpus_hash(problems: &[Problem]) -> String {
    let mut h = Sha256::new();
    for p in problems {
        h.update(p.id.as_bytes());
        h.update([0]);
        h.update(p.statement.as_bytes());
        h.update(*b"\n");
    }
    hex::encode(h.finalize())
}

/// Run header plus every event after it, in append order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub events: Vec<LogEvent>,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("run log has no header line")]
    MissingHeader,
}

impl RunLog {
    pub fn attempts(&self) -> impl Iterator<Item = &AttemptRecord> {
        self.events.iter().filter_map(|e| match e {
            LogEvent::Attempt(a) => Some(a),
            _ => None,
        })
    }

    /// Parses a JSONL log. A torn final line (no trailing newline, invalid
    /// JSON) from an interrupted write is ignored.
    pub fn parse(text: &str) -> Result<Self, LogError> {
        let complete_tail = text.ends_with('\n');
        let lines: Vec<&str> = text.lines().collect();
        let mut events = Vec::new();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LogEvent>(line) {
                Ok(e) => events.push(e),
                Err(_) if i + 1 == lines.len() && !complete_tail => break,
                Err(source) => return Err(LogError::Parse { line: i + 1, source }),
            }
        }
        let mut iter = events.into_iter();
        match iter.next() {
            Some(LogEvent::Header(header)) => Ok(Self {
                header,
                events: iter.collect(),
            }),
            _ => Err(LogError::MissingHeader),
        }
    }

    pub fn read(path: &Path) -> Result<Self, LogError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in std::iter::once(LogEvent::Header(self.header.clone())).chain(self.events.iter().cloned()) {
            out.push_str(&serde_json::to_string(&e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    /// Rebuilds per-problem outcomes from the attempts alone.
    pub fn replay(&self) -> Replay {
        let mut order: Vec<String> = Vec::new();
        let mut by_problem: HashMap<String, Vec<AttemptRecord>> = HashMap::new();
        let mut flagged: BTreeMap<String, String> = BTreeMap::new();
        for e in &self.events {
            match e {
                LogEvent::Attempt(a) => {
                    let entry = by_problem.entry(a.problem_id.clone()).or_insert_with(|| {
                        order.push(a.problem_id.clone());
                        Vec::new()
                    });
                    entry.push(a.clone());
                }
                LogEvent::Incomplete { problem_id, reason } => {
                    if !by_problem.contains_key(problem_id) && !flagged.contains_key(problem_id) {
                        order.push(problem_id.clone());
                    }
                    flagged.insert(problem_id.clone(), reason.clone());
                }
                LogEvent::Header(_) => {}
            }
        }

        let mut outcomes = Vec::new();
        let mut incomplete = Vec::new();
        for id in order {
            let attempts = by_problem.remove(&id).unwrap_or_default();
            match ProblemOutcome::settle(&id, attempts, &self.header.config) {
                Some(o) => outcomes.push(o),
                None => incomplete.push(id),
            }
        }
        Replay { outcomes, incomplete }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    /// Problems that reached a terminal state, in first-logged order.
    pub outcomes: Vec<ProblemOutcome>,
    /// Problems with missing rounds or an outage marker.
    pub incomplete: Vec<String>,
}

/// Destination for run-log events.
pub trait EventSink {
    fn append(&mut self, event: &LogEvent) -> io::Result<()>;
}

/// Appends one JSON line per event and flushes after each.
#[derive(Debug)]
pub struct JsonlSink {
    file: File,
}

impl JsonlSink {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Self {
            file: File::create(path)?,
        })
    }

    /// Opens for appending, first cutting off a torn final line if present.
    pub fn append_to(path: &Path) -> io::Result<Self> {
        let mut keep = 0u64;
        {
            let mut reader = BufReader::new(File::open(path)?);
            let mut buf = Vec::new();
            loop {
                buf.clear();
                let n = reader.read_until(b'\n', &mut buf)?;
                if n == 0 || buf.last() != Some(&b'\n') {
                    break;
                }
                keep += n as u64;
            }
        }
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(keep)?;
        let mut file = OpenOptions::new().append(true).open(path)?;
        file.flush()?;
        Ok(Self { file })
    }
}

impl EventSink for JsonlSink {
    fn append(&mut self, event: &LogEvent) -> io::Result<()> {
        let line = serde_json::to_string(event).map_err(io::Error::other)?;
        self.file.write_all(line.as_bytes())?;
        self.file.write_all(b"\n")?;
        self.file.flush()
    }
}

/// In-memory sink, optionally failing after a number of events to simulate a crash.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub events: Vec<LogEvent>,
    pub fail_after: Option<usize>,
}

impl MemorySink {
    pub fn failing_after(n: usize) -> Self {
        Self {
            events: Vec::new(),
            fail_after: Some(n),
        }
    }
}

impl EventSink for MemorySink {
    fn append(&mut self, event: &LogEvent) -> io::Result<()> {
        if self.fail_after.is_some_and(|n| self.events.len() >= n) {
            return Err(io::Error::other("simulated crash"));
        }
        self.events.push(event.clone());
        Ok(())
    }
}

impl EventSink for Vec<LogEvent> {
    fn append(&mut self, event: &LogEvent) -> io::Result<()> {
        self.push(event.clone());
        Ok(())
    }
}
