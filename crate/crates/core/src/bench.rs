//! pass@N benchmarking of external provers.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::llm::{Gateway, GatewayError, ModelRole};
use crate::par::par_map;
use crate::pipeline::DatasetRecord;
use crate::prompts::{build_proof_prompt, code_body, PROOF_PLACEHOLDER};
use crate::verify::{VerificationStatus, Verifier};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("cannot sample {requested} problems from {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("attempts_per_problem must be at least 1")]
    NoAttempts,
}

#[derive(Debug, thiserror::Error)]
pub enum ProverError {
    #[error("prover unavailable: {0}")]
    Unavailable(String),
}

impl From<GatewayError> for ProverError {
    fn from(e: GatewayError) -> Self {
        ProverError::Unavailable(e.to_string())
    }
}

/// Proposes a proof for a statement. `attempt` is 1-based and distinguishes
/// independent tries at the same statement.
pub trait Prover: Send + Sync {
    fn propose(&self, statement: &str, attempt: u32) -> Result<String, ProverError>;
}

/// A prover served behind a chat-completion endpoint bound to the prover role.
pub struct GatewayProver<'a> {
    pub gateway: &'a Gateway,
    pub seed: u64,
}

impl Prover for GatewayProver<'_> {
    fn propose(&self, statement: &str, attempt: u32) -> Result<String, ProverError> {
        let mut req = self.gateway.request(ModelRole::Prover, build_proof_prompt(statement));
        req.seed = Some(self.seed.wrapping_add(attempt as u64));
        Ok(self.gateway.complete(&req)?.text)
    }
}

/// Replays fixed per-statement attempt streams; attempts past the end of a
/// stream repeat its last entry.
#[derive(Debug, Clone, Default)]
pub struct RecordedProver {
    streams: Vec<(String, Vec<String>)>,
}

impl RecordedProver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Statements containing `needle` get `replies` in attempt order.
    pub fn stream(mut self, needle: &str, replies: Vec<String>) -> Self {
        self.streams.push((needle.into(), replies));
        self
    }
}

impl Prover for RecordedProver {
    fn propose(&self, statement: &str, attempt: u32) -> Result<String, ProverError> {
        let (_, replies) = self
            .streams
            .iter()
            .find(|(needle, _)| statement.contains(needle.as_str()))
            .ok_or_else(|| ProverError::Unavailable("no recorded stream for statement".into()))?;
        let i = (attempt.max(1) as usize - 1).min(replies.len().saturating_sub(1));
        replies
            .get(i)
            .cloned()
            .ok_or_else(|| ProverError::Unavailable("empty recorded stream".into()))
    }
}

/// Uniform sample of `n` items without replacement, deterministic in `seed`.
pub fn sample_problems<T: Clone>(items: &[T], n: usize, seed: u64) -> Result<Vec<T>, BenchError> {
    if n > items.len() {
        return Err(BenchError::SampleTooLarge {
            requested: n,
            available: items.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, items.len(), n)
        .into_iter()
        .map(|i| items[i].clone())
        .collect())
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The statement without its proof placeholder.
pub fn statement_header(statement: &str) -> &str {
    let t = statement.trim_end();
    match t.strip_suffix(PROOF_PLACEHOLDER) {
        Some(h) => h.trim_end(),
        None => t.rfind(":=").map_or(t, |i| t[..i].trim_end()),
    }
}

/// Builds the full candidate from a prover reply: a bare `:= ...` or `by ...`
/// proof is attached to the header; a full declaration must repeat the header.
/// Returns `None` when the header was altered.
pub fn splice_proof(statement: &str, reply: &str) -> Option<String> {
    let header = statement_header(statement);
    let body = code_body(reply);
    if body.starts_with(":=") {
        return Some(format!("{header} {body}"));
    }
    if body.starts_with("by") && body[2..].starts_with(char::is_whitespace) {
        return Some(format!("{header} := {body}"));
    }
    let want = collapse(header);
    let got = collapse(&body);
    // The header must reappear verbatim, up to whitespace, with a proof after it.
    let start = got.find(&want)?;
    got[start + want.len()..].trim_start().starts_with(":=").then_some(body)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofAttempt {
    pub solved: bool,
    /// Candidate sent to the verifier, when one could be built.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<VerificationStatus>,
    /// The prover or verifier was unreachable.
    #[serde(default)]
    pub flagged: bool,
}

/// One proof attempt. Solved only if the verifier reports `pass` (no errors
/// and no `sorry`).
pub fn attempt_proof(statement: &str, attempt: u32, prover: &dyn Prover, verifier: &dyn Verifier) -> ProofAttempt {
    let unsolved = |candidate, status, flagged| ProofAttempt {
        solved: false,
        candidate,
        status,
        flagged,
    };
    let reply = match prover.propose(statement, attempt) {
        Ok(r) => r,
        Err(e) => {
            ::log::warn!("attempt {attempt}: {e}");
            return unsolved(None, None, true);
        }
    };
    let Some(candidate) = splice_proof(statement, &reply) else {
        return unsolved(None, None, false);
    };
    match verifier.verify(&candidate) {
        Ok(r) => ProofAttempt {
            solved: r.status == VerificationStatus::Pass,
            candidate: Some(candidate),
            status: Some(r.status),
            flagged: false,
        },
        Err(e) => {
            ::log::warn!("attempt {attempt}: verifier failed: {e}");
            unsolved(Some(candidate), None, true)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchItem {
    pub id: String,
    pub statement: String,
}

/// One item per formal statement, ids `problem#ordinal`.
pub fn bench_items(records: &[DatasetRecord]) -> Vec<BenchItem> {
    records
        .iter()
        .flat_map(|r| {
            r.formal_statements.iter().enumerate().map(move |(i, s)| BenchItem {
                id: format!("{}#{}", r.problem_id, i + 1),
                statement: s.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub sample_size: usize,
    pub attempts_per_problem: u32,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sample_size: 1000,
            attempts_per_problem: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub id: String,
    pub statement: String,
    pub solved: bool,
    /// 1-based index of the first successful attempt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solving_attempt: Option<u32>,
    pub attempts_made: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proof: Option<String>,
    /// Some attempt hit an unavailable prover or verifier.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProverBenchResult {
    pub config: BenchConfig,
    pub problems: Vec<BenchRecord>,
    pub solved_count: usize,
    pub pass_rate: f64,
}

impl ProverBenchResult {
    /// pass@n read off the recorded streams, for any `n` up to the configured attempts.
    pub fn pass_rate_at(&self, n: u32) -> f64 {
        if self.problems.is_empty() {
            return 0.0;
        }
        let solved = self
            .problems
            .iter()
            .filter(|p| p.solving_attempt.is_some_and(|k| k <= n))
            .count();
        solved as f64 / self.problems.len() as f64
    }
}

/// Samples `cfg.sample_size` items and gives each up to `attempts_per_problem`
/// tries, stopping at the first success.
pub fn run_benchmark(
    items: &[BenchItem],
    cfg: &BenchConfig,
    prover: &dyn Prover,
    verifier: &dyn Verifier,
    workers: usize,
) -> Result<ProverBenchResult, BenchError> {
    if cfg.attempts_per_problem == 0 {
        return Err(BenchError::NoAttempts);
    }
    let sample = sample_problems(items, cfg.sample_size, cfg.seed)?;
    let problems: Vec<BenchRecord> = par_map(&sample, workers, |_, item| {
        let mut record = BenchRecord {
            id: item.id.clone(),
            statement: item.statement.clone(),
            solved: false,
            solving_attempt: None,
            attempts_made: 0,
            proof: None,
            flagged: false,
        };
        for k in 1..=cfg.attempts_per_problem {
            let a = attempt_proof(&item.statement, k, prover, verifier);
            record.attempts_made = k;
            record.flagged |= a.flagged;
            if a.solved {
                record.solved = true;
                record.solving_attempt = Some(k);
                record.proof = a.candidate;
                break;
            }
        }
        record
    });
    let solved_count = problems.iter().filter(|p| p.solved).count();
    let pass_rate = if problems.is_empty() {
        0.0
    } else {
        solved_count as f64 / problems.len() as f64
    };
    Ok(ProverBenchResult {
        config: cfg.clone(),
        problems,
        solved_count,
        pass_rate,
    })
}
