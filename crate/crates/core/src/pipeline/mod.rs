//! Translate, verify, backtranslate and check, with error-feedback rounds.
//!
//! Every sample attempt becomes one [`LogEvent::Attempt`] line in the run log.
//! Problems run concurrently but their events are committed in corpus order,
//! so any interrupted log is a prefix of the uninterrupted one and
//! [`resume`] only has to skip what is already there.

mod log;
mod rename;

use std::collections::{BTreeMap, HashSet};
use std::io;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::corpus::{validate_corpus, CorpusError, Problem};
use crate::llm::{Gateway, GatewayError, ModelRole};
use crate::par::par_map;
use crate::prompts::{
    build_backtranslation_prompt, build_consistency_prompt, build_feedback_prompt, build_translation_prompt,
    extract_lean_code, parse_consistency_verdict, ConsistencyVerdict, ExemplarSet, FailureContext, FailureStage,
};
use crate::verify::{summarize_errors, VerificationResult, Verifier};

pub use log::{
    corpus_hash, EventSink, JsonlSink, LogError, LogEvent, MemorySink, Replay, RunHeader, RunLog, LOG_FORMAT_VERSION,
};
pub use rename::{canonical_name, canonical_rename, normalized_key};

/// Analysis recorded when the checker never produced a parseable verdict.
pub const UNPARSEABLE_VERDICT: &str = "unparseable verdict";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// One failure context per problem, shared by every feedback sample.
    #[default]
    PerProblem,
    /// Feedback sample k retries from sample k's own previous failure.
    PerSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub samples_per_problem: u32,
    pub feedback_rounds: u32,
    pub few_shot: bool,
    pub translator_temperature: f64,
    pub dedup_normalized: bool,
    pub feedback_mode: FeedbackMode,
    /// Sample k of every round is requested with seed `seed + k`.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            samples_per_problem: 5,
            feedback_rounds: 1,
            few_shot: true,
            translator_temperature: 1.0,
            dedup_normalized: true,
            feedback_mode: FeedbackMode::PerProblem,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.samples_per_problem == 0 {
            return Err(PipelineError::InvalidConfig(
                "samples_per_problem must be at least 1".into(),
            ));
        }
        if !self.translator_temperature.is_finite() || !(0.0..=2.0).contains(&self.translator_temperature) {
            return Err(PipelineError::InvalidConfig(format!(
                "translator_temperature {} outside [0, 2]",
                self.translator_temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptOutcome {
    FvFail,
    CcFail,
    Accepted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub problem_id: String,
    /// 1-based.
    pub sample_index: u32,
    /// 0 for the initial round, r for the r-th feedback round.
    pub round: u32,
    /// Extracted statement, or the raw completion when extraction failed.
    pub lean: String,
    pub verification: VerificationResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backtranslation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<ConsistencyVerdict>,
    pub outcome: AttemptOutcome,
    pub started_ms: u64,
    pub finished_ms: u64,
}

impl AttemptRecord {
    pub fn is_accepted(&self) -> bool {
        self.outcome == AttemptOutcome::Accepted
    }

    /// The context a feedback prompt is built from, if this attempt failed.
    pub fn failure_context(&self) -> Option<FailureContext> {
        match self.outcome {
            AttemptOutcome::Accepted => None,
            AttemptOutcome::FvFail => Some(FailureContext {
                failed_lean: self.lean.clone(),
                stage: FailureStage::Verification,
                error_text: summarize_errors(&self.verification),
            }),
            AttemptOutcome::CcFail => Some(FailureContext {
                failed_lean: self.lean.clone(),
                stage: FailureStage::Consistency,
                error_text: self.verdict.as_ref().map(|v| v.analysis.clone()).unwrap_or_default(),
            }),
        }
    }

    /// Same record with timestamps zeroed, for run comparisons.
    pub fn without_timestamps(&self) -> Self {
        Self {
            started_ms: 0,
            finished_ms: 0,
            ..self.clone()
        }
    }
}

/// Picks the failed attempt feedback is built from: consistency failures beat
/// verification failures, then the latest round, then the latest sample.
pub fn best_failure(attempts: &[AttemptRecord]) -> Option<&AttemptRecord> {
    attempts
        .iter()
        .filter(|a| !a.is_accepted())
        .max_by_key(|a| (a.outcome == AttemptOutcome::CcFail, a.round, a.sample_index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemStatus {
    Accepted,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub round: u32,
    pub sample_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemOutcome {
    pub problem_id: String,
    pub status: ProblemStatus,
    /// Canonically renamed, deduplicated when configured.
    pub accepted_statements: Vec<String>,
    /// Parallel to `accepted_statements`.
    pub provenance: Vec<Provenance>,
    pub first_pass: bool,
    pub attempts: Vec<AttemptRecord>,
}

impl ProblemOutcome {
    /// Builds the outcome once `attempts` cover every round the problem needs,
    /// or `None` if some round is still missing samples.
    pub fn settle(problem_id: &str, mut attempts: Vec<AttemptRecord>, cfg: &RunConfig) -> Option<Self> {
        attempts.sort_by_key(|a| (a.round, a.sample_index));
        let k = cfg.samples_per_problem as usize;
        for round in 0..=cfg.feedback_rounds {
            let n = attempts.iter().filter(|a| a.round == round).count();
            if n < k {
                return None;
            }
            if attempts.iter().any(|a| a.round <= round && a.is_accepted()) {
                break;
            }
        }
        Some(Self::from_attempts(problem_id, attempts, cfg))
    }

    fn from_attempts(problem_id: &str, attempts: Vec<AttemptRecord>, cfg: &RunConfig) -> Self {
        let mut seen = HashSet::new();
        let mut accepted_statements = Vec::new();
        let mut provenance = Vec::new();
        for a in attempts.iter().filter(|a| a.is_accepted()) {
            if cfg.dedup_normalized && !seen.insert(normalized_key(&a.lean)) {
                continue;
            }
            let ordinal = accepted_statements.len() + 1;
            let named = canonical_rename(&a.lean, problem_id, ordinal).unwrap_or_else(|_| a.lean.clone());
            accepted_statements.push(named);
            provenance.push(Provenance {
                round: a.round,
                sample_index: a.sample_index,
            });
        }
        let first_pass = attempts.iter().any(|a| a.round == 0 && a.is_accepted());
        Self {
            problem_id: problem_id.to_string(),
            status: if accepted_statements.is_empty() {
                ProblemStatus::Failed
            } else {
                ProblemStatus::Accepted
            },
            accepted_statements,
            provenance,
            first_pass,
            attempts,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("run log storage failed: {0}")]
    Storage(#[from] io::Error),
    #[error("run log does not match this invocation: {0}")]
    ConfigMismatch(String),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("run aborted")]
    Aborted,
}

impl From<GatewayError> for PipelineError {
    fn from(e: GatewayError) -> Self {
        PipelineError::ServiceUnavailable(e.to_string())
    }
}

/// External services a run depends on.
#[derive(Clone, Copy)]
pub struct Services<'a> {
    pub gateway: &'a Gateway,
    pub verifier: &'a dyn Verifier,
    pub exemplars: &'a ExemplarSet,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn sample_seed(cfg: &RunConfig, sample_index: u32) -> u64 {
    cfg.seed.wrapping_add(sample_index as u64)
}

fn ask(
    services: &Services<'_>,
    role: ModelRole,
    prompt: String,
    seed: u64,
    temperature: Option<f64>,
) -> Result<String, PipelineError> {
    let mut req = services.gateway.request(role, prompt);
    req.seed = Some(seed);
    if let Some(t) = temperature {
        req.temperature = t;
    }
    Ok(services.gateway.complete(&req)?.text)
}

fn check_consistency(
    services: &Services<'_>,
    origin: &str,
    back: &str,
    seed: u64,
) -> Result<ConsistencyVerdict, PipelineError> {
    let prompt = build_consistency_prompt(origin, back);
    for _ in 0..2 {
        let reply = ask(services, ModelRole::Checker, prompt.clone(), seed, None)?;
        if let Ok(v) = parse_consistency_verdict(&reply) {
            return Ok(v);
        }
    }
    Ok(ConsistencyVerdict {
        same: false,
        analysis: UNPARSEABLE_VERDICT.into(),
    })
}

/// Verification, backtranslation and checking for one drawn completion.
fn process_sample(
    p: &Problem,
    cfg: &RunConfig,
    services: &Services<'_>,
    round: u32,
    sample_index: u32,
    completion: &str,
    started_ms: u64,
) -> Result<AttemptRecord, PipelineError> {
    let seed = sample_seed(cfg, sample_index);
    let (lean, verification) = match extract_lean_code(completion) {
        Ok(lean) => {
            let v = services
                .verifier
                .verify(&lean)
                .map_err(|e| PipelineError::ServiceUnavailable(e.to_string()))?;
            (lean, v)
        }
        Err(e) => (
            completion.trim().to_string(),
            VerificationResult::synthetic_error(e.to_string()),
        ),
    };

    let mut backtranslation = None;
    let mut verdict = None;
    let outcome = if verification.status.is_valid() {
        let back = ask(
            services,
            ModelRole::Backtranslator,
            build_backtranslation_prompt(&lean),
            seed,
            None,
        )?;
        let v = check_consistency(services, &p.statement, &back, seed)?;
        let outcome = if v.same {
            AttemptOutcome::Accepted
        } else {
            AttemptOutcome::CcFail
        };
        backtranslation = Some(back);
        verdict = Some(v);
        outcome
    } else {
        AttemptOutcome::FvFail
    };

    Ok(AttemptRecord {
        problem_id: p.id.clone(),
        sample_index,
        round,
        lean,
        verification,
        backtranslation,
        verdict,
        outcome,
        started_ms,
        finished_ms: now_ms(),
    })
}

type AttemptKey = (u32, u32);

/// Runs one round: draws every missing sample first, then processes them.
fn run_round(
    p: &Problem,
    cfg: &RunConfig,
    services: &Services<'_>,
    round: u32,
    contexts: &[Option<FailureContext>],
    cached: &BTreeMap<AttemptKey, AttemptRecord>,
) -> Vec<Result<AttemptRecord, PipelineError>> {
    let samples: Vec<u32> = (1..=cfg.samples_per_problem).collect();
    let workers = samples.len();

    let drawn: Vec<Option<Result<(String, u64), PipelineError>>> = par_map(&samples, workers, |i, &k| {
        if cached.contains_key(&(round, k)) {
            return None;
        }
        let prompt = match &contexts[i] {
            Some(ctx) => build_feedback_prompt(p, ctx),
            None => build_translation_prompt(p, services.exemplars, cfg.few_shot),
        };
        let started = now_ms();
        Some(
            ask(
                services,
                ModelRole::Translator,
                prompt,
                sample_seed(cfg, k),
                Some(cfg.translator_temperature),
            )
            .map(|text| (text, started)),
        )
    });

    type Draw = Option<Result<(String, u64), PipelineError>>;
    let jobs: Vec<(u32, Draw)> = samples.iter().copied().zip(drawn).collect();
    par_map(&jobs, workers, |_, (k, draw)| match draw {
        None => Ok(cached[&(round, *k)].clone()),
        Some(Err(e)) => Err(PipelineError::ServiceUnavailable(e.to_string())),
        Some(Ok((text, started))) => process_sample(p, cfg, services, round, *k, text, *started),
    })
}

/// Drives one problem to a terminal state, reusing `cached` attempts and
/// passing each newly produced attempt to `emit` in (round, sample) order.
fn drive_problem(
    p: &Problem,
    cfg: &RunConfig,
    services: &Services<'_>,
    cached: &BTreeMap<AttemptKey, AttemptRecord>,
    emit: &mut dyn FnMut(&AttemptRecord) -> Result<(), PipelineError>,
) -> Result<ProblemOutcome, PipelineError> {
    let k = cfg.samples_per_problem as usize;
    let mut attempts: Vec<AttemptRecord> = Vec::new();
    for round in 0..=cfg.feedback_rounds {
        if attempts.iter().any(AttemptRecord::is_accepted) {
            break;
        }
        let contexts: Vec<Option<FailureContext>> = if round == 0 {
            vec![None; k]
        } else {
            let shared = best_failure(&attempts).and_then(AttemptRecord::failure_context);
            (1..=cfg.samples_per_problem)
                .map(|s| match cfg.feedback_mode {
                    FeedbackMode::PerProblem => shared.clone(),
                    FeedbackMode::PerSample => attempts
                        .iter()
                        .find(|a| a.round == round - 1 && a.sample_index == s)
                        .and_then(AttemptRecord::failure_context)
                        .or_else(|| shared.clone()),
                })
                .collect()
        };
        for result in run_round(p, cfg, services, round, &contexts, cached) {
            let rec = result?;
            if !cached.contains_key(&(rec.round, rec.sample_index)) {
                emit(&rec)?;
            }
            attempts.push(rec);
        }
    }
    Ok(ProblemOutcome::from_attempts(&p.id, attempts, cfg))
}

/// Formalizes a single problem without logging.
pub fn formalize_problem(
    p: &Problem,
    cfg: &RunConfig,
    services: &Services<'_>,
) -> Result<ProblemOutcome, PipelineError> {
    cfg.validate()?;
    drive_problem(p, cfg, services, &BTreeMap::new(), &mut |_| Ok(()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Problems processed concurrently.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { workers: 4 }
    }
}

enum Msg {
    Event(usize, LogEvent),
    Done(usize),
}

struct Job<'p> {
    problem: &'p Problem,
    cached: BTreeMap<AttemptKey, AttemptRecord>,
}

/// Runs `jobs` on a worker pool and commits their events to `sink` in job order.
fn execute(
    jobs: &[Job<'_>],
    cfg: &RunConfig,
    services: &Services<'_>,
    opts: RunOptions,
    sink: &mut dyn EventSink,
) -> Result<Vec<LogEvent>, PipelineError> {
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<Msg>();
    let mut committed = Vec::new();
    let mut failure: Option<io::Error> = None;

    std::thread::scope(|scope| {
        for _ in 0..opts.workers.max(1).min(jobs.len()) {
            let tx = tx.clone();
            let (next, abort) = (&next, &abort);
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let pos = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(pos) else { break };
                let mut emit = |rec: &AttemptRecord| {
                    if abort.load(Ordering::SeqCst) {
                        return Err(PipelineError::Aborted);
                    }
                    tx.send(Msg::Event(pos, LogEvent::Attempt(rec.clone())))
                        .map_err(|_| PipelineError::Aborted)
                };
                match drive_problem(job.problem, cfg, services, &job.cached, &mut emit) {
                    Ok(_) => {}
                    Err(PipelineError::Aborted) => break,
                    Err(e) => {
                        ::log::warn!("problem {} incomplete: {e}", job.problem.id);
                        let _ = tx.send(Msg::Event(
                            pos,
                            LogEvent::Incomplete {
                                problem_id: job.problem.id.clone(),
                                reason: e.to_string(),
                            },
                        ));
                    }
                }
                if tx.send(Msg::Done(pos)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut head = 0usize;
        let mut pending: BTreeMap<usize, Vec<LogEvent>> = BTreeMap::new();
        let mut done: HashSet<usize> = HashSet::new();
        let mut commit = |e: LogEvent, committed: &mut Vec<LogEvent>| -> io::Result<()> {
            sink.append(&e)?;
            committed.push(e);
            Ok(())
        };
        'recv: for msg in rx.iter() {
            let step = match msg {
                Msg::Event(pos, e) if pos == head => commit(e, &mut committed),
                Msg::Event(pos, e) => {
                    pending.entry(pos).or_default().push(e);
                    Ok(())
                }
                Msg::Done(pos) => {
                    done.insert(pos);
                    let mut r = Ok(());
                    while done.contains(&head) {
                        head += 1;
                        for e in pending.remove(&head).unwrap_or_default() {
                            r = commit(e, &mut committed);
                            if r.is_err() {
                                break;
                            }
                        }
                        if r.is_err() {
                            break;
                        }
                    }
                    r
                }
            };
            if let Err(e) = step {
                abort.store(true, Ordering::SeqCst);
                failure = Some(e);
                break 'recv;
            }
        }
        drop(rx);
    });

    match failure {
        Some(e) => Err(PipelineError::Storage(e)),
        None => Ok(committed),
    }
}

/// Formalizes every problem, writing the header and then every event to `sink`.
pub fn run_corpus(
    problems: &[Problem],
    cfg: &RunConfig,
    services: &Services<'_>,
    opts: RunOptions,
    sink: &mut dyn EventSink,
) -> Result<RunLog, PipelineError> {
    cfg.validate()?;
    validate_corpus(problems)?;
    let header = RunHeader::new(cfg, problems);
    sink.append(&LogEvent::Header(header.clone()))?;
    let jobs: Vec<Job<'_>> = problems
        .iter()
        .map(|p| Job {
            problem: p,
            cached: BTreeMap::new(),
        })
        .collect();
    let events = execute(&jobs, cfg, services, opts, sink)?;
    Ok(RunLog { header, events })
}

/// Continues an interrupted run. Attempts already in `log` are reused, never
/// re-requested; only new events are written to `sink`.
pub fn resume(
    log: RunLog,
    problems: &[Problem],
    cfg: &RunConfig,
    services: &Services<'_>,
    opts: RunOptions,
    sink: &mut dyn EventSink,
) -> Result<RunLog, PipelineError> {
    if log.header.config != *cfg {
        return Err(PipelineError::ConfigMismatch(
            "run configuration differs from the log header".into(),
        ));
    }
    let hash = corpus_hash(problems);
    if log.header.corpus_hash != hash || log.header.problem_count != problems.len() {
        return Err(PipelineError::ConfigMismatch(
            "input corpus differs from the one the log was started with".into(),
        ));
    }
    validate_corpus(problems)?;

    let mut cached: BTreeMap<&str, BTreeMap<AttemptKey, AttemptRecord>> = BTreeMap::new();
    for a in log.attempts() {
        cached
            .entry(a.problem_id.as_str())
            .or_default()
            .insert((a.round, a.sample_index), a.clone());
    }
    let jobs: Vec<Job<'_>> = problems
        .iter()
        .filter_map(|p| {
            let have = cached.remove(p.id.as_str()).unwrap_or_default();
            let settled = ProblemOutcome::settle(&p.id, have.values().cloned().collect(), cfg).is_some();
            (!settled).then_some(Job {
                problem: p,
                cached: have,
            })
        })
        .collect();

    let new_events = execute(&jobs, cfg, services, opts, sink)?;
    let mut events = log.events;
    events.extend(new_events);
    Ok(RunLog {
        header: log.header,
        events,
    })
}

/// One line of the output dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub problem_id: String,
    pub natural_language: String,
    pub formal_statements: Vec<String>,
    pub provenance: Vec<Provenance>,
}

/// Dataset records for accepted problems, in corpus order.
pub fn dataset_records(outcomes: &[ProblemOutcome], problems: &[Problem]) -> Vec<DatasetRecord> {
    let by_id: BTreeMap<&str, &ProblemOutcome> = outcomes.iter().map(|o| (o.problem_id.as_str(), o)).collect();
    problems
        .iter()
        .filter_map(|p| {
            let o = by_id.get(p.id.as_str())?;
            (o.status == ProblemStatus::Accepted).then(|| DatasetRecord {
                problem_id: p.id.clone(),
                natural_language: p.statement.clone(),
                formal_statements: o.accepted_statements.clone(),
                provenance: o.provenance.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::VerificationStatus;

    fn attempt(round: u32, sample: u32, outcome: AttemptOutcome, lean: &str) -> AttemptRecord {
        let verification = match outcome {
            AttemptOutcome::FvFail => VerificationResult::synthetic_error("bad"),
            _ => crate::verify::classify_messages(&serde_json::json!({"env": 0})),
        };
        AttemptRecord {
            problem_id: "p".into(),
            sample_index: sample,
            round,
            lean: lean.into(),
            verification,
            backtranslation: None,
            verdict: (outcome != AttemptOutcome::FvFail).then(|| ConsistencyVerdict {
                same: outcome == AttemptOutcome::Accepted,
                analysis: format!("analysis {round}/{sample}"),
            }),
            outcome,
            started_ms: 1,
            finished_ms: 2,
        }
    }

    #[test]
    fn best_failure_prefers_consistency_then_latest() {
        let a = vec![
            attempt(0, 1, AttemptOutcome::CcFail, "a"),
            attempt(0, 2, AttemptOutcome::FvFail, "b"),
            attempt(0, 3, AttemptOutcome::CcFail, "c"),
            attempt(0, 4, AttemptOutcome::FvFail, "d"),
        ];
        assert_eq!(best_failure(&a).unwrap().lean, "c");
        let only_fv = vec![
            attempt(0, 1, AttemptOutcome::FvFail, "a"),
            attempt(0, 2, AttemptOutcome::FvFail, "b"),
        ];
        assert_eq!(best_failure(&only_fv).unwrap().lean, "b");
    }

    #[test]
    fn settle_needs_every_sample() {
        let cfg = RunConfig {
            samples_per_problem: 2,
            ..RunConfig::default()
        };
        let one = vec![attempt(0, 1, AttemptOutcome::Accepted, "theorem t : True := by sorry")];
        assert!(ProblemOutcome::settle("p", one.clone(), &cfg).is_none());

        let mut two = one;
        two.push(attempt(0, 2, AttemptOutcome::FvFail, "x"));
        let o = ProblemOutcome::settle("p", two, &cfg).unwrap();
        assert!(o.first_pass);
        assert_eq!(o.accepted_statements, vec!["theorem p_1 : True := by sorry"]);

        let failed_r0 = vec![
            attempt(0, 1, AttemptOutcome::FvFail, "x"),
            attempt(0, 2, AttemptOutcome::CcFail, "y"),
        ];
        assert!(ProblemOutcome::settle("p", failed_r0, &cfg).is_none());
    }

    #[test]
    fn dedup_and_provenance() {
        let cfg = RunConfig {
            samples_per_problem: 3,
            ..RunConfig::default()
        };
        let a = vec![
            attempt(0, 1, AttemptOutcome::Accepted, "theorem a : 1 = 1 := by sorry"),
            attempt(0, 2, AttemptOutcome::Accepted, "theorem b  : 1 = 1 :=\n by sorry"),
            attempt(0, 3, AttemptOutcome::Accepted, "theorem c : 2 = 2 := by sorry"),
        ];
        let o = ProblemOutcome::settle("p", a.clone(), &cfg).unwrap();
        assert_eq!(o.accepted_statements.len(), 2);
        assert_eq!(
            o.provenance[1],
            Provenance {
                round: 0,
                sample_index: 3
            }
        );
        assert_eq!(o.accepted_statements[1], "theorem p_2 : 2 = 2 := by sorry");

        let keep_all = RunConfig {
            dedup_normalized: false,
            ..cfg
        };
        assert_eq!(
            ProblemOutcome::settle("p", a, &keep_all)
                .unwrap()
                .accepted_statements
                .len(),
            3
        );
    }

    #[test]
    fn failure_context_text() {
        let fv = attempt(0, 1, AttemptOutcome::FvFail, "theorem t : x := by sorry");
        let ctx = fv.failure_context().unwrap();
        assert_eq!(ctx.stage, FailureStage::Verification);
        assert_eq!(ctx.error_text, "line 0, col 0: bad");
        let cc = attempt(0, 2, AttemptOutcome::CcFail, "l").failure_context().unwrap();
        assert_eq!(cc.error_text, "analysis 0/2");
        assert!(attempt(0, 3, AttemptOutcome::Accepted, "l").failure_context().is_none());
        assert_eq!(fv.verification.status, VerificationStatus::Error);
    }

    #[test]
    fn config_validation() {
        let bad = RunConfig {
            samples_per_problem: 0,
            ..RunConfig::default()
        };
        assert!(matches!(bad.validate(), Err(PipelineError::InvalidConfig(_))));
        assert!(RunConfig::default().validate().is_ok());
    }
}
