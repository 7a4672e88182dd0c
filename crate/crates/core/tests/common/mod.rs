#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use autoform_core::corpus::Problem;
use autoform_core::jsonl::read_all;
use autoform_core::llm::{Gateway, ScriptedBackend};
use autoform_core::pipeline::{
    AttemptOutcome, AttemptRecord, LogEvent, RunConfig, RunHeader, RunLog, RunOptions, Services,
};
use autoform_core::prompts::ConsistencyVerdict;
use autoform_core::prompts::ExemplarSet;
use autoform_core::verify::{StubVerifier, VerificationResult, VerificationStatus, Verifier};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub struct Scenario {
    pub problems: Vec<Problem>,
    pub backend: Arc<ScriptedBackend>,
    pub gateway: Gateway,
    pub verifier: StubVerifier,
    pub exemplars: ExemplarSet,
}

impl Scenario {
    pub fn load() -> Self {
        let backend = Arc::new(ScriptedBackend::from_file(&fixture("scenario/script.json")).unwrap());
        Self {
            problems: read_all(&fixture("scenario/problems.jsonl")).unwrap(),
            gateway: Gateway::scripted(backend.clone()),
            backend,
            verifier: StubVerifier::from_file(&fixture("scenario/verifier.json")).unwrap(),
            exemplars: ExemplarSet::builtin(),
        }
    }

    pub fn services(&self) -> Services<'_> {
        Services {
            gateway: &self.gateway,
            verifier: &self.verifier,
            exemplars: &self.exemplars,
        }
    }

    pub fn run(&self, cfg: &RunConfig, workers: usize) -> RunLog {
        let mut sink = Vec::new();
        let log = autoform_core::pipeline::run_corpus(
            &self.problems,
            cfg,
            &self.services(),
            RunOptions { workers },
            &mut sink,
        )
        .unwrap();
        assert_eq!(
            sink.len(),
            log.events.len() + 1,
            "sink holds the header plus every event"
        );
        log
    }
}

/// Events with timestamps zeroed.
pub fn normalized(events: &[LogEvent]) -> Vec<LogEvent> {
    events
        .iter()
        .map(|e| match e {
            LogEvent::Attempt(a) => LogEvent::Attempt(a.without_timestamps()),
            other => other.clone(),
        })
        .collect()
}

/// Scenario outcome oracle: (problem id, accepted, first pass, accepted statement count).
pub const SCENARIO_FATES: [(&str, bool, bool, usize); 10] = [
    ("s01", true, true, 1),
    ("s02", true, true, 2),
    ("s03", true, true, 1),
    ("s04", true, true, 1),
    ("s05", true, true, 1),
    ("s06", true, true, 1),
    ("s07", true, false, 1),
    ("s08", true, false, 1),
    ("s09", false, false, 0),
    ("s10", false, false, 0),
];

/// Per-round fate of a one-sample attempt in a synthetic log.
#[derive(Clone, Copy)]
enum Fate {
    FvFail,
    CcFail,
    Accept,
}

fn synthetic_attempt(id: &str, n: usize, round: u32, fate: Fate) -> LogEvent {
    let lean = format!("theorem {id} : {n} + {round} = {n} + {round} := by sorry");
    let (status, verdict, outcome) = match fate {
        Fate::FvFail => (VerificationStatus::Error, None, AttemptOutcome::FvFail),
        Fate::CcFail => (VerificationStatus::PassWithSorry, Some(false), AttemptOutcome::CcFail),
        Fate::Accept => (VerificationStatus::PassWithSorry, Some(true), AttemptOutcome::Accepted),
    };
    let verification = match status {
        VerificationStatus::Error => VerificationResult::synthetic_error("unknown identifier 'foo'"),
        _ => StubVerifier::default().verify(&lean).unwrap(),
    };
    LogEvent::Attempt(AttemptRecord {
        problem_id: id.into(),
        sample_index: 1,
        round,
        lean,
        verification,
        backtranslation: verdict.map(|_| "back".to_string()),
        verdict: verdict.map(|same| ConsistencyVerdict {
            same,
            analysis: "synthetic".into(),
        }),
        outcome,
        started_ms: 0,
        finished_ms: 0,
    })
}

/// A one-sample, one-feedback-round log whose problems realise the given
/// first/second-pass counts for both stages.
pub fn synthetic_log(
    corpus: &str,
    total: usize,
    fv_first: usize,
    fv_second: usize,
    cc_first: usize,
    cc_second: usize,
) -> RunLog {
    use Fate::*;
    let via_fv_retry = cc_second.min(fv_second);
    let via_cc_retry = cc_second - via_fv_retry;
    let mut plan: Vec<(Fate, Option<Fate>)> = Vec::new();
    plan.extend(std::iter::repeat_n((Accept, None), cc_first));
    plan.extend(std::iter::repeat_n((CcFail, Some(Accept)), via_cc_retry));
    plan.extend(std::iter::repeat_n((FvFail, Some(Accept)), via_fv_retry));
    plan.extend(std::iter::repeat_n(
        (CcFail, Some(CcFail)),
        fv_first - cc_first - via_cc_retry,
    ));
    plan.extend(std::iter::repeat_n((FvFail, Some(CcFail)), fv_second - via_fv_retry));
    assert!(plan.len() <= total, "counts exceed total");
    plan.resize(total, (FvFail, Some(FvFail)));

    let problems: Vec<Problem> = (0..total)
        .map(|i| Problem::new(format!("{corpus}{i:03}"), corpus, format!("Synthetic problem {i}.")))
        .collect();
    let cfg = RunConfig {
        samples_per_problem: 1,
        ..RunConfig::default()
    };
    let mut events = Vec::new();
    for (i, (p, (first, second))) in problems.iter().zip(plan).enumerate() {
        events.push(synthetic_attempt(&p.id, i, 0, first));
        if let Some(f) = second {
            events.push(synthetic_attempt(&p.id, i, 1, f));
        }
    }
    RunLog {
        header: RunHeader::new(&cfg, &problems),
        events,
    }
}
