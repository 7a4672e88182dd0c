//! Pipeline statistics, classifier metrics and ablation tables.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::pipeline::{ProblemOutcome, RunLog};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("run log contains no finished problems")]
    EmptyLog,
    #[error("arm {arm} was run on a different corpus than arm {reference}")]
    CorpusMismatch { arm: String, reference: String },
    #[error("no ablation arms given")]
    NoArms,
    #[error("inconsistent counts: {0}")]
    InconsistentCounts(String),
}

/// A percentage held as integer hundredths, so `93.39%` is `Percent(9339)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Percent(pub u64);

impl Percent {
    /// `count / total` as a percentage rounded half-up to two decimals.
    /// Zero when `total` is zero.
    pub fn of(count: u64, total: u64) -> Self {
        if total == 0 {
            return Percent(0);
        }
        Percent((count * 20_000 + total) / (2 * total))
    }

    pub fn hundredths(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineRates {
    pub fv_pass: Percent,
    pub fv_first: Percent,
    pub fv_feedback: Percent,
    pub cc_pass: Percent,
    pub cc_first: Percent,
    pub cc_feedback: Percent,
}

/// Per-problem pass counts. `fv_*` count problems with a statement that
/// elaborated, `cc_*` problems with an accepted statement; `*_first` in the
/// initial round, `*_feedback` only after feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub total: u64,
    pub fv_pass: u64,
    pub fv_first: u64,
    pub fv_feedback: u64,
    pub cc_pass: u64,
    pub cc_first: u64,
    pub cc_feedback: u64,
    /// Problems left out of `total` because a service outage cut them short.
    pub incomplete: u64,
    pub rates: PipelineRates,
}

impl PipelineStats {
    pub fn from_counts(
        total: u64,
        fv_first: u64,
        fv_feedback: u64,
        cc_first: u64,
        cc_feedback: u64,
    ) -> Result<Self, ReportError> {
        let fv_pass = fv_first + fv_feedback;
        let cc_pass = cc_first + cc_feedback;
        if fv_pass > total || cc_pass > fv_pass {
            return Err(ReportError::InconsistentCounts(format!(
                "need cc_pass {cc_pass} <= fv_pass {fv_pass} <= total {total}"
            )));
        }
        Ok(Self {
            total,
            fv_pass,
            fv_first,
            fv_feedback,
            cc_pass,
            cc_first,
            cc_feedback,
            incomplete: 0,
            rates: PipelineRates {
                fv_pass: Percent::of(fv_pass, total),
                fv_first: Percent::of(fv_first, total),
                fv_feedback: Percent::of(fv_feedback, total),
                cc_pass: Percent::of(cc_pass, total),
                cc_first: Percent::of(cc_first, total),
                cc_feedback: Percent::of(cc_feedback, total),
            },
        })
    }

    pub fn from_outcomes(outcomes: &[ProblemOutcome]) -> Self {
        let mut fv_first = 0;
        let mut fv_feedback = 0;
        let mut cc_first = 0;
        let mut cc_feedback = 0;
        for o in outcomes {
            let valid_in = |first: bool| {
                o.attempts
                    .iter()
                    .any(|a| (a.round == 0) == first && a.verification.status.is_valid())
            };
            if valid_in(true) {
                fv_first += 1;
            } else if valid_in(false) {
                fv_feedback += 1;
            }
            if o.first_pass {
                cc_first += 1;
            } else if !o.accepted_statements.is_empty() {
                cc_feedback += 1;
            }
        }
        Self::from_counts(outcomes.len() as u64, fv_first, fv_feedback, cc_first, cc_feedback)
            .expect("accepted attempts always passed verification")
    }

    pub fn render_text(&self) -> String {
        let rows = [
            ("Syntactic validity", self.fv_pass, self.rates.fv_pass),
            ("  pass at one go", self.fv_first, self.rates.fv_first),
            ("  pass with error feedback", self.fv_feedback, self.rates.fv_feedback),
            ("Semantic consistency", self.cc_pass, self.rates.cc_pass),
            ("  pass at one go", self.cc_first, self.rates.cc_first),
            ("  pass with error feedback", self.cc_feedback, self.rates.cc_feedback),
        ];
        let mut out = format!("problems: {}  incomplete (excluded): {}\n", self.total, self.incomplete);
        out.push_str(&format!("{:<30}{:>8}{:>10}\n", "stage", "count", "rate"));
        for (label, n, p) in rows {
            out.push_str(&format!("{label:<30}{n:>8}{:>9}%\n", p.to_string()));
        }
        out
    }
}

/// Statistics over the finished problems of a log. Incomplete problems are
/// excluded from every denominator and reported in `incomplete`.
pub fn compute_pipeline_stats(log: &RunLog) -> Result<PipelineStats, ReportError> {
    let replay = log.replay();
    if replay.outcomes.is_empty() {
        return Err(ReportError::EmptyLog);
    }
    if !replay.incomplete.is_empty() {
        ::log::warn!("{} incomplete problems excluded from rates", replay.incomplete.len());
    }
    let mut stats = PipelineStats::from_outcomes(&replay.outcomes);
    stats.incomplete = replay.incomplete.len() as u64;
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Each metric is `None` when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall.
pub fn f1_from(precision: f64, recall: f64) -> Option<f64> {
    let sum = precision + recall;
    (sum > 0.0).then(|| 2.0 * precision * recall / sum)
}

pub fn compute_classifier_metrics(c: &ConfusionCounts) -> ClassifierMetrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    ClassifierMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1: precision.zip(recall).and_then(|(p, r)| f1_from(p, r)),
    }
}

/// A same/different label for one problem, optionally for one attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub problem_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    pub same: bool,
}

impl LabelRecord {
    fn key(&self) -> (&str, Option<u32>, Option<u32>) {
        (&self.problem_id, self.round, self.sample_index)
    }
}

/// Checker verdicts recorded in a run log, one per checked attempt.
pub fn verdict_labels(log: &RunLog) -> Vec<LabelRecord> {
    log.attempts()
        .filter_map(|a| {
            a.verdict.as_ref().map(|v| LabelRecord {
                problem_id: a.problem_id.clone(),
                round: Some(a.round),
                sample_index: Some(a.sample_index),
                same: v.same,
            })
        })
        .collect()
}

/// Pairs gold labels with predictions on (problem, round, sample); "same" is
/// the positive class. Returns the counts and the number of gold labels with
/// no prediction.
pub fn confusion_from_labels(gold: &[LabelRecord], pred: &[LabelRecord]) -> (ConfusionCounts, usize) {
    let by_key: HashMap<_, bool> = pred.iter().map(|p| (p.key(), p.same)).collect();
    let mut c = ConfusionCounts::default();
    let mut unmatched = 0;
    for g in gold {
        match by_key.get(&g.key()) {
            Some(&p) => match (g.same, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            },
            None => unmatched += 1,
        }
    }
    (c, unmatched)
}

/// First/second-pass counts of one ablation arm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationArm {
    pub name: String,
    pub total: u64,
    pub fv_first: u64,
    pub fv_second: u64,
    pub cc_first: u64,
    pub cc_second: u64,
    /// `(cc_first + cc_second) / total`.
    pub overall: Percent,
}

impl AblationArm {
    pub fn from_counts(name: &str, total: u64, fv_first: u64, fv_second: u64, cc_first: u64, cc_second: u64) -> Self {
        Self {
            name: name.into(),
            total,
            fv_first,
            fv_second,
            cc_first,
            cc_second,
            overall: Percent::of(cc_first + cc_second, total),
        }
    }

    pub fn from_stats(name: &str, s: &PipelineStats) -> Self {
        Self::from_counts(name, s.total, s.fv_first, s.fv_feedback, s.cc_first, s.cc_feedback)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationTable {
    pub arms: Vec<AblationArm>,
}

impl AblationTable {
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "{:<16}{:>7}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
            "arm", "total", "fv 1st", "fv 2nd", "cc 1st", "cc 2nd", "overall"
        );
        for a in &self.arms {
            out.push_str(&format!(
                "{:<16}{:>7}{:>10}{:>10}{:>10}{:>10}{:>9}%\n",
                a.name,
                a.total,
                a.fv_first,
                a.fv_second,
                a.cc_first,
                a.cc_second,
                a.overall.to_string()
            ));
        }
        out
    }
}

/// One row per named log. All logs must come from the same corpus.
pub fn ablation_table(logs: &[(String, RunLog)]) -> Result<AblationTable, ReportError> {
    let (ref_name, ref_log) = logs.first().ok_or(ReportError::NoArms)?;
    let mut arms = Vec::with_capacity(logs.len());
    for (name, log) in logs {
        if log.header.corpus_hash != ref_log.header.corpus_hash {
            return Err(ReportError::CorpusMismatch {
                arm: name.clone(),
                reference: ref_name.clone(),
            });
        }
        arms.push(AblationArm::from_stats(name, &compute_pipeline_stats(log)?));
    }
    Ok(AblationTable { arms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn percent_rounds_half_up() {
        assert_eq!(Percent::of(1, 8).to_string(), "12.50");
        assert_eq!(Percent::of(1, 3).to_string(), "33.33");
        assert_eq!(Percent::of(2, 3).to_string(), "66.67");
        // 1/1600 = 0.0625% -> 0.06, 1/800 = 0.125% -> 0.13
        assert_eq!(Percent::of(1, 1600).to_string(), "0.06");
        assert_eq!(Percent::of(1, 800).to_string(), "0.13");
        assert_eq!(Percent::of(0, 0), Percent(0));
    }

    #[test]
    fn hand_confusion() {
        let m = compute_classifier_metrics(&ConfusionCounts {
            tp: 2,
            fp: 1,
            fn_: 1,
            tn: 6,
        });
        assert_eq!(m.accuracy, Some(0.8));
        assert!((m.precision.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let none = compute_classifier_metrics(&ConfusionCounts {
            tn: 3,
            ..Default::default()
        });
        assert_eq!(none.precision, None);
        assert_eq!(none.f1, None);
        assert_eq!(none.accuracy, Some(1.0));
    }

    #[test]
    fn label_join() {
        let l = |id: &str, same| LabelRecord {
            problem_id: id.into(),
            round: None,
            sample_index: None,
            same,
        };
        let (c, missing) = confusion_from_labels(
            &[l("a", true), l("b", false), l("c", true)],
            &[l("a", true), l("b", true)],
        );
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 1,
                fp: 1,
                fn_: 0,
                tn: 0
            }
        );
        assert_eq!(missing, 1);
    }

    #[test]
    fn inconsistent_counts_rejected() {
        assert!(PipelineStats::from_counts(10, 3, 1, 4, 1).is_err());
    }

    proptest! {
        #[test]
        fn rate_rounds_back_to_count(total in 1u64..10_000, frac in 0.0f64..=1.0) {
            let count = (total as f64 * frac).floor() as u64;
            let p = Percent::of(count, total);
            prop_assert_eq!((p.as_f64() * total as f64 / 100.0).round() as u64, count);
        }

        #[test]
        fn f1_between_p_and_r(p in 0.01f64..=1.0, r in 0.01f64..=1.0) {
            let f = f1_from(p, r).unwrap();
            prop_assert!(f >= p.min(r) - 1e-12 && f <= p.max(r) + 1e-12);
            if (p - r).abs() > 1e-9 {
                prop_assert!(f > p.min(r) && f < p.max(r));
            }
        }
    }
}
