//! Five-dimension quality ratings of accepted statements.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::llm::{Gateway, GatewayError, ModelRole};
use crate::par::par_map;
use crate::pipeline::DatasetRecord;
use crate::prompts::{build_rating_prompt, parse_rating, Dimension, ParseError, QualityAssessment, Rating};

#[derive(Debug, thiserror::Error)]
pub enum RatingError {
    #[error("cannot rate an empty statement")]
    EmptyStatement,
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Asks the rater role for an assessment, retrying once if the reply does not parse.
pub fn rate_statement(lean: &str, gateway: &Gateway) -> Result<QualityAssessment, RatingError> {
    if lean.trim().is_empty() {
        return Err(RatingError::EmptyStatement);
    }
    let req = gateway.request(ModelRole::Rater, build_rating_prompt(lean));
    let mut last = None;
    for _ in 0..2 {
        let reply = gateway.complete(&req)?;
        match parse_rating(&reply.text) {
            Ok(q) => return Ok(q),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt").into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatedEntry {
    pub problem_id: String,
    /// 1-based position in the record's statement list.
    pub statement_ordinal: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<QualityAssessment>,
    /// Set when the rater never produced a parseable reply.
    #[serde(default)]
    pub unrated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingScope {
    #[default]
    PerStatement,
    /// Only the first statement of each problem.
    PerProblem,
}

/// Rates dataset statements in parallel. Gateway outages abort; unparseable
/// replies become unrated entries.
pub fn rate_dataset(
    records: &[DatasetRecord],
    gateway: &Gateway,
    scope: RatingScope,
    workers: usize,
) -> Result<Vec<RatedEntry>, GatewayError> {
    let jobs: Vec<(&str, usize, &str)> = records
        .iter()
        .flat_map(|r| {
            let take = match scope {
                RatingScope::PerStatement => r.formal_statements.len(),
                RatingScope::PerProblem => 1,
            };
            r.formal_statements
                .iter()
                .take(take)
                .enumerate()
                .map(move |(i, s)| (r.problem_id.as_str(), i + 1, s.as_str()))
        })
        .collect();
    par_map(&jobs, workers, |_, &(id, ordinal, lean)| {
        let entry = |assessment: Option<QualityAssessment>| RatedEntry {
            problem_id: id.to_string(),
            statement_ordinal: ordinal,
            unrated: assessment.is_none(),
            assessment,
        };
        match rate_statement(lean, gateway) {
            Ok(q) => Ok(entry(Some(q))),
            Err(RatingError::Gateway(e)) => Err(e),
            Err(e) => {
                ::log::warn!("{id} #{ordinal} left unrated: {e}");
                Ok(entry(None))
            }
        }
    })
    .into_iter()
    .collect()
}

/// Counts per rating level, lowest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Histogram(pub [usize; 5]);

impl Histogram {
    pub fn add(&mut self, r: Rating) {
        self.0[r as usize] += 1;
    }

    pub fn count(&self, r: Rating) -> usize {
        self.0[r as usize]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Share of entries rated `threshold` or better; `None` when empty.
    pub fn fraction_at_least(&self, threshold: Rating) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.0[threshold as usize..].iter().sum::<usize>() as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RatingDistribution {
    pub per_dimension: BTreeMap<Dimension, Histogram>,
    pub overall: Histogram,
    pub rated: usize,
    pub unrated: usize,
}

impl RatingDistribution {
    /// Over the overall assessment of rated entries.
    pub fn fraction_at_least(&self, threshold: Rating) -> Option<f64> {
        self.overall.fraction_at_least(threshold)
    }

    /// Text histograms, one block per dimension plus the overall assessment.
    pub fn render_text(&self) -> String {
        let mut out = format!("rated: {}  unrated: {}\n", self.rated, self.unrated);
        let block = |out: &mut String, title: &str, h: &Histogram| {
            out.push_str(&format!("\n{title}\n"));
            for r in Rating::ALL {
                let n = h.count(r);
                let pct = if h.total() > 0 {
                    100.0 * n as f64 / h.total() as f64
                } else {
                    0.0
                };
                out.push_str(&format!(
                    "  {:<14}{:>6}  {:>6.2}%  {}\n",
                    r.label(),
                    n,
                    pct,
                    "#".repeat((pct / 2.0).round() as usize)
                ));
            }
        };
        for d in Dimension::ALL {
            block(
                &mut out,
                d.heading(),
                self.per_dimension.get(&d).unwrap_or(&Histogram::default()),
            );
        }
        block(&mut out, "Overall assessment", &self.overall);
        out
    }
}

pub fn rating_distribution(entries: &[RatedEntry]) -> RatingDistribution {
    let mut dist = RatingDistribution::default();
    for e in entries {
        match &e.assessment {
            Some(q) if !e.unrated => {
                dist.rated += 1;
                dist.overall.add(q.overall);
                for (d, r) in &q.ratings {
                    dist.per_dimension.entry(*d).or_default().add(*r);
                }
            }
            _ => dist.unrated += 1,
        }
    }
    dist
}
