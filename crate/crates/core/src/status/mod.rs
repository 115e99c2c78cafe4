//! Knowledge statuses and the hierarchical procedure that assigns them.

mod engine;
mod study;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::stats::TestOutcome;

pub use engine::{assign_status, characterize};
pub use study::{
    sample_counts, stability_study, StabilityPoint, StudyConfig, SyntheticGenerator,
};

/// Five-way classification of a model's knowledge of one question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeStatus {
    ConsistentCorrect,
    ConflictingCorrect,
    Absent,
    ConflictingWrong,
    ConsistentWrong,
}

impl KnowledgeStatus {
    pub const ALL: [KnowledgeStatus; 5] = [
        KnowledgeStatus::ConsistentCorrect,
        KnowledgeStatus::ConflictingCorrect,
        KnowledgeStatus::Absent,
        KnowledgeStatus::ConflictingWrong,
        KnowledgeStatus::ConsistentWrong,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KnowledgeStatus::ConsistentCorrect => "consistent_correct",
            KnowledgeStatus::ConflictingCorrect => "conflicting_correct",
            KnowledgeStatus::Absent => "absent",
            KnowledgeStatus::ConflictingWrong => "conflicting_wrong",
            KnowledgeStatus::ConsistentWrong => "consistent_wrong",
        }
    }
}

impl fmt::Display for KnowledgeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tallies of sampled responses over a support set of size `d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseCounts {
    pub per_option: Vec<u64>,
    pub n_invalid: u64,
    pub n_total: u64,
}

impl ResponseCounts {
    pub fn new(per_option: Vec<u64>, n_invalid: u64) -> Result<Self> {
        let n_total = per_option.iter().sum::<u64>() + n_invalid;
        let counts = Self { per_option, n_invalid, n_total };
        counts.validate()?;
        Ok(counts)
    }

    pub fn validate(&self) -> Result<()> {
        // An empty support is only meaningful when every response was invalid.
        if self.per_option.is_empty() && self.n_invalid != self.n_total {
            return param("support set is empty");
        }
        if self.per_option.iter().sum::<u64>() + self.n_invalid != self.n_total {
            return param("option counts plus invalid count must equal the total");
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.per_option.len()
    }

    pub fn n_valid(&self) -> u64 {
        self.n_total - self.n_invalid
    }
}

/// Empirical answer distribution over the support; `None` when every
/// response was invalid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub probs: Option<Vec<f64>>,
}

impl EmpiricalDistribution {
    pub fn is_defined(&self) -> bool {
        self.probs.is_some()
    }
}

pub fn estimate_distribution(counts: &ResponseCounts) -> Result<EmpiricalDistribution> {
    if counts.n_total == 0 {
        return param("no responses to estimate from");
    }
    counts.validate()?;
    let valid = counts.n_valid();
    if valid == 0 {
        return Ok(EmpiricalDistribution { probs: None });
    }
    let probs = counts
        .per_option
        .iter()
        .map(|&c| c as f64 / valid as f64)
        .collect();
    Ok(EmpiricalDistribution { probs: Some(probs) })
}

/// Sorted, nonempty set of support indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeSet(Vec<usize>);

impl ModeSet {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return param("mode set must be nonempty");
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(Self(indices))
    }

    pub fn full(d: usize) -> Self {
        Self((0..d).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KScopeConfig {
    pub alpha: f64,
    /// Null invalid-response rate for the first step.
    pub invalid_null_rate: f64,
    pub max_refinement_rounds: usize,
    pub enumeration_budget: u64,
    pub monte_carlo_draws: usize,
    pub monte_carlo_seed: u64,
}

impl Default for KScopeConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            invalid_null_rate: 0.5,
            max_refinement_rounds: 64,
            enumeration_budget: crate::stats::DEFAULT_ENUMERATION_BUDGET,
            monte_carlo_draws: crate::stats::DEFAULT_MONTE_CARLO_DRAWS,
            monte_carlo_seed: 0,
        }
    }
}

impl KScopeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return param(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(self.invalid_null_rate > 0.0 && self.invalid_null_rate < 1.0) {
            return param(format!(
                "invalid null rate {} outside (0, 1)",
                self.invalid_null_rate
            ));
        }
        Ok(())
    }
}

/// Which part of the hierarchy produced a trail entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "step")]
pub enum Step {
    InvalidResponses,
    UniformGuessing,
    ConflictingKnowledge { round: usize },
    ConsistentKnowledge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    #[serde(flatten)]
    pub step: Step,
    /// Hypothesis under test, e.g. the candidate mode set.
    pub hypothesis: String,
    pub outcome: Option<TestOutcome>,
    pub decision: String,
}

/// Full record of one characterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub question_id: String,
    pub counts: ResponseCounts,
    pub distribution: EmpiricalDistribution,
    pub mode_set: ModeSet,
    pub status: KnowledgeStatus,
    pub gold: Option<usize>,
    pub step_trail: Vec<StepRecord>,
}

/// Counts of parametric status (rows) to contextual status (columns).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub counts: [[u64; 5]; 5],
}

impl TransitionMatrix {
    pub fn get(&self, from: KnowledgeStatus, to: KnowledgeStatus) -> u64 {
        self.counts[from.index()][to.index()]
    }

    pub fn row_sum(&self, from: KnowledgeStatus) -> u64 {
        self.counts[from.index()].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn build_transition_matrix(pairs: &[(KnowledgeStatus, KnowledgeStatus)]) -> TransitionMatrix {
    let mut m = TransitionMatrix::default();
    for &(p, q) in pairs {
        m.counts[p.index()][q.index()] += 1;
    }
    m
}

/// Share of reports in each status, in [`KnowledgeStatus::ALL`] order.
pub fn status_distribution(reports: &[StatusReport]) -> Result<[f64; 5]> {
    if reports.is_empty() {
        return Err(Error::Parameter("status distribution of an empty report list".into()));
    }
    let mut out = [0.0; 5];
    for r in reports {
        out[r.status.index()] += 1.0;
    }
    let n = reports.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}
