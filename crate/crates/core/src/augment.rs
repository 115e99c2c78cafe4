//! Context-augmentation strategies and their success-rate comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::client::{with_retries, ChatRequest, ModelClient, RequestPurpose};
use crate::error::{param, Error, Result};
use crate::features::unique_token_count;
use crate::prompts::{render, InstructionVariant, CREDIBILITY_BLOCK, SUMMARIZE_CONSTRAINED, SUMMARIZE_NAIVE};
use crate::status::KnowledgeStatus;
use crate::text::words;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationStrategy {
    Credibility,
    NaiveSummarization,
    ConstrainedSummarization,
    Combined,
}

impl AugmentationStrategy {
    pub const ALL: [AugmentationStrategy; 4] = [
        AugmentationStrategy::Credibility,
        AugmentationStrategy::NaiveSummarization,
        AugmentationStrategy::ConstrainedSummarization,
        AugmentationStrategy::Combined,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AugmentationStrategy::Credibility => "credibility",
            AugmentationStrategy::NaiveSummarization => "naive_summarization",
            AugmentationStrategy::ConstrainedSummarization => "constrained_summarization",
            AugmentationStrategy::Combined => "combined",
        }
    }

    pub fn needs_metadata(self) -> bool {
        matches!(self, AugmentationStrategy::Credibility | AugmentationStrategy::Combined)
    }
}

impl fmt::Display for AugmentationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown augmentation strategy {s:?}")))
    }
}

/// Where a context came from: a label such as an article title plus
/// publication fields.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CredibilityMetadata {
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
}

impl CredibilityMetadata {
    pub fn validate(&self) -> Result<()> {
        if self.source.trim().is_empty() && self.fields.values().all(|v| v.trim().is_empty()) {
            return param("credibility metadata has no nonempty field");
        }
        Ok(())
    }

    fn render_fields(&self) -> String {
        let mut lines = Vec::new();
        if !self.source.trim().is_empty() {
            lines.push(format!("Source: {}", self.source.trim()));
        }
        for (k, v) in &self.fields {
            if !v.trim().is_empty() {
                lines.push(format!("{k}: {}", v.trim()));
            }
        }
        lines.join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryMode {
    Naive,
    Constrained,
}

/// Length and vocabulary of a summary against its source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryCheck {
    pub original_length: u64,
    pub summary_length: u64,
    pub original_unique_tokens: u64,
    pub summary_unique_tokens: u64,
}

impl SummaryCheck {
    pub fn shorter(&self) -> bool {
        self.summary_length < self.original_length
    }

    pub fn fewer_unique_tokens(&self) -> bool {
        self.summary_unique_tokens < self.original_unique_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedContext {
    pub strategy: AugmentationStrategy,
    pub original: String,
    pub augmented: String,
    pub instruction: InstructionVariant,
    pub summary_check: Option<SummaryCheck>,
}

pub fn apply_credibility(context: &str, meta: &CredibilityMetadata) -> Result<AugmentedContext> {
    meta.validate()?;
    let augmented = render(CREDIBILITY_BLOCK, &[("fields", &meta.render_fields()), ("context", context)]);
    Ok(AugmentedContext {
        strategy: AugmentationStrategy::Credibility,
        original: context.to_string(),
        augmented,
        instruction: InstructionVariant::PrioritizeContext,
        summary_check: None,
    })
}

pub fn summarize_context(
    client: &dyn ModelClient,
    question: &str,
    context: &str,
    mode: SummaryMode,
    seed: u64,
) -> Result<AugmentedContext> {
    if context.trim().is_empty() {
        return param("cannot summarize an empty context");
    }
    let (template, strategy) = match mode {
        SummaryMode::Naive => (SUMMARIZE_NAIVE, AugmentationStrategy::NaiveSummarization),
        SummaryMode::Constrained => (SUMMARIZE_CONSTRAINED, AugmentationStrategy::ConstrainedSummarization),
    };
    let prompt = render(template, &[("question", question), ("context", context)]);
    let req = ChatRequest::new(RequestPurpose::Summarize, prompt, 0.0, seed);
    let summary = with_retries(client.retry_policy(), || client.chat(&req))?.text.trim().to_string();
    if summary.is_empty() {
        return Err(Error::Degraded("summarizer returned an empty summary".into()));
    }
    let check = SummaryCheck {
        original_length: words(context).len() as u64,
        summary_length: words(&summary).len() as u64,
        original_unique_tokens: unique_token_count(context)?,
        summary_unique_tokens: unique_token_count(&summary)?,
    };
    Ok(AugmentedContext {
        strategy,
        original: context.to_string(),
        augmented: summary,
        instruction: InstructionVariant::Standard,
        summary_check: Some(check),
    })
}

/// Constrained summary with the credibility block applied on top.
pub fn combine(
    client: &dyn ModelClient,
    question: &str,
    context: &str,
    meta: &CredibilityMetadata,
    seed: u64,
) -> Result<AugmentedContext> {
    meta.validate()?;
    let summary = summarize_context(client, question, context, SummaryMode::Constrained, seed)?;
    let credible = apply_credibility(&summary.augmented, meta)?;
    Ok(AugmentedContext {
        strategy: AugmentationStrategy::Combined,
        original: context.to_string(),
        augmented: credible.augmented,
        instruction: InstructionVariant::PrioritizeContext,
        summary_check: summary.summary_check,
    })
}

pub fn augment(
    strategy: AugmentationStrategy,
    client: &dyn ModelClient,
    question: &str,
    context: &str,
    meta: Option<&CredibilityMetadata>,
    seed: u64,
) -> Result<AugmentedContext> {
    let need_meta = || meta.ok_or_else(|| Error::Parameter(format!("{strategy} needs credibility metadata")));
    match strategy {
        AugmentationStrategy::Credibility => apply_credibility(context, need_meta()?),
        AugmentationStrategy::NaiveSummarization => summarize_context(client, question, context, SummaryMode::Naive, seed),
        AugmentationStrategy::ConstrainedSummarization => {
            summarize_context(client, question, context, SummaryMode::Constrained, seed)
        }
        AugmentationStrategy::Combined => combine(client, question, context, need_meta()?, seed),
    }
}

/// Percentage of pairs reaching consistent correct, per parametric status.
pub fn success_rates(pairs: &[(KnowledgeStatus, KnowledgeStatus)]) -> [Option<f64>; 5] {
    let mut hits = [0u64; 5];
    let mut totals = [0u64; 5];
    for &(p, q) in pairs {
        totals[p.index()] += 1;
        if q == KnowledgeStatus::ConsistentCorrect {
            hits[p.index()] += 1;
        }
    }
    std::array::from_fn(|i| (totals[i] > 0).then(|| 100.0 * hits[i] as f64 / totals[i] as f64))
}

/// Change in success rate (percentage points) per parametric status;
/// `None` where either side has no pairs with that status.
pub fn compare_success_rates(
    before: &[(KnowledgeStatus, KnowledgeStatus)],
    after: &[(KnowledgeStatus, KnowledgeStatus)],
) -> [Option<f64>; 5] {
    let b = success_rates(before);
    let a = success_rates(after);
    std::array::from_fn(|i| Some(a[i]? - b[i]?))
}
