//! The eleven context features: difficulty, relevance and familiarity.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::client::{embed_text, score_text, ModelClient, TokenScore};
use crate::error::{param, Error, Result};
use crate::text::{sentences, stem, syllables, tokenize, words};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    ContextLength,
    Readability,
    UniqueTokens,
    EmbeddingSimilarity,
    Rouge2Recall,
    Rouge2Precision,
    Rouge2F1,
    QuestionPerplexity,
    ContextPerplexity,
    QuestionEntropy,
    ContextEntropy,
}

pub const N_FEATURES: usize = 11;

impl Feature {
    pub const ALL: [Feature; N_FEATURES] = [
        Feature::ContextLength,
        Feature::Readability,
        Feature::UniqueTokens,
        Feature::EmbeddingSimilarity,
        Feature::Rouge2Recall,
        Feature::Rouge2Precision,
        Feature::Rouge2F1,
        Feature::QuestionPerplexity,
        Feature::ContextPerplexity,
        Feature::QuestionEntropy,
        Feature::ContextEntropy,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::ContextLength => "context_length",
            Feature::Readability => "readability",
            Feature::UniqueTokens => "unique_tokens",
            Feature::EmbeddingSimilarity => "embedding_similarity",
            Feature::Rouge2Recall => "rouge2_recall",
            Feature::Rouge2Precision => "rouge2_precision",
            Feature::Rouge2F1 => "rouge2_f1",
            Feature::QuestionPerplexity => "question_perplexity",
            Feature::ContextPerplexity => "context_perplexity",
            Feature::QuestionEntropy => "question_entropy",
            Feature::ContextEntropy => "context_entropy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub context_length: u64,
    pub readability: f64,
    pub unique_tokens: u64,
    pub embedding_similarity: f64,
    pub rouge2_recall: f64,
    pub rouge2_precision: f64,
    pub rouge2_f1: f64,
    pub question_perplexity: f64,
    pub context_perplexity: f64,
    pub question_entropy: f64,
    pub context_entropy: f64,
}

impl FeatureVector {
    /// Values in `Feature::ALL` order.
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.context_length as f64,
            self.readability,
            self.unique_tokens as f64,
            self.embedding_similarity,
            self.rouge2_recall,
            self.rouge2_precision,
            self.rouge2_f1,
            self.question_perplexity,
            self.context_perplexity,
            self.question_entropy,
            self.context_entropy,
        ]
    }

    pub fn get(&self, f: Feature) -> f64 {
        self.to_array()[f.index()]
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let ok = (-1.0 - 1e-9..=1.0 + 1e-9).contains(&self.embedding_similarity)
            && unit(self.rouge2_recall)
            && unit(self.rouge2_precision)
            && unit(self.rouge2_f1)
            && self.question_perplexity > 0.0
            && self.context_perplexity > 0.0
            && self.question_entropy >= 0.0
            && self.context_entropy >= 0.0
            && self.readability.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("feature vector out of bounds: {self:?}")))
        }
    }
}

pub fn flesch_kincaid_grade(text: &str) -> Result<f64> {
    let ws = words(text);
    if ws.is_empty() {
        return param("readability needs at least one word");
    }
    let n_sentences = sentences(text).len().max(1) as f64;
    let n_words = ws.len() as f64;
    let n_syllables: usize = ws.iter().map(|w| syllables(w)).sum();
    Ok(0.39 * (n_words / n_sentences) + 11.8 * (n_syllables as f64 / n_words) - 15.59)
}

fn bigrams(tokens: &[String]) -> HashMap<(&str, &str), u64> {
    let mut m = HashMap::new();
    for w in tokens.windows(2) {
        *m.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += 1;
    }
    m
}

/// ROUGE-2 with the question as reference: (recall, precision, f1).
pub fn rouge2_scores(question: &str, context: &str) -> Result<(f64, f64, f64)> {
    if question.trim().is_empty() || context.trim().is_empty() {
        return param("rouge2 needs nonempty texts");
    }
    let q = tokenize(question);
    let c = tokenize(context);
    if q.len() < 2 || c.len() < 2 {
        return Ok((0.0, 0.0, 0.0));
    }
    let qb = bigrams(&q);
    let cb = bigrams(&c);
    let matched: u64 = qb.iter().map(|(k, &n)| n.min(cb.get(k).copied().unwrap_or(0))).sum();
    let recall = matched as f64 / (q.len() - 1) as f64;
    let precision = matched as f64 / (c.len() - 1) as f64;
    let f1 = if recall + precision > 0.0 { 2.0 * recall * precision / (recall + precision) } else { 0.0 };
    Ok((recall, precision, f1))
}

pub fn unique_token_count(text: &str) -> Result<u64> {
    if text.trim().is_empty() {
        return param("unique token count needs nonempty text");
    }
    let set: HashSet<String> = tokenize(text).iter().map(|t| stem(t)).collect();
    Ok(set.len() as u64)
}

/// Perplexity of the realized tokens and mean top-k entropy in bits.
///
/// The mass not covered by the alternatives is one extra outcome.
pub fn familiarity_scores(scores: &[TokenScore]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return param("familiarity needs at least one scored token");
    }
    let n = scores.len() as f64;
    let mean_lp = scores.iter().map(|s| s.logprob).sum::<f64>() / n;
    let perplexity = (-mean_lp).exp();
    let mut total_entropy = 0.0;
    for s in scores {
        let probs: Vec<f64> = s.top_alternatives.iter().map(|(_, lp)| lp.exp()).collect();
        let covered: f64 = probs.iter().sum();
        let residual = (1.0 - covered).max(0.0);
        let h: f64 = probs
            .iter()
            .chain(std::iter::once(&residual))
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.log2())
            .sum();
        total_entropy += h;
    }
    if !perplexity.is_finite() {
        return Err(Error::Numeric("perplexity overflow".into()));
    }
    Ok((perplexity, (total_entropy / n).max(0.0)))
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return param(format!("embedding dimensions differ: {} vs {}", a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("zero-norm embedding".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn embedding_similarity(client: &dyn ModelClient, question: &str, context: &str) -> Result<f64> {
    cosine(&embed_text(client, question)?, &embed_text(client, context)?)
}

/// Model-dependent inputs for one (question, context) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSignals {
    pub question_scores: Vec<TokenScore>,
    pub context_scores: Vec<TokenScore>,
    pub question_embedding: Vec<f64>,
    pub context_embedding: Vec<f64>,
}

impl ModelSignals {
    pub fn fetch(client: &dyn ModelClient, question: &str, context: &str, top_k: usize) -> Result<Self> {
        Ok(Self {
            question_scores: score_text(client, question, None, top_k)?,
            context_scores: score_text(client, context, None, top_k)?,
            question_embedding: embed_text(client, question)?,
            context_embedding: embed_text(client, context)?,
        })
    }
}

pub fn extract_feature_vector(question: &str, context: &str, signals: &ModelSignals) -> Result<FeatureVector> {
    let (rouge2_recall, rouge2_precision, rouge2_f1) = rouge2_scores(question, context)?;
    let (question_perplexity, question_entropy) = familiarity_scores(&signals.question_scores)?;
    let (context_perplexity, context_entropy) = familiarity_scores(&signals.context_scores)?;
    let fv = FeatureVector {
        context_length: words(context).len() as u64,
        readability: flesch_kincaid_grade(context)?,
        unique_tokens: unique_token_count(context)?,
        embedding_similarity: cosine(&signals.question_embedding, &signals.context_embedding)?,
        rouge2_recall,
        rouge2_precision,
        rouge2_f1,
        question_perplexity,
        context_perplexity,
        question_entropy,
        context_entropy,
    };
    fv.validate()?;
    Ok(fv)
}
