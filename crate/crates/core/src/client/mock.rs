use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::{stable_hash, ChatRequest, ChatResponse, FinishReason, ModelClient, RequestPurpose, RetryPolicy, TokenScore};
use crate::error::{Error, Result};
use crate::prompts::{extract_context, extract_options, extract_question, extract_statements, option_letter};
use crate::support::{EntailmentJudge, NormalizingJudge};
use crate::text::{first_sentence, tokenize};

/// Answer distribution over option positions plus an invalid-response rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerProfile {
    pub option_probs: Vec<f64>,
    pub invalid_prob: f64,
}

impl AnswerProfile {
    pub fn new(option_probs: Vec<f64>, invalid_prob: f64) -> Self {
        Self { option_probs, invalid_prob }
    }

    fn uniform(d: usize) -> Self {
        Self::new(vec![1.0 / d as f64; d], 0.0)
    }

    fn peaked(d: usize, top: usize, mass: f64) -> Self {
        let rest = if d > 1 { (1.0 - mass) / (d - 1) as f64 } else { 0.0 };
        let probs = (0..d).map(|i| if i == top { mass } else { rest }).collect();
        Self::new(probs, 0.0)
    }

    fn split(d: usize, a: usize, b: usize, mass_each: f64) -> Self {
        let rest = if d > 2 { (1.0 - 2.0 * mass_each) / (d - 2) as f64 } else { 0.0 };
        let probs = (0..d)
            .map(|i| if i == a || i == b { mass_each } else { rest })
            .collect();
        Self::new(probs, 0.0)
    }
}

/// How the mock picks answers.
#[derive(Debug, Clone, PartialEq)]
pub enum MockAnswers {
    /// The same scripted distribution for every question.
    Fixed {
        parametric: AnswerProfile,
        contextual: AnswerProfile,
    },
    /// A per-question profile chosen by hashing the question; with context,
    /// the option whose text appears in the context is usually favored.
    Varied,
}

/// Call counters, including the largest number of concurrent calls seen.
#[derive(Debug, Default)]
pub struct MockProbe {
    pub calls: AtomicUsize,
    in_flight: AtomicUsize,
    pub peak_in_flight: AtomicUsize,
}

impl MockProbe {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

struct InFlight<'a>(&'a MockProbe);

impl<'a> InFlight<'a> {
    fn enter(probe: &'a MockProbe) -> Self {
        probe.calls.fetch_add(1, Ordering::SeqCst);
        let now = probe.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        probe.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        Self(probe)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Deterministic offline stand-in for a model endpoint.
pub struct MockClient {
    seed: u64,
    answers: MockAnswers,
    uniform_scores: bool,
    embedding_dim: usize,
    embedding_overrides: HashMap<String, Vec<f64>>,
    judge: NormalizingJudge,
    latency: Option<Duration>,
    max_concurrency: usize,
    failing_calls: AtomicUsize,
    probe: Arc<MockProbe>,
    paraphrase_tag: Regex,
}

impl MockClient {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            answers: MockAnswers::Varied,
            uniform_scores: false,
            embedding_dim: 64,
            embedding_overrides: HashMap::new(),
            judge: NormalizingJudge::default(),
            latency: None,
            max_concurrency: 4,
            failing_calls: AtomicUsize::new(0),
            probe: Arc::new(MockProbe::default()),
            paraphrase_tag: Regex::new(r" \(variant [0-9a-f]+\)$").expect("static regex"),
        }
    }

    pub fn with_answers(mut self, answers: MockAnswers) -> Self {
        self.answers = answers;
        self
    }

    /// Scripts the same profile with and without context.
    pub fn with_fixed_profile(self, option_probs: Vec<f64>, invalid_prob: f64) -> Self {
        let profile = AnswerProfile::new(option_probs, invalid_prob);
        self.with_answers(MockAnswers::Fixed { parametric: profile.clone(), contextual: profile })
    }

    /// Every scored position gets a uniform top-k distribution.
    pub fn with_uniform_scores(mut self) -> Self {
        self.uniform_scores = true;
        self
    }

    pub fn with_embedding(mut self, text: &str, vector: Vec<f64>) -> Self {
        self.embedding_overrides.insert(text.to_string(), vector);
        self
    }

    pub fn with_equivalence(mut self, a: &str, b: &str) -> Self {
        self.judge = self.judge.with_equivalence(a, b);
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn with_max_concurrency(mut self, limit: usize) -> Self {
        self.max_concurrency = limit.max(1);
        self
    }

    /// The next `n` chat calls fail with a transport error.
    pub fn with_transient_failures(self, n: usize) -> Self {
        self.failing_calls.store(n, Ordering::SeqCst);
        self
    }

    pub fn probe(&self) -> Arc<MockProbe> {
        Arc::clone(&self.probe)
    }

    fn rng(&self, parts: &[&[u8]]) -> ChaCha8Rng {
        let mut all: Vec<&[u8]> = Vec::with_capacity(parts.len() + 1);
        let seed = self.seed.to_le_bytes();
        all.push(&seed);
        all.extend_from_slice(parts);
        ChaCha8Rng::seed_from_u64(stable_hash(&all))
    }

    fn stem<'a>(&self, question: &'a str) -> std::borrow::Cow<'a, str> {
        self.paraphrase_tag.replace(question, "")
    }

    fn profile(&self, stem: &str, options: &[String], context: Option<&str>) -> AnswerProfile {
        let d = options.len();
        match &self.answers {
            MockAnswers::Fixed { parametric, contextual } => {
                let p = if context.is_some() { contextual } else { parametric };
                if p.option_probs.len() == d {
                    p.clone()
                } else {
                    AnswerProfile::uniform(d)
                }
            }
            MockAnswers::Varied => {
                let h = stable_hash(&[b"profile", stem.as_bytes()]);
                let top = (h % d as u64) as usize;
                let second = (top + 1 + ((h >> 8) % (d as u64 - 1).max(1)) as usize) % d;
                let parametric = match (h >> 16) % 6 {
                    0 | 1 => AnswerProfile::peaked(d, top, 0.85),
                    2 => AnswerProfile::split(d, top, second, 0.45),
                    3 => AnswerProfile::uniform(d),
                    4 => AnswerProfile { invalid_prob: 0.75, ..AnswerProfile::peaked(d, top, 0.6) },
                    _ => AnswerProfile::peaked(d, top, 0.65),
                };
                let Some(ctx) = context else { return parametric };
                let ctx = ctx.to_lowercase();
                let supported = options.iter().position(|o| ctx.contains(&o.to_lowercase()));
                match (supported, (h >> 24) % 5) {
                    (Some(s), 0..=2) => AnswerProfile::peaked(d, s, 0.9),
                    (Some(s), 3) => AnswerProfile::split(d, s, if s == top { second } else { top }, 0.45),
                    (Some(_), _) => parametric,
                    (None, _) => AnswerProfile { invalid_prob: 0.3, ..parametric },
                }
            }
        }
    }

    fn answer(&self, req: &ChatRequest) -> String {
        let prompt = req.prompt();
        let options = extract_options(prompt);
        let context = extract_context(prompt);
        let question = extract_question(prompt).unwrap_or(prompt);
        let stem = self.stem(question);
        let mut rng = self.rng(&[b"answer", &req.seed.to_le_bytes()]);

        if options.is_empty() {
            return self.open_answer(&stem, context, &mut rng);
        }
        let d = options.len();
        let profile = self.profile(&stem, &options, context);
        if rng.random::<f64>() < profile.invalid_prob {
            return if rng.random::<bool>() {
                "I cannot answer this question.".to_string()
            } else {
                format!("None of the listed options fits.\nAnswer: {}", option_letter(d))
            };
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = d - 1;
        for (i, &p) in profile.option_probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = i;
                break;
            }
        }
        let letter = option_letter(pick);
        format!("Weighing each option against what I know, option {letter} fits best.\nAnswer: {letter}")
    }

    fn open_answer(&self, stem: &str, context: Option<&str>, rng: &mut ChaCha8Rng) -> String {
        let mut candidates: Vec<String> = tokenize(stem).into_iter().filter(|t| t.len() >= 4).collect();
        candidates.dedup();
        if candidates.is_empty() {
            candidates.push("unknown".into());
        }
        let supported = context.and_then(|c| {
            c.split_whitespace()
                .map(|w| w.trim_matches(|ch: char| !ch.is_alphanumeric()))
                .filter(|w| !w.is_empty())
                .fold(None::<&str>, |best, w| match best {
                    Some(b) if b.len() >= w.len() => Some(b),
                    _ => Some(w),
                })
                .map(str::to_string)
        });
        let u: f64 = rng.random();
        let answer = match supported {
            Some(s) if u < 0.8 => s,
            _ if u > 0.95 => return "I am not able to answer that.".to_string(),
            _ => candidates[rng.random_range(0..candidates.len().min(3))].clone(),
        };
        let surface = if rng.random::<bool>() { answer.to_uppercase() } else { answer.to_lowercase() };
        format!("Thinking it through step by step.\nAnswer: {surface}")
    }
}

impl ModelClient for MockClient {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let _guard = InFlight::enter(&self.probe);
        if let Some(latency) = self.latency {
            std::thread::sleep(latency);
        }
        if self
            .failing_calls
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
        {
            return Err(Error::Transport("mock transient failure".into()));
        }
        let text = match req.purpose {
            RequestPurpose::Paraphrase => {
                let q = extract_question(req.prompt()).unwrap_or_default();
                format!("{q} (variant {:08x})", req.seed as u32)
            }
            RequestPurpose::Answer => self.answer(req),
            RequestPurpose::Summarize => {
                first_sentence(extract_context(req.prompt()).unwrap_or_default()).to_string()
            }
            RequestPurpose::Judge => {
                let (a, b) = extract_statements(req.prompt()).unwrap_or_default();
                if self.judge.entails(a, b)? { "yes" } else { "no" }.to_string()
            }
        };
        Ok(ChatResponse { text, finish_reason: FinishReason::Stop })
    }

    fn score(&self, text: &str, conditioning: Option<&str>, top_k: usize) -> Result<Vec<TokenScore>> {
        let _guard = InFlight::enter(&self.probe);
        let k = top_k.max(1);
        let cond = conditioning.unwrap_or_default();
        Ok(text
            .split_whitespace()
            .enumerate()
            .map(|(pos, token)| {
                if self.uniform_scores {
                    let lp = (1.0 / k as f64).ln();
                    let mut alts = vec![(token.to_string(), lp)];
                    alts.extend((1..k).map(|j| (format!("alt{j}"), lp)));
                    return TokenScore { token: token.to_string(), logprob: lp, top_alternatives: alts };
                }
                let h = stable_hash(&[cond.as_bytes(), token.as_bytes(), &(pos as u64).to_le_bytes()]);
                let offset = 1.0 + (h % 3) as f64;
                let weights: Vec<f64> = (0..k).map(|j| 1.0 / (j as f64 + offset)).collect();
                let mass = 0.85 + ((h >> 8) % 10) as f64 / 100.0;
                let total: f64 = weights.iter().sum();
                let realized = ((h >> 16) % k.min(4) as u64) as usize;
                let alts: Vec<(String, f64)> = weights
                    .iter()
                    .enumerate()
                    .map(|(j, w)| {
                        let name = if j == realized { token.to_string() } else { format!("alt{j}") };
                        (name, (w / total * mass).ln())
                    })
                    .collect();
                TokenScore { token: token.to_string(), logprob: alts[realized].1, top_alternatives: alts }
            })
            .collect())
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let _guard = InFlight::enter(&self.probe);
        if let Some(v) = self.embedding_overrides.get(text) {
            return Ok(v.clone());
        }
        let mut v = vec![0.0; self.embedding_dim];
        for token in tokenize(text) {
            let h = stable_hash(&[b"embed", token.as_bytes()]);
            v[(h % self.embedding_dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }

    fn max_concurrency(&self) -> usize {
        self.max_concurrency
    }

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy { attempts: 3, base_delay: Duration::from_millis(1) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{generate_paraphrases, sample_answers, sample_paraphrased};
    use crate::prompts::{answer_prompt, InstructionVariant};

    fn mcq_prompt() -> String {
        let options: Vec<String> = ["superior", "inferior", "no difference"].iter().map(|s| s.to_string()).collect();
        answer_prompt("Is regimen A better than B?", &options, None, InstructionVariant::Standard)
    }

    #[test]
    fn scripted_sampling_is_reproducible() {
        let a = MockClient::new(9).with_fixed_profile(vec![0.9, 0.05, 0.05], 0.0);
        let b = MockClient::new(9).with_fixed_profile(vec![0.9, 0.05, 0.05], 0.0);
        let ra = sample_answers(&a, &mcq_prompt(), 50, 1.0, 1).unwrap();
        let rb = sample_answers(&b, &mcq_prompt(), 50, 1.0, 1).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra.len(), 50);
        let a_count = ra.iter().filter(|r| r.text.ends_with("Answer: A")).count();
        assert!(a_count > 35);
    }

    #[test]
    fn paraphrases_are_tagged_and_distinct() {
        let m = MockClient::new(1);
        let p = generate_paraphrases(&m, "What is X?", 20, 1.0, 5).unwrap();
        assert_eq!(p.texts.len(), 20);
        assert_eq!(p.texts[0], "What is X?");
        assert!(p.texts[1..].iter().all(|t| t.starts_with("What is X? (variant ")));
        let one = generate_paraphrases(&m, "What is X?", 1, 1.0, 5).unwrap();
        assert_eq!(one.texts, vec!["What is X?".to_string()]);
    }

    #[test]
    fn concurrency_stays_bounded() {
        let m = MockClient::new(2).with_latency(Duration::from_millis(2)).with_max_concurrency(3);
        let prompts = vec![mcq_prompt(); 4];
        let out = sample_paraphrased(&m, &prompts, 10, 1.0, 0).unwrap();
        assert_eq!(out.len(), 40);
        assert!(m.probe().peak() <= 3);
        assert!(m.probe().peak() >= 2);
        // Grouped by paraphrase in request order.
        assert!(out.windows(2).all(|w| w[0].paraphrase_index <= w[1].paraphrase_index));
    }

    #[test]
    fn persistent_failure_becomes_failed_slot() {
        let m = MockClient::new(3).with_max_concurrency(1).with_transient_failures(3);
        let out = sample_answers(&m, &mcq_prompt(), 2, 1.0, 0).unwrap();
        assert_eq!(out[0].finish_reason, FinishReason::Failed);
        assert!(out[0].text.is_empty());
        assert_eq!(out[1].finish_reason, FinishReason::Stop);
    }

    #[test]
    fn embeddings_are_deterministic() {
        let m = MockClient::new(0);
        assert_eq!(m.embed("hello world").unwrap(), m.embed("hello world").unwrap());
        let m = m.with_embedding("x", vec![1.0, 0.0]);
        assert_eq!(m.embed("x").unwrap(), vec![1.0, 0.0]);
    }
}
