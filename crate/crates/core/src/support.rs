//! Turning raw responses into tallies over a support set.
//!
//! Multiple-choice responses are parsed for a final `Answer: <letter>`
//! line. Open-ended responses are grouped into semantic clusters with a
//! bidirectional-entailment judge; the clusters become the support set.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::client::{with_retries, ChatRequest, ModelClient, RequestPurpose};
use crate::error::{param, Result};
use crate::prompts::{option_letter, render, JUDGE};
use crate::status::ResponseCounts;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSet {
    pub elements: Vec<String>,
}

impl SupportSet {
    pub fn new(elements: Vec<String>) -> Result<Self> {
        for (i, e) in elements.iter().enumerate() {
            if elements[..i].contains(e) {
                return param(format!("duplicate support element {e:?}"));
            }
        }
        Ok(Self { elements })
    }

    pub fn d(&self) -> usize {
        self.elements.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    Refusal,
    OutOfSupport,
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedAnswer {
    Option(usize),
    Invalid(InvalidReason),
}

fn answer_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^\W*(?:final\s+)?answer\s*(?:is)?\s*[:：]\s*(.*?)\s*$").expect("static regex"))
}

fn refusal() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(can ?not|can't|unable to|won't|will not|not able to)\s+(answer|provide|determine|help|say)|\bi (don't|do not) know\b|\bno answer\b",
        )
        .expect("static regex")
    })
}

/// Text after the last `Answer:` label.
fn last_answer(raw: &str) -> Option<&str> {
    answer_line()
        .captures_iter(raw)
        .last()
        .and_then(|c| c.get(1))
        .map(|m| m.as_str())
}

fn clean(answer: &str) -> &str {
    answer
        .trim()
        .trim_matches(|c: char| matches!(c, '*' | '"' | '\'' | '`'))
        .trim_end_matches(['.', ',', ';', '!'])
        .trim()
}

/// Maps one multiple-choice response to an option index or an invalid reason.
pub fn parse_mcq_answer(raw: &str, support: &SupportSet) -> ParsedAnswer {
    let Some(answer) = last_answer(raw) else {
        return if raw.trim().is_empty() || refusal().is_match(raw) {
            ParsedAnswer::Invalid(InvalidReason::Refusal)
        } else {
            ParsedAnswer::Invalid(InvalidReason::Unparseable)
        };
    };
    let answer = clean(answer);
    let answer = answer.strip_prefix('(').and_then(|a| a.strip_suffix(')')).unwrap_or(answer);
    let d = support.d();

    let mut chars = answer.chars();
    let letter = match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some(c),
        (Some(c), Some('.' | ')' | ':')) if c.is_ascii_alphabetic() => Some(c),
        _ => None,
    };
    if let Some(c) = letter {
        let idx = (c.to_ascii_uppercase() as u8 - b'A') as usize;
        return if idx < d {
            ParsedAnswer::Option(idx)
        } else {
            ParsedAnswer::Invalid(InvalidReason::OutOfSupport)
        };
    }
    if let Some(idx) = support.elements.iter().position(|e| e.eq_ignore_ascii_case(answer)) {
        return ParsedAnswer::Option(idx);
    }
    if answer.is_empty() || refusal().is_match(answer) {
        return ParsedAnswer::Invalid(InvalidReason::Refusal);
    }
    ParsedAnswer::Invalid(InvalidReason::OutOfSupport)
}

/// Final answer of an open-ended response: the `Answer:` line if present,
/// else the last nonempty line.
pub fn extract_open_answer(raw: &str) -> std::result::Result<String, InvalidReason> {
    let answer = match last_answer(raw) {
        Some(a) => clean(a),
        None => {
            if refusal().is_match(raw) {
                return Err(InvalidReason::Refusal);
            }
            raw.lines().rev().map(clean).find(|l| !l.is_empty()).unwrap_or("")
        }
    };
    if answer.is_empty() || refusal().is_match(answer) {
        return Err(InvalidReason::Refusal);
    }
    Ok(answer.to_string())
}

/// Tallies parsed answers over `d` options.
pub fn tally(parsed: &[ParsedAnswer], d: usize) -> ResponseCounts {
    let mut per_option = vec![0u64; d];
    let mut n_invalid = 0;
    for p in parsed {
        match *p {
            ParsedAnswer::Option(i) if i < d => per_option[i] += 1,
            _ => n_invalid += 1,
        }
    }
    ResponseCounts { per_option, n_invalid, n_total: parsed.len() as u64 }
}

/// Label of the option at `index` as it appears in prompts.
pub fn option_label(index: usize) -> String {
    option_letter(index).to_string()
}

/// Decides whether one answer entails another.
pub trait EntailmentJudge {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool>;

    fn equivalent(&self, a: &str, b: &str) -> Result<bool> {
        Ok(self.entails(a, b)? && self.entails(b, a)?)
    }
}

/// Offline judge: two answers entail each other when they normalize to the
/// same canonical form. Normalization lowercases, strips punctuation,
/// leading "the answer is" and articles, spells out number words as digits
/// (up to 99) and applies a declared equivalence table.
#[derive(Debug, Clone, Default)]
pub struct NormalizingJudge {
    equivalences: Vec<(String, String)>,
}

const UNITS: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
];
const TENS: [&str; 8] = ["twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];

fn number_words(words: &[&str]) -> Option<u32> {
    let unit = |w: &str| UNITS.iter().position(|u| *u == w).map(|i| i as u32);
    let ten = |w: &str| TENS.iter().position(|t| *t == w).map(|i| 20 + 10 * i as u32);
    match words {
        [w] => unit(w).or_else(|| ten(w)),
        [t, u] => Some(ten(t)? + unit(u).filter(|&u| (1..10).contains(&u))?),
        _ => None,
    }
}

impl NormalizingJudge {
    pub fn with_equivalence(mut self, a: &str, b: &str) -> Self {
        self.equivalences.push((a.to_string(), b.to_string()));
        self
    }

    fn normalize(text: &str) -> String {
        let lowered = text.to_lowercase().replace('-', " ");
        let cleaned: String = lowered
            .chars()
            .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
            .collect();
        let mut words: Vec<&str> = cleaned.split_whitespace().collect();
        if words.starts_with(&["the", "answer", "is"]) {
            words.drain(..3);
        }
        if matches!(words.first(), Some(&("the" | "a" | "an"))) && words.len() > 1 {
            words.remove(0);
        }
        match number_words(&words) {
            Some(n) => n.to_string(),
            None => words.join(" "),
        }
    }

    /// Canonical form after applying the equivalence table transitively.
    pub fn canonical(&self, text: &str) -> String {
        let mut current = Self::normalize(text);
        let pairs: Vec<(String, String)> = self
            .equivalences
            .iter()
            .map(|(a, b)| (Self::normalize(a), Self::normalize(b)))
            .collect();
        // Map each class to its smallest member.
        loop {
            let next = pairs
                .iter()
                .filter_map(|(a, b)| {
                    if *a == current {
                        Some(b)
                    } else if *b == current {
                        Some(a)
                    } else {
                        None
                    }
                })
                .filter(|o| **o < current)
                .min()
                .cloned();
            match next {
                Some(n) => current = n,
                None => return current,
            }
        }
    }
}

impl EntailmentJudge for NormalizingJudge {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool> {
        Ok(self.canonical(premise) == self.canonical(hypothesis))
    }
}

/// Judge backed by a chat model answering a yes/no entailment prompt.
pub struct ChatJudge<'a> {
    client: &'a dyn ModelClient,
    question: String,
    seed: u64,
}

impl<'a> ChatJudge<'a> {
    pub fn new(client: &'a dyn ModelClient, question: impl Into<String>, seed: u64) -> Self {
        Self { client, question: question.into(), seed }
    }
}

impl EntailmentJudge for ChatJudge<'_> {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool> {
        let prompt = render(
            JUDGE,
            &[("question", &self.question), ("first", premise), ("second", hypothesis)],
        );
        let mut req = ChatRequest::new(RequestPurpose::Judge, prompt, 1.0, self.seed);
        req.temperature = 0.0;
        req.max_tokens = Some(4);
        let resp = with_retries(self.client.retry_policy(), || self.client.chat(&req))?;
        Ok(resp.text.trim().to_lowercase().starts_with("yes"))
    }
}

/// Semantic clusters of open-ended responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster representatives (earliest member), largest cluster first.
    pub support: SupportSet,
    pub sizes: Vec<u64>,
    pub assignments: Vec<ParsedAnswer>,
}

/// Greedy clustering: each answer joins the first cluster whose
/// representative it bidirectionally entails, otherwise founds a new one.
pub fn cluster_responses(responses: &[String], judge: &dyn EntailmentJudge) -> Result<Clustering> {
    if responses.is_empty() {
        return param("no responses to cluster");
    }
    let mut reps: Vec<String> = Vec::new();
    let mut sizes: Vec<u64> = Vec::new();
    let mut raw_assign: Vec<std::result::Result<usize, InvalidReason>> = Vec::with_capacity(responses.len());
    for r in responses {
        let answer = match extract_open_answer(r) {
            Ok(a) => a,
            Err(reason) => {
                raw_assign.push(Err(reason));
                continue;
            }
        };
        let mut joined = None;
        for (i, rep) in reps.iter().enumerate() {
            if judge.equivalent(&answer, rep)? {
                joined = Some(i);
                break;
            }
        }
        let idx = joined.unwrap_or_else(|| {
            reps.push(answer);
            sizes.push(0);
            reps.len() - 1
        });
        sizes[idx] += 1;
        raw_assign.push(Ok(idx));
    }

    let mut order: Vec<usize> = (0..reps.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut new_index = vec![0; reps.len()];
    for (pos, &old) in order.iter().enumerate() {
        new_index[old] = pos;
    }
    Ok(Clustering {
        support: SupportSet { elements: order.iter().map(|&i| reps[i].clone()).collect() },
        sizes: order.iter().map(|&i| sizes[i]).collect(),
        assignments: raw_assign
            .into_iter()
            .map(|a| match a {
                Ok(i) => ParsedAnswer::Option(new_index[i]),
                Err(reason) => ParsedAnswer::Invalid(reason),
            })
            .collect(),
    })
}

/// Index of the cluster that the gold answer falls into, if any.
pub fn match_gold(gold: &str, support: &SupportSet, judge: &dyn EntailmentJudge) -> Result<Option<usize>> {
    for (i, rep) in support.elements.iter().enumerate() {
        if judge.equivalent(gold, rep)? {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> SupportSet {
        SupportSet::new(vec!["superior".into(), "inferior".into(), "no difference".into()]).unwrap()
    }

    #[test]
    fn parses_final_answer_line() {
        let s = abc();
        assert_eq!(parse_mcq_answer("Let me reason.\nA seems off.\nAnswer: B", &s), ParsedAnswer::Option(1));
        assert_eq!(parse_mcq_answer("Answer: A\nOn reflection...\nFinal answer: (C).", &s), ParsedAnswer::Option(2));
        assert_eq!(parse_mcq_answer("**Answer:** inferior", &s), ParsedAnswer::Option(1));
        assert_eq!(parse_mcq_answer("Answer: inferior", &s), ParsedAnswer::Option(1));
    }

    #[test]
    fn invalid_responses() {
        let s = abc();
        assert_eq!(parse_mcq_answer("I cannot answer this question.", &s), ParsedAnswer::Invalid(InvalidReason::Refusal));
        assert_eq!(parse_mcq_answer("", &s), ParsedAnswer::Invalid(InvalidReason::Refusal));
        assert_eq!(parse_mcq_answer("Answer: D", &s), ParsedAnswer::Invalid(InvalidReason::OutOfSupport));
        assert_eq!(parse_mcq_answer("Probably the first.", &s), ParsedAnswer::Invalid(InvalidReason::Unparseable));
    }

    #[test]
    fn tally_counts_invalid() {
        let parsed = [
            ParsedAnswer::Option(0),
            ParsedAnswer::Option(0),
            ParsedAnswer::Invalid(InvalidReason::Refusal),
            ParsedAnswer::Option(2),
        ];
        let c = tally(&parsed, 3);
        assert_eq!(c.per_option, vec![2, 0, 1]);
        assert_eq!(c.n_invalid, 1);
        assert_eq!(c.n_total, 4);
    }

    #[test]
    fn case_insensitive_clusters() {
        let judge = NormalizingJudge::default();
        let r: Vec<String> = ["Paris", "paris", "Lyon"].iter().map(|s| s.to_string()).collect();
        let c = cluster_responses(&r, &judge).unwrap();
        assert_eq!(c.sizes, vec![2, 1]);
        assert_eq!(c.support.elements, vec!["Paris".to_string(), "Lyon".to_string()]);
    }

    #[test]
    fn identical_responses_form_one_cluster() {
        let judge = NormalizingJudge::default();
        let r = vec!["Answer: Rome".to_string(); 5];
        let c = cluster_responses(&r, &judge).unwrap();
        assert_eq!(c.sizes, vec![5]);
    }

    #[test]
    fn number_words_and_prefixes_match() {
        let judge = NormalizingJudge::default();
        let r: Vec<String> = ["The answer is 42", "42", "forty-two"].iter().map(|s| s.to_string()).collect();
        let c = cluster_responses(&r, &judge).unwrap();
        assert_eq!(c.sizes, vec![3]);
    }

    #[test]
    fn equivalence_table_is_transitive() {
        let judge = NormalizingJudge::default()
            .with_equivalence("NYC", "New York City")
            .with_equivalence("New York City", "Big Apple");
        assert!(judge.equivalent("big apple", "nyc").unwrap());
    }

    #[test]
    fn refusals_are_excluded_and_sorted_by_size() {
        let judge = NormalizingJudge::default();
        let r: Vec<String> = ["Lyon", "I cannot answer that.", "Paris", "paris", "PARIS"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let c = cluster_responses(&r, &judge).unwrap();
        assert_eq!(c.support.elements[0], "Paris");
        assert_eq!(c.sizes, vec![3, 1]);
        assert_eq!(c.assignments[0], ParsedAnswer::Option(1));
        assert_eq!(c.assignments[1], ParsedAnswer::Invalid(InvalidReason::Refusal));
        assert_eq!(match_gold("paris", &c.support, &judge).unwrap(), Some(0));
        assert_eq!(match_gold("Marseille", &c.support, &judge).unwrap(), None);
        assert!(cluster_responses(&[], &judge).is_err());
    }
}
