//! Versioned prompt templates and the helpers that fill and read them.

use serde::{Deserialize, Serialize};

/// Bumped whenever any bundled template text changes.
pub const TEMPLATE_VERSION: u32 = 1;

pub const ANSWER_MCQ: &str = include_str!("../assets/answer_mcq.txt");
pub const ANSWER_MCQ_CONTEXT: &str = include_str!("../assets/answer_mcq_context.txt");
pub const ANSWER_MCQ_CREDIBLE: &str = include_str!("../assets/answer_mcq_credible.txt");
pub const ANSWER_OPEN: &str = include_str!("../assets/answer_open.txt");
pub const ANSWER_OPEN_CONTEXT: &str = include_str!("../assets/answer_open_context.txt");
pub const PARAPHRASE: &str = include_str!("../assets/paraphrase.txt");
pub const SUMMARIZE_NAIVE: &str = include_str!("../assets/summarize_naive.txt");
pub const SUMMARIZE_CONSTRAINED: &str = include_str!("../assets/summarize_constrained.txt");
pub const CREDIBILITY_BLOCK: &str = include_str!("../assets/credibility_block.txt");
pub const JUDGE: &str = include_str!("../assets/judge.txt");
/// Shipped for reference; distractor generation is not run by this crate.
pub const DISTRACTOR_OPTIONS: &str = include_str!("../assets/distractor_options.txt");

/// Instruction wording used when sampling answers with context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionVariant {
    #[default]
    Standard,
    /// Asks the model to prioritize the (credible) context.
    PrioritizeContext,
}

/// Replaces every `{key}` placeholder.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in values {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out.trim_end().to_string()
}

/// Letter designating the option at `index` (A, B, ...).
pub fn option_letter(index: usize) -> char {
    (b'A' + (index % 26) as u8) as char
}

pub fn format_options(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. {}", option_letter(i), o))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Builds the answer-sampling prompt for one (paraphrased) question.
pub fn answer_prompt(
    question: &str,
    options: &[String],
    context: Option<&str>,
    variant: InstructionVariant,
) -> String {
    let formatted = format_options(options);
    let template = match (options.is_empty(), context, variant) {
        (false, None, _) => ANSWER_MCQ,
        (false, Some(_), InstructionVariant::Standard) => ANSWER_MCQ_CONTEXT,
        (false, Some(_), InstructionVariant::PrioritizeContext) => ANSWER_MCQ_CREDIBLE,
        (true, None, _) => ANSWER_OPEN,
        (true, Some(_), _) => ANSWER_OPEN_CONTEXT,
    };
    render(
        template,
        &[
            ("question", question),
            ("options", &formatted),
            ("context", context.unwrap_or_default()),
        ],
    )
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = start + text[start..].find(close)?;
    Some(text[start..end].trim())
}

/// Context block of a rendered prompt, if any.
pub fn extract_context(prompt: &str) -> Option<&str> {
    between(prompt, "<context>", "</context>")
}

/// Text after the last `Question:` label, up to the options block.
pub fn extract_question(prompt: &str) -> Option<&str> {
    let start = prompt.rfind("Question: ")? + "Question: ".len();
    let rest = &prompt[start..];
    let end = rest.find("\nOptions:").or_else(|| rest.find("\n\n")).unwrap_or(rest.len());
    Some(rest[..end].trim())
}

/// Option texts listed in a rendered multiple-choice prompt.
pub fn extract_options(prompt: &str) -> Vec<String> {
    let Some(start) = prompt.rfind("\nOptions:\n") else {
        return Vec::new();
    };
    prompt[start + "\nOptions:\n".len()..]
        .lines()
        .enumerate()
        .map_while(|(i, line)| {
            let prefix = format!("{}. ", option_letter(i));
            line.strip_prefix(prefix.as_str()).map(str::to_string)
        })
        .collect()
}

/// The two statements of a rendered entailment-judge prompt.
pub fn extract_statements(prompt: &str) -> Option<(&str, &str)> {
    Some((
        between(prompt, "<statement1>", "</statement1>")?,
        between(prompt, "<statement2>", "</statement2>")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_prompt_round_trips_through_extractors() {
        let options = vec!["superior".to_string(), "inferior".to_string(), "no difference".to_string()];
        let p = answer_prompt("Is A better than B?", &options, Some("Trial X found A superior."), InstructionVariant::Standard);
        assert_eq!(extract_question(&p), Some("Is A better than B?"));
        assert_eq!(extract_options(&p), options);
        assert_eq!(extract_context(&p), Some("Trial X found A superior."));

        let open = answer_prompt("Capital of France?", &[], None, InstructionVariant::Standard);
        assert!(extract_options(&open).is_empty());
        assert_eq!(extract_context(&open), None);
        assert_eq!(extract_question(&open), Some("Capital of France?"));
    }

    #[test]
    fn credible_variant_changes_instruction() {
        let options = vec!["yes".to_string(), "no".to_string()];
        let std = answer_prompt("q", &options, Some("c"), InstructionVariant::Standard);
        let cred = answer_prompt("q", &options, Some("c"), InstructionVariant::PrioritizeContext);
        assert_ne!(std, cred);
        assert!(cred.contains("prioritize the context"));
    }

    #[test]
    fn judge_statements() {
        let p = render(JUDGE, &[("question", "q"), ("first", "42"), ("second", "forty-two")]);
        assert_eq!(extract_statements(&p), Some(("42", "forty-two")));
    }
}
