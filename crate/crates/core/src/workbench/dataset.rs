use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::CredibilityMetadata;
use crate::client::stable_hash;
use crate::error::{Error, LineError, Result};

pub const DATASET_SCHEMA: &str = "kscope.questions";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    /// Empty for open-ended questions.
    #[serde(default)]
    pub options: Vec<String>,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl QuestionRecord {
    pub fn is_open_ended(&self) -> bool {
        self.options.is_empty()
    }

    pub fn d(&self) -> usize {
        self.options.len()
    }

    pub fn gold_index(&self) -> Option<usize> {
        self.options.iter().position(|o| *o == self.gold)
    }

    /// Metadata as a credibility block: `title` or `source` becomes the
    /// label, every other entry a field.
    pub fn credibility(&self) -> Option<CredibilityMetadata> {
        let mut fields = self.metadata.clone();
        let source = fields.remove("title").or_else(|| fields.remove("source")).unwrap_or_default();
        let meta = CredibilityMetadata { source, fields };
        meta.validate().ok().map(|_| meta)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        if self.gold.trim().is_empty() {
            return Err("empty gold answer".into());
        }
        if self.options.len() == 1 {
            return Err("a multiple-choice question needs at least two options".into());
        }
        if self.options.len() > 26 {
            return Err("more than 26 options".into());
        }
        let mut seen = HashSet::new();
        for o in &self.options {
            if o.trim().is_empty() || !seen.insert(o) {
                return Err(format!("empty or duplicate option {o:?}"));
            }
        }
        if !self.options.is_empty() && self.gold_index().is_none() {
            return Err(format!("gold {:?} is not one of the options", self.gold));
        }
        if self.context.as_deref().is_some_and(|c| c.trim().is_empty()) {
            return Err("context is present but empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestOptions {
    /// Shuffle each record's options with a per-record seeded permutation.
    pub permute_options: bool,
    pub seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
    version: u32,
}

/// Parses JSON-lines questions. An optional first line
/// `{"schema": "kscope.questions", "version": 1}` declares the format.
pub fn parse_dataset(text: &str, opts: IngestOptions) -> Result<Vec<QuestionRecord>> {
    let mut errors = Vec::new();
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if std::mem::take(&mut first) {
            if let Ok(h) = serde_json::from_str::<Header>(line) {
                if h.schema != DATASET_SCHEMA || h.version != DATASET_VERSION {
                    errors.push(LineError {
                        line: line_no,
                        message: format!("unsupported schema {} version {}", h.schema, h.version),
                    });
                }
                continue;
            }
        }
        let mut rec: QuestionRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(LineError { line: line_no, message: e.to_string() });
                continue;
            }
        };
        if let Err(message) = rec.validate() {
            errors.push(LineError { line: line_no, message });
            continue;
        }
        if !ids.insert(rec.id.clone()) {
            errors.push(LineError { line: line_no, message: format!("duplicate id {:?}", rec.id) });
            continue;
        }
        if opts.permute_options {
            let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[&opts.seed.to_le_bytes(), rec.id.as_bytes()]));
            rec.options.shuffle(&mut rng);
        }
        records.push(rec);
    }
    if !errors.is_empty() {
        return Err(Error::Ingestion(errors));
    }
    Ok(records)
}

pub fn ingest_dataset(path: &Path, opts: IngestOptions) -> Result<Vec<QuestionRecord>> {
    parse_dataset(&std::fs::read_to_string(path)?, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"schema":"kscope.questions","version":1}
{"id":"q1","question":"Is A better than B?","options":["superior","inferior","no difference"],"gold":"superior","context":"A beat B."}

{"id":"q2","question":"Capital of France?","gold":"Paris"}
"#;

    #[test]
    fn parses_well_formed_lines() {
        let r = parse_dataset(GOOD, IngestOptions::default()).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].d(), 3);
        assert_eq!(r[0].gold_index(), Some(0));
        assert!(r[1].is_open_ended());
        assert_eq!(r[1].gold_index(), None);
    }

    #[test]
    fn reports_offending_lines() {
        let text = "{\"id\":\"a\",\"question\":\"x?\",\"options\":[\"p\",\"q\"]}\n{\"id\":\"b\",\"question\":\"y?\",\"gold\":\"z\"}\n{\"id\":\"b\",\"question\":\"y?\",\"gold\":\"z\"}\n{\"id\":\"c\",\"question\":\"x?\",\"options\":[\"p\",\"q\"],\"gold\":\"r\"}\nnot json\n";
        let Err(Error::Ingestion(lines)) = parse_dataset(text, IngestOptions::default()) else {
            panic!("expected ingestion error");
        };
        let nums: Vec<usize> = lines.iter().map(|l| l.line).collect();
        assert_eq!(nums, vec![1, 3, 4, 5]);
        assert!(lines[0].message.contains("gold"));
        assert!(lines[1].message.contains("duplicate"));
    }

    #[test]
    fn rejects_unknown_schema() {
        let text = "{\"schema\":\"other\",\"version\":9}\n{\"id\":\"b\",\"question\":\"y?\",\"gold\":\"z\"}\n";
        assert!(matches!(parse_dataset(text, IngestOptions::default()), Err(Error::Ingestion(_))));
    }

    #[test]
    fn permutation_is_seeded_and_keeps_gold() {
        let text: String = (0..20)
            .map(|i| format!("{{\"id\":\"q{i}\",\"question\":\"?\",\"options\":[\"a\",\"b\",\"c\"],\"gold\":\"a\"}}\n"))
            .collect();
        let opts = IngestOptions { permute_options: true, seed: 3 };
        let a = parse_dataset(&text, opts).unwrap();
        assert_eq!(a, parse_dataset(&text, opts).unwrap());
        assert!(a.iter().any(|r| r.gold_index() != Some(0)));
        assert!(a.iter().all(|r| r.options[r.gold_index().unwrap()] == "a"));
    }

    #[test]
    fn credibility_from_metadata() {
        let mut r = parse_dataset(GOOD, IngestOptions::default()).unwrap().remove(0);
        assert!(r.credibility().is_none());
        r.metadata.insert("title".into(), "Trial".into());
        r.metadata.insert("year".into(), "2020".into());
        let m = r.credibility().unwrap();
        assert_eq!(m.source, "Trial");
        assert_eq!(m.fields.len(), 1);
    }
}
