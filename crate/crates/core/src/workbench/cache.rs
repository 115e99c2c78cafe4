//! Per-question JSON-lines response cache.
//!
//! Each (phase, question) pair is one file: a header, the paraphrases, every
//! sampled response with its paraphrase index, and a completion record
//! carrying the status report. Files are written to a temporary name and
//! renamed into place, so a file either holds a complete record or does not
//! exist.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentedContext;
use crate::client::{stable_hash, SampledResponse};
use crate::error::Result;
use crate::status::StatusReport;

pub const CACHE_SCHEMA: &str = "kscope.cache";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CacheRecord {
    Header {
        schema: String,
        version: u32,
        question_id: String,
        phase: String,
        fingerprint: String,
    },
    Augmentation {
        context: AugmentedContext,
    },
    Paraphrase {
        index: usize,
        text: String,
    },
    Response {
        index: usize,
        #[serde(flatten)]
        response: SampledResponse,
    },
    Complete {
        support: Vec<String>,
        report: StatusReport,
    },
}

/// Everything cached for one question in one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedQuestion {
    pub augmentation: Option<AugmentedContext>,
    pub paraphrases: Vec<String>,
    pub responses: Vec<SampledResponse>,
    pub support: Vec<String>,
    pub report: StatusReport,
}

impl CachedQuestion {
    fn records(&self, question_id: &str, phase: &str, fingerprint: &str) -> Vec<CacheRecord> {
        let mut out = vec![CacheRecord::Header {
            schema: CACHE_SCHEMA.into(),
            version: CACHE_VERSION,
            question_id: question_id.into(),
            phase: phase.into(),
            fingerprint: fingerprint.into(),
        }];
        if let Some(a) = &self.augmentation {
            out.push(CacheRecord::Augmentation { context: a.clone() });
        }
        out.extend(
            self.paraphrases
                .iter()
                .enumerate()
                .map(|(index, text)| CacheRecord::Paraphrase { index, text: text.clone() }),
        );
        out.extend(
            self.responses
                .iter()
                .enumerate()
                .map(|(index, r)| CacheRecord::Response { index, response: r.clone() }),
        );
        out.push(CacheRecord::Complete { support: self.support.clone(), report: self.report.clone() });
        out
    }
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

/// File-system-safe stem for an arbitrary id, made unique by a hash suffix.
pub fn cache_file_name(question_id: &str) -> String {
    let safe: String = question_id
        .chars()
        .take(48)
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let h = stable_hash(&[question_id.as_bytes()]);
    format!("{safe}-{:08x}.jsonl", h as u32)
}

impl ResponseCache {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, phase: &str, question_id: &str) -> PathBuf {
        self.root.join(phase).join(cache_file_name(question_id))
    }

    /// The cached entry, if present, complete and produced under the same
    /// fingerprint.
    pub fn load(&self, phase: &str, question_id: &str, fingerprint: &str) -> Result<Option<CachedQuestion>> {
        let path = self.path(phase, question_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<CacheRecord>(line) {
                Ok(r) => records.push(r),
                Err(e) => {
                    log::warn!("ignoring unreadable cache file {}: {e}", path.display());
                    return Ok(None);
                }
            }
        }
        let mut it = records.into_iter();
        match it.next() {
            Some(CacheRecord::Header { schema, version, question_id: id, fingerprint: fp, .. })
                if schema == CACHE_SCHEMA && version == CACHE_VERSION && id == question_id && fp == fingerprint => {}
            _ => return Ok(None),
        }
        let mut augmentation = None;
        let mut paraphrases = Vec::new();
        let mut responses = Vec::new();
        for r in it {
            match r {
                CacheRecord::Augmentation { context } => augmentation = Some(context),
                CacheRecord::Paraphrase { text, .. } => paraphrases.push(text),
                CacheRecord::Response { response, .. } => responses.push(response),
                CacheRecord::Complete { support, report } => {
                    return Ok(Some(CachedQuestion { augmentation, paraphrases, responses, support, report }));
                }
                CacheRecord::Header { .. } => return Ok(None),
            }
        }
        Ok(None)
    }

    pub fn store(&self, phase: &str, question_id: &str, fingerprint: &str, entry: &CachedQuestion) -> Result<()> {
        let path = self.path(phase, question_id);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let mut buf = Vec::new();
        for r in entry.records(question_id, phase, fingerprint) {
            serde_json::to_writer(&mut buf, &r)?;
            buf.push(b'\n');
        }
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&buf)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}
