//! Delimited tables and JSON records of a run. No timestamps or absolute
//! paths are written, so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{AnalysisReport, PipelineOutput, QuestionFailure};
use crate::analysis::FitOutcome;
use crate::error::{param, Result};
use crate::features::{Feature, N_FEATURES};
use crate::status::{build_transition_matrix, status_distribution, KnowledgeStatus, StatusReport, TransitionMatrix};

pub const STATUS_REPORTS: &str = "status_reports.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: String,
    pub report: StatusReport,
}

fn status_header(first: &[&str]) -> Vec<String> {
    first
        .iter()
        .map(|s| s.to_string())
        .chain(KnowledgeStatus::ALL.iter().map(|s| s.as_str().to_string()))
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reports grouped by phase, parametric first.
fn by_phase(reports: &[PhaseReport]) -> BTreeMap<String, Vec<StatusReport>> {
    let mut m: BTreeMap<String, Vec<StatusReport>> = BTreeMap::new();
    for r in reports {
        m.entry(r.phase.clone()).or_default().push(r.report.clone());
    }
    m
}

/// Transition matrices from the parametric phase to every other phase.
pub fn transitions(reports: &[PhaseReport]) -> BTreeMap<String, TransitionMatrix> {
    let phases = by_phase(reports);
    let Some(parametric) = phases.get("parametric") else {
        return BTreeMap::new();
    };
    let p: BTreeMap<&str, KnowledgeStatus> = parametric.iter().map(|r| (r.question_id.as_str(), r.status)).collect();
    phases
        .iter()
        .filter(|(name, _)| name.as_str() != "parametric")
        .filter_map(|(name, rs)| {
            let pairs: Vec<_> = rs
                .iter()
                .filter_map(|r| p.get(r.question_id.as_str()).map(|&s| (s, r.status)))
                .collect();
            (!pairs.is_empty()).then(|| (name.clone(), build_transition_matrix(&pairs)))
        })
        .collect()
}

/// Status distribution and transition tables from phase-tagged reports.
pub fn emit_status_tables(reports: &[PhaseReport], dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return param("no status reports to emit");
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let mut rows = Vec::new();
    for (phase, rs) in by_phase(reports) {
        let dist = status_distribution(&rs)?;
        let mut row = vec![phase, rs.len().to_string()];
        row.extend(dist.iter().map(f64::to_string));
        rows.push(row);
    }
    let path = dir.join("status_distribution.csv");
    write_csv(&path, &status_header(&["phase", "n"]), &rows)?;
    written.push(path);

    let mut rows = Vec::new();
    for (phase, m) in transitions(reports) {
        for from in KnowledgeStatus::ALL {
            let mut row = vec![phase.clone(), from.as_str().to_string()];
            row.extend(KnowledgeStatus::ALL.iter().map(|&to| m.get(from, to).to_string()));
            row.push(m.row_sum(from).to_string());
            rows.push(row);
        }
    }
    let mut header = status_header(&["phase", "from"]);
    header.push("total".into());
    let path = dir.join("transition_matrix.csv");
    write_csv(&path, &header, &rows)?;
    written.push(path);
    Ok(written)
}

pub fn load_status_reports(path: &Path) -> Result<Vec<PhaseReport>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

fn phase_reports(out: &PipelineOutput) -> Vec<PhaseReport> {
    let mut v = Vec::new();
    let mut push = |phase: String, rs: Vec<StatusReport>| {
        v.extend(rs.into_iter().map(|report| PhaseReport { phase: phase.clone(), report }));
    };
    push("parametric".into(), out.run.parametric.reports());
    let ctx_phase = match out.manifest.strategy {
        Some(s) => format!("contextual-{s}"),
        None => "contextual".into(),
    };
    push(ctx_phase, out.run.contextual.reports());
    for a in &out.augmentations {
        push(format!("contextual-{}", a.strategy), a.contextual.reports());
    }
    v
}

#[derive(Serialize)]
struct Summary<'a> {
    dataset_id: &'a str,
    model_id: &'a str,
    manifest: serde_json::Value,
    distributions: BTreeMap<String, [f64; 5]>,
    transitions: BTreeMap<String, TransitionMatrix>,
    augmentation_deltas: BTreeMap<String, BTreeMap<&'static str, Option<f64>>>,
    analysis: Option<&'a AnalysisReport>,
    failures: &'a [QuestionFailure],
}

/// Writes every table and record of a pipeline run into `dir`.
pub fn emit_reports(out: &PipelineOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    let reports = phase_reports(out);
    if reports.is_empty() {
        return param("the run produced no status reports");
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join(STATUS_REPORTS);
    let mut buf = Vec::new();
    for r in &reports {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    fs::write(&path, buf)?;
    written.push(path);
    written.extend(emit_status_tables(&reports, dir)?);

    let mut header = vec!["question_id".to_string()];
    header.extend(Feature::ALL.iter().map(|f| f.name().to_string()));
    let rows: Vec<Vec<String>> = out
        .features
        .iter()
        .map(|f| {
            let mut row = vec![f.question_id.clone()];
            row.extend(f.features.to_array().iter().map(f64::to_string));
            row
        })
        .collect();
    let path = dir.join("features.csv");
    write_csv(&path, &header, &rows)?;
    written.push(path);

    if let Some(a) = &out.analysis {
        let header: Vec<String> = [
            "dataset", "model", "status", "n", "outcome", "macro_f1", "dummy_macro_f1", "retained", "c",
            "class_weight", "note",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let rows: Vec<Vec<String>> = a
            .strata
            .iter()
            .map(|s| {
                let mut row = vec![s.key.dataset.clone(), s.key.model.clone(), s.key.status.to_string(), s.n.to_string()];
                match &s.outcome {
                    FitOutcome::Fitted(m) => row.extend([
                        "fitted".into(),
                        m.macro_f1.to_string(),
                        m.dummy_macro_f1.to_string(),
                        m.retained.to_string(),
                        m.hyperparameters.c.to_string(),
                        serde_json::to_value(m.hyperparameters.class_weight)?.as_str().unwrap_or_default().to_string(),
                        String::new(),
                    ]),
                    FitOutcome::Excluded(e) => row.extend([
                        "excluded".into(),
                        String::new(),
                        String::new(),
                        "false".into(),
                        String::new(),
                        String::new(),
                        e.reason.clone(),
                    ]),
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        let path = dir.join("strata.csv");
        write_csv(&path, &header, &rows)?;
        written.push(path);

        let header: Vec<String> = ["status", "rank", "feature", "frequency", "importance_sum"].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for s in a.ranking.iter().flat_map(|r| &r.statuses) {
            for (i, e) in s.entries.iter().enumerate() {
                rows.push(vec![
                    s.status.to_string(),
                    (i + 1).to_string(),
                    e.feature.name().to_string(),
                    e.frequency.to_string(),
                    e.importance_sum.to_string(),
                ]);
            }
        }
        let path = dir.join("importance_ranking.csv");
        write_csv(&path, &header, &rows)?;
        written.push(path);

        let header: Vec<String> = ["status_a", "status_b", "rho", "p_value", "significant", "adjusted_alpha"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut rows = Vec::new();
        if let Some(m) = &a.correlations {
            for (i, sa) in m.statuses.iter().enumerate() {
                for (j, sb) in m.statuses.iter().enumerate() {
                    let c = m.cells[i][j];
                    rows.push(vec![
                        sa.to_string(),
                        sb.to_string(),
                        c.rho.to_string(),
                        c.p_value.to_string(),
                        c.significant.to_string(),
                        m.adjusted_alpha.to_string(),
                    ]);
                }
            }
        }
        let path = dir.join("correlations.csv");
        write_csv(&path, &header, &rows)?;
        written.push(path);
    }

    let mut deltas = BTreeMap::new();
    if !out.augmentations.is_empty() {
        let rows: Vec<Vec<String>> = out
            .augmentations
            .iter()
            .map(|a| {
                let mut row = vec![a.strategy.to_string()];
                row.extend(a.deltas.iter().map(|d| opt(*d)));
                row
            })
            .collect();
        let path = dir.join("augmentation_deltas.csv");
        write_csv(&path, &status_header(&["strategy"]), &rows)?;
        written.push(path);
        for a in &out.augmentations {
            let m: BTreeMap<&'static str, Option<f64>> =
                KnowledgeStatus::ALL.iter().map(|s| (s.as_str(), a.deltas[s.index()])).collect();
            deltas.insert(a.strategy.to_string(), m);
        }
    }

    let header: Vec<String> = ["question_id", "phase", "exit_code", "error"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = out
        .failures
        .iter()
        .map(|f| vec![f.question_id.clone(), f.phase.clone(), f.exit_code.to_string(), f.error.clone()])
        .collect();
    let path = dir.join("failures.csv");
    write_csv(&path, &header, &rows)?;
    written.push(path);

    let mut manifest = serde_json::to_value(&out.manifest)?;
    if let Some(m) = manifest.as_object_mut() {
        m.remove("cache_dir");
    }
    let distributions = by_phase(&reports)
        .into_iter()
        .map(|(k, rs)| Ok((k, status_distribution(&rs)?)))
        .collect::<Result<_>>()?;
    let summary = Summary {
        dataset_id: &out.manifest.dataset_id,
        model_id: &out.manifest.model_id,
        manifest,
        distributions,
        transitions: transitions(&reports),
        augmentation_deltas: deltas,
        analysis: out.analysis.as_ref(),
        failures: &out.failures,
    };
    let path = dir.join("summary.json");
    let mut bytes = serde_json::to_vec_pretty(&summary)?;
    bytes.push(b'\n');
    fs::write(&path, bytes)?;
    written.push(path);
    Ok(written)
}

/// Importance arrays keyed by feature name, for display.
pub fn named_importance(imp: &[f64; N_FEATURES]) -> BTreeMap<&'static str, f64> {
    Feature::ALL.iter().map(|f| (f.name(), imp[f.index()])).collect()
}
