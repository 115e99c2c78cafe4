use std::collections::BTreeMap;
use std::path::PathBuf;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::cache::{CachedQuestion, ResponseCache};
use super::dataset::QuestionRecord;
use crate::analysis::{
    fit_stratum_classifier, label_update_success, linear_shap_importance, status_rank_correlations,
    top_feature_frequency, CorrelationMatrix, FitOutcome, ImportanceRanking, StratumKey,
};
use crate::augment::{augment, compare_success_rates, AugmentationStrategy, AugmentedContext};
use crate::client::{
    generate_paraphrases, request_seed, sample_paraphrased, stable_hash, ModelClient, ModelEndpointConfig,
    SamplingConfig,
};
use crate::error::{Error, Result};
use crate::features::{extract_feature_vector, FeatureVector, ModelSignals, N_FEATURES};
use crate::prompts::{answer_prompt, InstructionVariant};
use crate::status::{
    build_transition_matrix, characterize, KScopeConfig, KnowledgeStatus, ResponseCounts, StatusReport,
    TransitionMatrix,
};
use crate::support::{
    cluster_responses, match_gold, parse_mcq_answer, tally, ChatJudge, EntailmentJudge, NormalizingJudge,
    SupportSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    /// Offline normalization-based equivalence.
    #[default]
    Normalizing,
    /// The configured model answers entailment prompts.
    Model,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset_id: String,
    pub model_id: String,
    /// `None` when the offline mock client answers.
    pub endpoint: Option<ModelEndpointConfig>,
    pub sampling: SamplingConfig,
    pub kscope: KScopeConfig,
    pub strategy: Option<AugmentationStrategy>,
    pub seed: u64,
    pub cache_dir: PathBuf,
    /// Contextual sampling reuses the parametric paraphrases.
    pub reuse_paraphrases: bool,
    pub judge: JudgeKind,
    pub top_k: usize,
}

impl RunManifest {
    pub fn new(dataset_id: impl Into<String>, model_id: impl Into<String>, cache_dir: PathBuf, seed: u64) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            model_id: model_id.into(),
            endpoint: None,
            sampling: SamplingConfig::default(),
            kscope: KScopeConfig::default(),
            strategy: None,
            seed,
            cache_dir,
            reuse_paraphrases: true,
            judge: JudgeKind::default(),
            top_k: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        self.kscope.validate()?;
        if let Some(e) = &self.endpoint {
            e.validate()?;
        }
        if self.top_k == 0 {
            return Err(Error::Parameter("top-k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Parametric,
    Contextual(Option<AugmentationStrategy>),
}

impl Phase {
    pub fn name(self) -> String {
        match self {
            Phase::Parametric => "parametric".into(),
            Phase::Contextual(None) => "contextual".into(),
            Phase::Contextual(Some(s)) => format!("contextual-{s}"),
        }
    }
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    model_id: &'a str,
    endpoint: Option<&'a ModelEndpointConfig>,
    sampling: &'a SamplingConfig,
    kscope: &'a KScopeConfig,
    seed: u64,
    reuse_paraphrases: bool,
    judge: JudgeKind,
    phase: String,
    record: &'a QuestionRecord,
}

fn fingerprint(manifest: &RunManifest, phase: Phase, record: &QuestionRecord) -> Result<String> {
    let input = FingerprintInput {
        model_id: &manifest.model_id,
        endpoint: manifest.endpoint.as_ref(),
        sampling: &manifest.sampling,
        kscope: &manifest.kscope,
        seed: manifest.seed,
        reuse_paraphrases: manifest.reuse_paraphrases,
        judge: manifest.judge,
        phase: phase.name(),
        record,
    };
    Ok(format!("{:016x}", stable_hash(&[&serde_json::to_vec(&input)?])))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionFailure {
    pub question_id: String,
    pub phase: String,
    pub error: String,
    pub exit_code: i32,
}

/// One characterization pass over a dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhaseOutput {
    pub entries: BTreeMap<String, CachedQuestion>,
    pub failures: Vec<QuestionFailure>,
}

impl PhaseOutput {
    pub fn reports(&self) -> Vec<StatusReport> {
        self.entries.values().map(|e| e.report.clone()).collect()
    }
}

fn counts_from_clusters(
    client: &dyn ModelClient,
    manifest: &RunManifest,
    record: &QuestionRecord,
    texts: &[String],
) -> Result<(ResponseCounts, SupportSet, Option<usize>)> {
    let judge_seed = request_seed(manifest.seed, &format!("judge:{}", record.id), 0);
    let normalizing = NormalizingJudge::default();
    let chat = ChatJudge::new(client, record.question.clone(), judge_seed);
    let judge: &dyn EntailmentJudge = match manifest.judge {
        JudgeKind::Normalizing => &normalizing,
        JudgeKind::Model => &chat,
    };
    let clustering = cluster_responses(texts, judge)?;
    let gold = match_gold(&record.gold, &clustering.support, judge)?;
    let counts = tally(&clustering.assignments, clustering.support.d());
    Ok((counts, clustering.support, gold))
}

/// Samples and characterizes one question in one phase, consulting the cache.
pub fn characterize_question(
    client: &dyn ModelClient,
    manifest: &RunManifest,
    cache: &ResponseCache,
    record: &QuestionRecord,
    phase: Phase,
    paraphrases: Option<&[String]>,
) -> Result<CachedQuestion> {
    let phase_name = phase.name();
    let fp = fingerprint(manifest, phase, record)?;
    if let Some(hit) = cache.load(&phase_name, &record.id, &fp)? {
        return Ok(hit);
    }
    let sampling = &manifest.sampling;

    let (context, variant, augmentation): (Option<String>, InstructionVariant, Option<AugmentedContext>) = match phase {
        Phase::Parametric => (None, InstructionVariant::Standard, None),
        Phase::Contextual(strategy) => {
            let original = record
                .context
                .as_deref()
                .ok_or_else(|| Error::Parameter(format!("question {} has no context", record.id)))?;
            match strategy {
                None => (Some(original.to_string()), InstructionVariant::Standard, None),
                Some(s) => {
                    let seed = request_seed(manifest.seed, &format!("augment:{}", record.id), 0);
                    let a = augment(s, client, &record.question, original, record.credibility().as_ref(), seed)?;
                    (Some(a.augmented.clone()), a.instruction, Some(a))
                }
            }
        }
    };

    let paraphrases = match paraphrases {
        Some(p) => p.to_vec(),
        None => {
            generate_paraphrases(client, &record.question, sampling.n_paraphrases, sampling.temperature, manifest.seed)?
                .texts
        }
    };
    let prompts: Vec<String> = paraphrases
        .iter()
        .map(|p| answer_prompt(p, &record.options, context.as_deref(), variant))
        .collect();
    let responses = sample_paraphrased(
        client,
        &prompts,
        sampling.samples_per_paraphrase,
        sampling.temperature,
        manifest.seed,
    )?;

    let (counts, support, gold) = if record.is_open_ended() {
        let texts: Vec<String> = responses.iter().map(|r| r.text.clone()).collect();
        counts_from_clusters(client, manifest, record, &texts)?
    } else {
        let support = SupportSet::new(record.options.clone())?;
        let parsed: Vec<_> = responses.iter().map(|r| parse_mcq_answer(&r.text, &support)).collect();
        (tally(&parsed, support.d()), support, record.gold_index())
    };
    let mut report = characterize(&counts, gold, &manifest.kscope)?;
    report.question_id = record.id.clone();
    let entry = CachedQuestion { augmentation, paraphrases, responses, support: support.elements, report };
    cache.store(&phase_name, &record.id, &fp, &entry)?;
    Ok(entry)
}

fn run_phase(
    client: &dyn ModelClient,
    manifest: &RunManifest,
    cache: &ResponseCache,
    records: &[QuestionRecord],
    phase: Phase,
    parametric: Option<&PhaseOutput>,
) -> Result<PhaseOutput> {
    let mut out = PhaseOutput::default();
    for record in records {
        if matches!(phase, Phase::Contextual(_)) && record.context.is_none() {
            continue;
        }
        if let Phase::Contextual(Some(s)) = phase {
            if s.needs_metadata() && record.credibility().is_none() {
                info!("question {} has no credibility metadata; skipped for {s}", record.id);
                continue;
            }
        }
        let reused = match (phase, parametric) {
            (Phase::Contextual(_), Some(p)) if manifest.reuse_paraphrases => match p.entries.get(&record.id) {
                Some(e) => Some(e.paraphrases.as_slice()),
                None => continue,
            },
            _ => None,
        };
        match characterize_question(client, manifest, cache, record, phase, reused) {
            Ok(e) => {
                out.entries.insert(record.id.clone(), e);
            }
            Err(Error::Io(e)) => return Err(Error::Io(e)),
            Err(e) => {
                warn!("question {} ({}) failed: {e}", record.id, phase.name());
                out.failures.push(QuestionFailure {
                    question_id: record.id.clone(),
                    phase: phase.name(),
                    error: e.to_string(),
                    exit_code: e.exit_code(),
                });
            }
        }
    }
    info!("{}: {} characterized, {} failed", phase.name(), out.entries.len(), out.failures.len());
    Ok(out)
}

/// Parametric and (where contexts exist) contextual characterization.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacterizationRun {
    pub parametric: PhaseOutput,
    pub contextual: PhaseOutput,
    pub transition: Option<TransitionMatrix>,
}

impl CharacterizationRun {
    /// (P, Q) status pairs of questions characterized in both phases.
    pub fn pairs(&self) -> Vec<(String, KnowledgeStatus, KnowledgeStatus)> {
        status_pairs(&self.parametric, &self.contextual)
    }

    pub fn failures(&self) -> Vec<QuestionFailure> {
        self.parametric.failures.iter().chain(&self.contextual.failures).cloned().collect()
    }
}

fn status_pairs(p: &PhaseOutput, q: &PhaseOutput) -> Vec<(String, KnowledgeStatus, KnowledgeStatus)> {
    q.entries
        .iter()
        .filter_map(|(id, qe)| p.entries.get(id).map(|pe| (id.clone(), pe.report.status, qe.report.status)))
        .collect()
}

pub fn run_characterization(
    client: &dyn ModelClient,
    manifest: &RunManifest,
    records: &[QuestionRecord],
) -> Result<CharacterizationRun> {
    manifest.validate()?;
    let cache = ResponseCache::open(&manifest.cache_dir)?;
    let manifest_path = manifest.cache_dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_vec_pretty(manifest)?)?;

    let parametric = run_phase(client, manifest, &cache, records, Phase::Parametric, None)?;
    let contextual = if records.iter().any(|r| r.context.is_some()) {
        run_phase(client, manifest, &cache, records, Phase::Contextual(manifest.strategy), Some(&parametric))?
    } else {
        PhaseOutput::default()
    };
    let pairs: Vec<_> = status_pairs(&parametric, &contextual).into_iter().map(|(_, p, q)| (p, q)).collect();
    let transition = (!pairs.is_empty()).then(|| build_transition_matrix(&pairs));
    Ok(CharacterizationRun { parametric, contextual, transition })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub question_id: String,
    pub features: FeatureVector,
}

/// Features of every (question, context) pair; `contexts` overrides the
/// record's own context (for augmented runs).
pub fn compute_features(
    client: &dyn ModelClient,
    manifest: &RunManifest,
    records: &[QuestionRecord],
    contexts: &BTreeMap<String, String>,
) -> (Vec<FeatureRecord>, Vec<QuestionFailure>) {
    let mut out = Vec::new();
    let mut failures = Vec::new();
    for r in records {
        let Some(context) = contexts.get(&r.id).map(String::as_str).or(r.context.as_deref()) else {
            continue;
        };
        let result = ModelSignals::fetch(client, &r.question, context, manifest.top_k)
            .and_then(|s| extract_feature_vector(&r.question, context, &s));
        match result {
            Ok(features) => out.push(FeatureRecord { question_id: r.id.clone(), features }),
            Err(e) => failures.push(QuestionFailure {
                question_id: r.id.clone(),
                phase: "features".into(),
                error: e.to_string(),
                exit_code: e.exit_code(),
            }),
        }
    }
    (out, failures)
}

/// One labelled sample for the update analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSample {
    pub key: StratumKey,
    pub features: FeatureVector,
    pub success: bool,
}

pub fn analysis_samples(
    manifest: &RunManifest,
    run: &CharacterizationRun,
    features: &[FeatureRecord],
) -> Vec<AnalysisSample> {
    let by_id: BTreeMap<&str, &FeatureVector> = features.iter().map(|f| (f.question_id.as_str(), &f.features)).collect();
    run.pairs()
        .into_iter()
        .filter_map(|(id, p, q)| {
            by_id.get(id.as_str()).map(|&f| AnalysisSample {
                key: StratumKey { dataset: manifest.dataset_id.clone(), model: manifest.model_id.clone(), status: p },
                features: *f,
                success: label_update_success(p, q),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumFit {
    pub key: StratumKey,
    pub n: usize,
    pub outcome: FitOutcome,
    pub importance: Option<[f64; N_FEATURES]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub strata: Vec<StratumFit>,
    pub ranking: Option<ImportanceRanking>,
    pub correlations: Option<CorrelationMatrix>,
}

/// Fits every stratum, then ranks and correlates the retained ones.
pub fn analyze(samples: &[AnalysisSample], alpha: f64, seed: u64) -> Result<AnalysisReport> {
    let mut grouped: BTreeMap<StratumKey, (Vec<FeatureVector>, Vec<bool>)> = BTreeMap::new();
    for s in samples {
        let e = grouped.entry(s.key.clone()).or_default();
        e.0.push(s.features);
        e.1.push(s.success);
    }
    let mut strata = Vec::new();
    let mut importances = BTreeMap::new();
    for (key, (xs, ys)) in grouped {
        let outcome = fit_stratum_classifier(&xs, &ys, seed)?;
        let importance = match outcome.fitted() {
            Some(m) if m.retained => Some(linear_shap_importance(m, &xs)?),
            _ => None,
        };
        if let Some(imp) = importance {
            importances.insert(key.clone(), imp);
        }
        strata.push(StratumFit { key, n: xs.len(), outcome, importance });
    }
    let ranking = if importances.is_empty() { None } else { Some(top_feature_frequency(&importances)?) };
    let correlations = match &ranking {
        Some(r) if r.statuses.len() >= 2 => Some(status_rank_correlations(&r.statuses, alpha)?),
        _ => None,
    };
    Ok(AnalysisReport { strata, ranking, correlations })
}

/// Contextual run under one augmentation strategy, compared with the
/// unaugmented contextual run.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationRun {
    pub strategy: AugmentationStrategy,
    pub contextual: PhaseOutput,
    pub transition: Option<TransitionMatrix>,
    pub deltas: [Option<f64>; 5],
}

pub fn run_augmentation(
    client: &dyn ModelClient,
    manifest: &RunManifest,
    records: &[QuestionRecord],
    baseline: &CharacterizationRun,
    strategy: AugmentationStrategy,
) -> Result<AugmentationRun> {
    let cache = ResponseCache::open(&manifest.cache_dir)?;
    let contextual = run_phase(
        client,
        manifest,
        &cache,
        records,
        Phase::Contextual(Some(strategy)),
        Some(&baseline.parametric),
    )?;
    let after: Vec<_> = status_pairs(&baseline.parametric, &contextual).into_iter().map(|(_, p, q)| (p, q)).collect();
    // Compare on the questions present in both runs.
    let before: Vec<_> = baseline
        .pairs()
        .into_iter()
        .filter(|(id, _, _)| contextual.entries.contains_key(id))
        .map(|(_, p, q)| (p, q))
        .collect();
    let transition = (!after.is_empty()).then(|| build_transition_matrix(&after));
    Ok(AugmentationRun { strategy, deltas: compare_success_rates(&before, &after), contextual, transition })
}

/// What the full pipeline should compute beyond characterization.
#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub features: bool,
    pub analysis: bool,
    pub strategies: Vec<AugmentationStrategy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub manifest: RunManifest,
    pub run: CharacterizationRun,
    pub features: Vec<FeatureRecord>,
    pub analysis: Option<AnalysisReport>,
    pub augmentations: Vec<AugmentationRun>,
    pub failures: Vec<QuestionFailure>,
}

pub fn run_pipeline(
    client: &dyn ModelClient,
    manifest: &RunManifest,
    records: &[QuestionRecord],
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    let run = run_characterization(client, manifest, records)?;
    let mut failures = run.failures();
    let mut features = Vec::new();
    if opts.features || opts.analysis {
        let contexts: BTreeMap<String, String> = run
            .contextual
            .entries
            .iter()
            .filter_map(|(id, e)| e.augmentation.as_ref().map(|a| (id.clone(), a.augmented.clone())))
            .collect();
        let (f, fail) = compute_features(client, manifest, records, &contexts);
        features = f;
        failures.extend(fail);
    }
    let analysis = if opts.analysis {
        Some(analyze(&analysis_samples(manifest, &run, &features), manifest.kscope.alpha, manifest.seed)?)
    } else {
        None
    };
    let mut augmentations = Vec::new();
    for &s in &opts.strategies {
        let a = run_augmentation(client, manifest, records, &run, s)?;
        failures.extend(a.contextual.failures.iter().cloned());
        augmentations.push(a);
    }
    Ok(PipelineOutput { manifest: manifest.clone(), run, features, analysis, augmentations, failures })
}
