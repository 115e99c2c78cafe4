//! Dataset ingestion, cached sampling runs and report emission.

mod cache;
mod dataset;
mod report;
mod run;

pub use cache::{cache_file_name, CacheRecord, CachedQuestion, ResponseCache, CACHE_SCHEMA, CACHE_VERSION};
pub use dataset::{ingest_dataset, parse_dataset, IngestOptions, QuestionRecord, DATASET_SCHEMA, DATASET_VERSION};
pub use report::{
    emit_reports, emit_status_tables, load_status_reports, named_importance, transitions, PhaseReport, STATUS_REPORTS,
};
pub use run::{
    analysis_samples, analyze, characterize_question, compute_features, run_augmentation, run_characterization,
    run_pipeline, AnalysisReport, AnalysisSample, AugmentationRun, CharacterizationRun, FeatureRecord, JudgeKind,
    Phase, PhaseOutput, PipelineOptions, PipelineOutput, QuestionFailure, RunManifest, StratumFit,
};
