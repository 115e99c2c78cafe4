use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use kscope_core::augment::AugmentationStrategy;
use kscope_core::client::{HttpClient, MockClient, ModelClient, ModelEndpointConfig, RequestLog, SamplingConfig};
use kscope_core::status::{stability_study, StudyConfig};
use kscope_core::workbench::{
    emit_reports, emit_status_tables, ingest_dataset, load_status_reports, run_pipeline, IngestOptions, JudgeKind,
    PipelineOptions, PipelineOutput, RunManifest,
};
use kscope_core::KScopeConfig;

#[derive(Parser)]
#[command(name = "kscope", version, about = "Characterize, explain and update a model's knowledge of each question")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parametric and contextual knowledge statuses with transition matrices.
    Characterize(RunArgs),
    /// Characterization plus the eleven context features.
    Features(RunArgs),
    /// Characterization, features and stratified update-success regressions.
    Analyze(RunArgs),
    /// Success-rate changes under context-augmentation strategies.
    Augment {
        #[command(flatten)]
        run: RunArgs,
        /// Strategies to evaluate (default: all four).
        #[arg(long = "apply", value_enum, value_delimiter = ',')]
        apply: Vec<StrategyArg>,
    },
    /// Rebuild distribution and transition tables from a status-report file.
    Report {
        /// A status_reports.jsonl written by an earlier run.
        #[arg(long)]
        reports: PathBuf,
        #[arg(long, default_value = "kscope-out")]
        out: PathBuf,
    },
    /// Status-change rates between independent resamples across M and N.
    Study {
        #[arg(long, value_delimiter = ',', default_values_t = [25u64, 50, 100, 200])]
        n_values: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64])]
        m_values: Vec<u64>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Per-paraphrase tilt of the answer distribution.
        #[arg(long, default_value_t = 0.0)]
        sensitivity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Credibility,
    NaiveSummarization,
    ConstrainedSummarization,
    Combined,
}

impl From<StrategyArg> for AugmentationStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Credibility => AugmentationStrategy::Credibility,
            StrategyArg::NaiveSummarization => AugmentationStrategy::NaiveSummarization,
            StrategyArg::ConstrainedSummarization => AugmentationStrategy::ConstrainedSummarization,
            StrategyArg::Combined => AugmentationStrategy::Combined,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeArg {
    Normalizing,
    Model,
}

#[derive(Args)]
struct RunArgs {
    /// JSON-lines question file.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory for reports.
    #[arg(long, default_value = "kscope-out")]
    out: PathBuf,
    /// Response cache directory (default: <out>/cache).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Dataset label in reports (default: the file stem).
    #[arg(long)]
    dataset_id: Option<String>,

    /// Use the deterministic offline mock model.
    #[arg(long, conflicts_with = "endpoint")]
    mock: bool,
    /// Base URL of a chat-completions compatible endpoint.
    #[arg(long, required_unless_present = "mock")]
    endpoint: Option<String>,
    #[arg(long, default_value = "mock")]
    model: String,
    #[arg(long)]
    embedding_model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "KSCOPE_API_KEY")]
    credential_env: String,
    #[arg(long, default_value_t = 8)]
    max_concurrency: usize,
    /// Append every request and response to this JSON-lines file.
    #[arg(long)]
    request_log: Option<PathBuf>,

    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Paraphrases per question (M).
    #[arg(short = 'm', long = "paraphrases", default_value_t = 20)]
    paraphrases: usize,
    /// Samples per question (N), split evenly over the paraphrases.
    #[arg(short = 'n', long = "samples", default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Augmentation applied to contexts before contextual sampling.
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Shuffle option order per question (positional-bias control).
    #[arg(long)]
    permute_options: bool,
    /// How open-ended answers are grouped.
    #[arg(long, value_enum, default_value = "normalizing")]
    judge: JudgeArg,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
}

impl RunArgs {
    fn manifest(&self) -> Result<RunManifest> {
        let dataset_id = match &self.dataset_id {
            Some(d) => d.clone(),
            None => self
                .dataset
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
        };
        let cache = self.cache.clone().unwrap_or_else(|| self.out.join("cache"));
        let mut m = RunManifest::new(dataset_id, self.model.clone(), cache, self.seed);
        m.sampling = SamplingConfig::even(self.samples, self.paraphrases, self.temperature)?;
        m.kscope = KScopeConfig { alpha: self.alpha, ..KScopeConfig::default() };
        m.strategy = self.strategy.map(Into::into);
        m.judge = match self.judge {
            JudgeArg::Normalizing => JudgeKind::Normalizing,
            JudgeArg::Model => JudgeKind::Model,
        };
        m.top_k = self.top_k;
        m.endpoint = self.endpoint.as_ref().map(|url| ModelEndpointConfig {
            base_url: url.clone(),
            model: self.model.clone(),
            credential_env: self.credential_env.clone(),
            embedding_model: self.embedding_model.clone(),
            max_concurrency: self.max_concurrency,
            top_logprobs: self.top_k,
            ..ModelEndpointConfig::default()
        });
        m.validate()?;
        Ok(m)
    }

    fn client(&self, manifest: &RunManifest) -> Result<Box<dyn ModelClient>> {
        match &manifest.endpoint {
            None => Ok(Box::new(MockClient::new(self.seed).with_max_concurrency(self.max_concurrency))),
            Some(cfg) => {
                if std::env::var(&cfg.credential_env).map_or(true, |v| v.is_empty()) {
                    warn!("{} is not set; requests are sent without credentials", cfg.credential_env);
                }
                let mut c = HttpClient::new(cfg.clone())?;
                if let Some(path) = &self.request_log {
                    c = c.with_log(RequestLog::open(path)?);
                }
                Ok(Box::new(c))
            }
        }
    }
}

fn run(args: &RunArgs, opts: PipelineOptions) -> Result<PipelineOutput> {
    let manifest = args.manifest()?;
    let records = ingest_dataset(&args.dataset, IngestOptions { permute_options: args.permute_options, seed: args.seed })
        .with_context(|| format!("reading {}", args.dataset.display()))?;
    info!("{} questions from {}", records.len(), args.dataset.display());
    let client = args.client(&manifest)?;
    let out = run_pipeline(client.as_ref(), &manifest, &records, &opts)?;
    if out.run.parametric.entries.is_empty() {
        warn!("no question was characterized; no reports written");
        return Ok(out);
    }
    for p in emit_reports(&out, &args.out)? {
        println!("{}", p.display());
    }
    Ok(out)
}

/// Exit status of the first per-question failure, if any.
fn failure_status(out: &PipelineOutput) -> ExitCode {
    match out.failures.first() {
        None => ExitCode::SUCCESS,
        Some(f) => {
            eprintln!("{} question(s) failed; first: {} ({}): {}", out.failures.len(), f.question_id, f.phase, f.error);
            ExitCode::from(f.exit_code as u8)
        }
    }
}

fn study(
    n_values: Vec<u64>,
    m_values: Vec<u64>,
    trials: usize,
    sensitivity: f64,
    seed: u64,
    alpha: f64,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = StudyConfig { generators: StudyConfig::default_generators(), n_values, m_values, trials, sensitivity, seed };
    let kscope = KScopeConfig { alpha, ..KScopeConfig::default() };
    let points = stability_study(&cfg, &kscope)?;
    let mut table = String::from("m,n,comparisons,change_rate\n");
    for p in points {
        table.push_str(&format!("{},{},{},{}\n", p.m, p.n, p.comparisons, p.change_rate));
    }
    match out {
        Some(path) => std::fs::write(path, table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Characterize(args) => Ok(failure_status(&run(&args, PipelineOptions::default())?)),
        Command::Features(args) => {
            Ok(failure_status(&run(&args, PipelineOptions { features: true, ..PipelineOptions::default() })?))
        }
        Command::Analyze(args) => Ok(failure_status(&run(
            &args,
            PipelineOptions { features: true, analysis: true, ..PipelineOptions::default() },
        )?)),
        Command::Augment { run: args, apply } => {
            if args.strategy.is_some() {
                bail!("--strategy conflicts with augment; list strategies with --apply");
            }
            let strategies = if apply.is_empty() {
                AugmentationStrategy::ALL.to_vec()
            } else {
                apply.into_iter().map(Into::into).collect()
            };
            Ok(failure_status(&run(&args, PipelineOptions { strategies, ..PipelineOptions::default() })?))
        }
        Command::Report { reports, out } => {
            let loaded = load_status_reports(&reports).with_context(|| format!("reading {}", reports.display()))?;
            for p in emit_status_tables(&loaded, &out)? {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Study { n_values, m_values, trials, sensitivity, seed, alpha, out } => {
            study(n_values, m_values, trials, sensitivity, seed, alpha, out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<kscope_core::Error>().map_or(1, kscope_core::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
