//! Command-line interface.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::catalog::{Catalog, NormalizeConfig};
use crate::dialogue::{
    Backend, BackendRefiner, GenerationOptions, PromptSet, RemoteBackend, RemoteConfig, Strategy,
    TemplateBackend,
};
use crate::eval::{evaluate_conversations, index_products, BaselineExtractor, Bm25Params, QueryExtractor, ReferenceExtractor};
use crate::planner::{plan_dialogue, Criterion, PlannerConfig, TreeConfig};
use crate::pipeline::{
    compute_stats, read_records, sample_episode, stats_table, summarize, write_run, BackendKind, Pipeline,
    RecordFile, RunConfig,
};
use crate::preference::InterestWeights;
use crate::synthetic::{synthetic_catalog, SyntheticConfig, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(name = "convshop", version, about = "Generate and evaluate target-oriented shopping conversations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a raw product file and write it back out.
    Ingest(IngestArgs),
    /// Write a seeded synthetic catalog.
    Synth(SynthArgs),
    /// Print sampled target preferences.
    Sample(EpisodeArgs),
    /// Print dialogue plans for sampled preferences.
    Plan(EpisodeArgs),
    /// Generate conversations.
    Generate(GenerateArgs),
    /// Score query extraction and product ranking over generated conversations.
    Evaluate(EvaluateArgs),
    /// Summarize a record file.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CatalogArgs {
    /// Line-delimited product records.
    #[arg(long)]
    pub catalog: PathBuf,
    /// Domain name; defaults to the catalog file stem.
    #[arg(long)]
    pub domain: Option<String>,
}

impl CatalogArgs {
    fn domain(&self) -> String {
        self.domain.clone().unwrap_or_else(|| {
            self.catalog
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }

    fn load(&self) -> Result<Catalog> {
        let (catalog, report) = Catalog::load(&self.catalog, &self.domain(), &NormalizeConfig::default())
            .with_context(|| format!("loading {}", self.catalog.display()))?;
        if !report.skipped.is_empty() || report.too_few_features > 0 {
            log::info!(
                "{}: {} read, {} skipped, {} with too few features",
                self.catalog.display(),
                report.read,
                report.skipped.len(),
                report.too_few_features
            );
        }
        Ok(catalog)
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    GainRatio,
    Gain,
    Gini,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::GainRatio => Criterion::GainRatio,
            CriterionArg::Gain => Criterion::Gain,
            CriterionArg::Gini => Criterion::Gini,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    SinglePass,
    Interactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Template,
    Remote,
}

#[derive(Debug, Clone, Args)]
pub struct EpisodeArgs {
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Interest probabilities as wanted,unwanted,optional.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub weights: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = CriterionArg::GainRatio)]
    pub criterion: CriterionArg,
    #[arg(long)]
    pub max_steps_per_turn: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Keep only the root step of each tree and refit.
    #[arg(long)]
    pub refit_per_step: bool,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long, value_enum, default_value_t = StrategyArg::SinglePass)]
    pub strategy: StrategyArg,
    #[arg(long, value_enum, default_value_t = BackendArg::Template)]
    pub backend: BackendArg,
    /// Directory of prompt templates overriding the built-in ones.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Most plan aspects per seller question.
    #[arg(long, default_value_t = 2)]
    pub max_aspects_per_question: usize,
    /// Refine tracking with a model call after each customer turn (remote backend).
    #[arg(long)]
    pub model_tracker: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractorArg {
    Reference,
    Baseline,
    Both,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub catalog: CatalogArgs,
    /// Record file written by `generate`.
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, value_enum, default_value_t = ExtractorArg::Both)]
    pub extractor: ExtractorArg,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 1.2)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.75)]
    pub b: f64,
    /// Write the metric records here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// Print the statistics as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_records(path: &Path) -> Result<RecordFile> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let file = read_records(BufReader::new(f)).map_err(anyhow::Error::msg).with_context(|| format!("reading {}", path.display()))?;
    if file.records.is_empty() {
        bail!("{}: no episode records", path.display());
    }
    Ok(file)
}

impl EpisodeArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let weights = match &self.weights {
            Some(w) => InterestWeights::new(w[0], w[1], w[2])?,
            None => InterestWeights::default(),
        };
        Ok(RunConfig {
            catalog: Some(self.catalog.catalog.clone()),
            domain: self.catalog.domain(),
            episodes: self.n,
            seed: self.seed,
            weights,
            planner: PlannerConfig {
                tree: TreeConfig {
                    max_depth: self.max_depth,
                    criterion: self.criterion.into(),
                    ..TreeConfig::default()
                },
                max_steps_per_turn: self.max_steps_per_turn,
                refit_per_step: self.refit_per_step,
                ..PlannerConfig::default()
            },
            out: self.out.clone(),
            ..RunConfig::default()
        })
    }
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let catalog = args.catalog.load()?;
    let mut out = output(Some(&args.out))?;
    catalog.export(&mut out)?;
    out.flush()?;
    eprintln!("wrote {} products to {}", catalog.len(), args.out.display());
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let catalog = synthetic_catalog(
        &SyntheticSpec::default(),
        &SyntheticConfig {
            n_products: args.n,
            seed: args.seed,
            ..SyntheticConfig::default()
        },
    )?;
    let mut out = output(Some(&args.out))?;
    catalog.export(&mut out)?;
    out.flush()?;
    eprintln!("wrote {} products to {}", catalog.len(), args.out.display());
    Ok(())
}

pub fn cmd_sample(args: &EpisodeArgs) -> Result<()> {
    let catalog = args.catalog.load()?;
    let cfg = args.run_config()?;
    let mut out = output(args.out.as_deref())?;
    for i in 0..cfg.episodes {
        let (pref, _) = sample_episode(&catalog, &cfg, i).map_err(anyhow::Error::msg)?;
        serde_json::to_writer(&mut out, &serde_json::json!({ "episode": i, "preference": pref }))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_plan(args: &EpisodeArgs) -> Result<()> {
    let catalog = args.catalog.load()?;
    let cfg = args.run_config()?;
    let mut out = output(args.out.as_deref())?;
    for i in 0..cfg.episodes {
        let (pref, _) = sample_episode(&catalog, &cfg, i).map_err(anyhow::Error::msg)?;
        let line = match plan_dialogue(&catalog, &pref, &cfg.planner) {
            Ok(o) => serde_json::json!({
                "episode": i,
                "preference": pref,
                "plan_history": o.history,
                "trace": o.trace(),
                "stop": o.stop,
                "final_candidates": o.final_set.ids(&catalog),
            }),
            Err(e) => serde_json::json!({ "episode": i, "preference": pref, "error": e.to_string() }),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let mut cfg = args.episode.run_config()?;
    cfg.generation = GenerationOptions {
        strategy: match args.strategy {
            StrategyArg::SinglePass => Strategy::SinglePass,
            StrategyArg::Interactive => Strategy::Interactive,
        },
        max_aspects_per_question: args.max_aspects_per_question.max(1),
        ..GenerationOptions::default()
    };
    cfg.backend = match args.backend {
        BackendArg::Template => BackendKind::Template,
        BackendArg::Remote => BackendKind::Remote,
    };
    cfg.prompts = args.prompts.clone();
    cfg.workers = args.workers.max(1);

    // configuration problems are fatal before any episode runs
    let backend: Box<dyn Backend> = match cfg.backend {
        BackendKind::Template => Box::new(TemplateBackend),
        BackendKind::Remote => Box::new(RemoteBackend::new(RemoteConfig::from_env()?)),
    };
    let prompts = match &cfg.prompts {
        Some(dir) => PromptSet::from_dir(dir)?,
        None => PromptSet::default(),
    };
    let catalog = args.episode.catalog.load()?;
    let refiner = args.model_tracker.then(|| BackendRefiner {
        backend: backend.as_ref(),
        template: &prompts.state_tracker,
        max_length: 512,
    });
    let pipeline = Pipeline {
        catalog: &catalog,
        config: &cfg,
        backend: backend.as_ref(),
        prompts: &prompts,
        refiner: refiner.as_ref().map(|r| r as _),
    };
    let records = pipeline.run()?;
    let mut out = output(cfg.out.as_deref())?;
    write_run(&mut out, &cfg, &records)?;
    let (ok, failed) = summarize(&records);
    eprintln!("{ok} ok, {failed} failed");
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let file = load_records(&args.records)?;
    let catalog = args.catalog.load()?;
    let convs: Vec<_> = file.records.iter().filter_map(|r| r.conversation.clone().filter(|_| r.is_ok())).collect();
    if convs.is_empty() {
        bail!("{}: no successful episodes", args.records.display());
    }
    let index = index_products(&catalog, Bm25Params { k1: args.k1, b: args.b })?;
    let tracker = file.config.map(|c| c.generation.tracker).unwrap_or_default();
    let reference = ReferenceExtractor::new(catalog.categories(), tracker);
    let extractors: Vec<&dyn QueryExtractor> = match args.extractor {
        ExtractorArg::Reference => vec![&reference],
        ExtractorArg::Baseline => vec![&BaselineExtractor],
        ExtractorArg::Both => vec![&reference, &BaselineExtractor],
    };
    let mut out = output(args.out.as_deref())?;
    for ex in extractors {
        let report = evaluate_conversations(&convs, ex, &index, &args.ks)?;
        serde_json::to_writer(&mut out, &report)?;
        out.write_all(b"\n")?;
        eprint!("{}", report.table());
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let file = load_records(&args.records)?;
    let stats = compute_stats(&file.records);
    let mut out = io::stdout().lock();
    if args.json {
        serde_json::to_writer_pretty(&mut out, &stats)?;
        out.write_all(b"\n")?;
    } else {
        out.write_all(stats_table(&stats).as_bytes())?;
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Stats(a) => cmd_stats(a),
    }
}

/// Runs a command, printing any error, and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
