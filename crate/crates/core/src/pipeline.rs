//! End-to-end episode generation and the line-delimited record format.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::dialogue::{
    generate, track_transcript, Backend, Conversation, EpisodeInput, GenerationOptions, PromptSet,
    StateRefiner,
};
use crate::planner::{plan_dialogue, IterationTrace, PlanStep, PlannerConfig, StopReason};
use crate::preference::{sample_preference, sample_target, InterestWeights};
use crate::search::Preference;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Template,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "template" => Ok(BackendKind::Template),
            "remote" => Ok(BackendKind::Remote),
            other => Err(format!("unknown backend {other:?}")),
        }
    }
}

/// Everything that determines a run's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub catalog: Option<PathBuf>,
    pub domain: String,
    pub episodes: usize,
    pub seed: u64,
    pub weights: InterestWeights,
    pub planner: PlannerConfig,
    pub generation: GenerationOptions,
    pub backend: BackendKind,
    pub prompts: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            catalog: None,
            domain: String::new(),
            episodes: 0,
            seed: 0,
            weights: InterestWeights::default(),
            planner: PlannerConfig::default(),
            generation: GenerationOptions::default(),
            backend: BackendKind::Template,
            prompts: None,
            out: None,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum EpisodeStatus {
    Ok,
    Failed {
        stage: String,
        reason: String,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        raw_output: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub id: String,
    pub domain: String,
    pub status: EpisodeStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub preference: Option<Preference>,
    #[serde(default)]
    pub plan_history: Vec<PlanStep>,
    #[serde(default)]
    pub trace: Vec<IterationTrace>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stop: Option<StopReason>,
    #[serde(default)]
    pub final_candidates: usize,
    /// Planned entries the tracker never saw settled.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub uncovered: Vec<PlanStep>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub conversation: Option<Conversation>,
}

impl EpisodeRecord {
    pub fn is_ok(&self) -> bool {
        self.status == EpisodeStatus::Ok
    }

    /// Search iterations for this episode.
    pub fn searches(&self) -> usize {
        self.trace.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OutputLine {
    Header {
        schema_version: u32,
        tool: String,
        version: String,
        config: RunConfig,
    },
    Episode(EpisodeRecord),
    Summary { ok: usize, failed: usize },
}

/// The RNG for one episode: a per-episode stream of the run seed.
pub fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng
}

pub fn episode_id(seed: u64, episode: usize) -> String {
    format!("s{seed}-e{episode:05}")
}

/// Samples the target and preference for one episode.
pub fn sample_episode(catalog: &Catalog, config: &RunConfig, episode: usize) -> Result<(Preference, ChaCha8Rng), String> {
    let mut rng = episode_rng(config.seed, episode);
    let target = sample_target(catalog, &mut rng).map_err(|e| e.to_string())?;
    let pref = sample_preference(target, catalog, &mut rng, &config.weights).map_err(|e| e.to_string())?;
    Ok((pref, rng))
}

/// Shared resources for generating episodes.
pub struct Pipeline<'a> {
    pub catalog: &'a Catalog,
    pub config: &'a RunConfig,
    pub backend: &'a dyn Backend,
    pub prompts: &'a PromptSet,
    pub refiner: Option<&'a dyn StateRefiner>,
}

impl Pipeline<'_> {
    pub fn run_episode(&self, episode: usize) -> EpisodeRecord {
        let cfg = self.config;
        let mut rec = EpisodeRecord {
            episode,
            id: episode_id(cfg.seed, episode),
            domain: self.catalog.domain().to_string(),
            status: EpisodeStatus::Ok,
            preference: None,
            plan_history: Vec::new(),
            trace: Vec::new(),
            stop: None,
            final_candidates: 0,
            uncovered: Vec::new(),
            conversation: None,
        };
        let fail = |mut rec: EpisodeRecord, stage: &str, reason: String, raw_output: Option<String>| {
            log::warn!("episode {}: {stage} failed: {reason}", rec.id);
            rec.status = EpisodeStatus::Failed {
                stage: stage.to_string(),
                reason,
                raw_output,
            };
            rec
        };

        let (pref, mut rng) = match sample_episode(self.catalog, cfg, episode) {
            Ok(x) => x,
            Err(e) => return fail(rec, "sample", e, None),
        };
        rec.preference = Some(pref.clone());
        let outcome = match plan_dialogue(self.catalog, &pref, &cfg.planner) {
            Ok(o) => o,
            Err(e) => return fail(rec, "plan", e.to_string(), None),
        };
        rec.plan_history = outcome.history.clone();
        rec.trace = outcome.trace();
        rec.stop = Some(outcome.stop);
        rec.final_candidates = outcome.final_set.len();

        let Some(recommended) = crate::dialogue::sample_recommendation(&outcome.final_set, self.catalog, &mut rng) else {
            return fail(rec, "recommend", "no candidates left".into(), None);
        };
        let input = EpisodeInput {
            id: &rec.id,
            domain: self.catalog.domain(),
            seed: rng.gen(),
            preference: &pref,
            outcome: &outcome,
            recommended,
        };
        let conv = match generate(&input, self.backend, self.prompts, self.refiner, &cfg.generation) {
            Ok(c) => c,
            Err(e) => {
                let raw = e.raw_output().map(str::to_string);
                return fail(rec, "generate", e.to_string(), raw);
            }
        };
        let state = track_transcript(&conv.utterances, &conv.plan_history, &cfg.generation.tracker);
        rec.uncovered = state.remaining().to_vec();
        rec.conversation = Some(conv);
        if cfg.backend == BackendKind::Template && !rec.uncovered.is_empty() {
            let n = rec.uncovered.len();
            return fail(rec, "coverage", format!("{n} planned features never settled"), None);
        }
        rec
    }

    /// Runs every episode; results are in episode order regardless of scheduling.
    pub fn run(&self) -> Result<Vec<EpisodeRecord>, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers.max(1))
            .build()?;
        Ok(pool.install(|| {
            (0..self.config.episodes)
                .into_par_iter()
                .map(|i| self.run_episode(i))
                .collect()
        }))
    }
}

pub fn summarize(records: &[EpisodeRecord]) -> (usize, usize) {
    let ok = records.iter().filter(|r| r.is_ok()).count();
    (ok, records.len() - ok)
}

/// Writes header, episode lines and a summary line.
pub fn write_run<W: Write>(mut out: W, config: &RunConfig, records: &[EpisodeRecord]) -> std::io::Result<()> {
    let header = OutputLine::Header {
        schema_version: SCHEMA_VERSION,
        tool: TOOL.to_string(),
        version: VERSION.to_string(),
        config: config.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut out, &OutputLine::Episode(r.clone()))?;
        out.write_all(b"\n")?;
    }
    let (ok, failed) = summarize(records);
    serde_json::to_writer(&mut out, &OutputLine::Summary { ok, failed })?;
    out.write_all(b"\n")?;
    out.flush()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordFile {
    pub config: Option<RunConfig>,
    pub records: Vec<EpisodeRecord>,
}

/// Reads a record file. Header and summary lines are optional.
pub fn read_records<R: BufRead>(reader: R) -> Result<RecordFile, String> {
    let mut file = RecordFile::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<OutputLine>(&line).map_err(|e| format!("line {}: {e}", i + 1))? {
            OutputLine::Header {
                schema_version,
                config,
                ..
            } => {
                if schema_version != SCHEMA_VERSION {
                    return Err(format!("line {}: unsupported schema version {schema_version}", i + 1));
                }
                file.config = Some(config);
            }
            OutputLine::Episode(r) => file.records.push(r),
            OutputLine::Summary { .. } => {}
        }
    }
    Ok(file)
}

/// Reference corpus statistics shown next to measured values.
pub const REFERENCE_UTTERANCES: f64 = 19.7;
pub const REFERENCE_SEARCHES: f64 = 2.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub conversations: usize,
    pub failed: usize,
    pub mean_utterances: Option<f64>,
    pub mean_searches: Option<f64>,
    pub mean_generation_ms: Option<f64>,
}

/// Per-domain statistics over successful episodes; failures are only counted.
pub fn compute_stats(records: &[EpisodeRecord]) -> BTreeMap<String, DomainStats> {
    let mut groups: BTreeMap<&str, Vec<&EpisodeRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.domain).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(domain, rs)| {
            let ok: Vec<&EpisodeRecord> = rs.iter().copied().filter(|r| r.is_ok()).collect();
            let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
            let convs: Vec<&Conversation> = ok.iter().filter_map(|r| r.conversation.as_ref()).collect();
            let stats = DomainStats {
                conversations: ok.len(),
                failed: rs.len() - ok.len(),
                mean_utterances: mean(convs.iter().map(|c| c.utterances.len() as f64).collect()),
                mean_searches: mean(ok.iter().map(|r| r.searches() as f64).collect()),
                mean_generation_ms: mean(convs.iter().filter_map(|c| c.meta.elapsed_ms).map(|ms| ms as f64).collect()),
            };
            (domain.to_string(), stats)
        })
        .collect()
}

/// Renders statistics as a table with the reference values alongside.
pub fn stats_table(stats: &BTreeMap<String, DomainStats>) -> String {
    let opt = |v: Option<f64>, prec: usize| v.map_or("n/a".to_string(), |x| format!("{x:.prec$}"));
    let mut out = format!(
        "{:<24}{:>8}{:>8}{:>14}{:>14}{:>16}\n",
        "domain", "#conv", "#failed", "utt/conv", "search/conv", "gen time (s)"
    );
    for (domain, s) in stats {
        out.push_str(&format!(
            "{:<24}{:>8}{:>8}{:>14}{:>14}{:>16}\n",
            domain,
            s.conversations,
            s.failed,
            opt(s.mean_utterances, 2),
            opt(s.mean_searches, 2),
            opt(s.mean_generation_ms.map(|ms| ms / 1000.0), 1),
        ));
    }
    out.push_str(&format!(
        "{:<24}{:>8}{:>8}{:>14}{:>14}{:>16}\n",
        "reference (published)", "", "", format!("{REFERENCE_UTTERANCES:.1}"), format!("{REFERENCE_SEARCHES:.1}"), ""
    ));
    out
}
