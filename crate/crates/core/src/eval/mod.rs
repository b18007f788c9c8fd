//! Downstream evaluation: query extraction from conversations and product
//! ranking with BM25.

mod bm25;
mod metrics;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{track_transcript, Conversation, TrackerConfig};
use crate::planner::PlanStep;
use crate::search::{Interest, Preference};
use crate::text::{find_runs, fold, tokens};

pub use bm25::{
    idf, index_products, product_document, query_terms, rank, term_score, Bm25Index, Bm25Params,
    RankedItem, RankedResult,
};
pub use metrics::{
    exact_f1, query_metrics, ranking_metrics, reciprocal_rank, rouge_l, rouge_n, QueryReport,
    RankingReport,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("cannot index an empty catalog")]
    EmptyCatalog,
    #[error("no examples to evaluate")]
    EmptyInput,
    #[error("k must be positive")]
    BadK,
    #[error("aspect {0:?} appears twice in the query")]
    DuplicateAspect(String),
    #[error("episode {episode}: no known category in the opening utterance")]
    NoCategory { episode: String },
    #[error("episode {episode}: {reason}")]
    Extractor { episode: String, reason: String },
}

/// Category plus wanted, unwanted and optional features.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredQuery {
    pub category: String,
    pub wanted: Vec<(String, String)>,
    pub unwanted: Vec<(String, String)>,
    pub optional: Vec<String>,
}

impl StructuredQuery {
    pub fn from_steps<'a>(category: &str, steps: impl IntoIterator<Item = &'a PlanStep>) -> Result<Self, EvalError> {
        let mut q = StructuredQuery {
            category: category.to_string(),
            ..Default::default()
        };
        let mut seen = HashSet::new();
        for s in steps {
            if !seen.insert(fold(&s.aspect)) {
                return Err(EvalError::DuplicateAspect(s.aspect.clone()));
            }
            match s.interest {
                Interest::Wanted => q.wanted.push((s.aspect.clone(), s.value.clone())),
                Interest::Unwanted => q.unwanted.push((s.aspect.clone(), s.value.clone())),
                Interest::Optional => q.optional.push(s.aspect.clone()),
            }
        }
        Ok(q)
    }

    pub fn from_preference(pref: &Preference) -> Self {
        Self::from_steps(&pref.category, &pref.entries).expect("preferences have unique aspects")
    }

    /// `category ; + aspect: value ; - aspect: value ; ? aspect`, each group
    /// sorted, so equal queries serialize identically.
    pub fn serialize(&self) -> String {
        let sorted = |mut v: Vec<String>| {
            v.sort_by_key(|s| fold(s));
            v
        };
        let mut parts = vec![self.category.clone()];
        parts.extend(sorted(self.wanted.iter().map(|(a, v)| format!("+ {a}: {v}")).collect()));
        parts.extend(sorted(self.unwanted.iter().map(|(a, v)| format!("- {a}: {v}")).collect()));
        parts.extend(sorted(self.optional.iter().map(|a| format!("? {a}")).collect()));
        parts.join(" ; ")
    }

    /// Positive ranking text: category, wanted pairs, optional aspect names.
    pub fn flatten(&self) -> String {
        let mut parts = vec![self.category.clone()];
        parts.extend(self.wanted.iter().map(|(a, v)| format!("{a} {v}")));
        parts.extend(self.optional.iter().cloned());
        parts.join(" ")
    }
}

/// A ranking query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    Text(String),
    Structured(StructuredQuery),
}

impl Query {
    /// The string scored against the gold query by exact-F1 and ROUGE.
    pub fn as_prediction(&self) -> String {
        match self {
            Query::Text(t) => t.clone(),
            Query::Structured(q) => q.serialize(),
        }
    }
}

/// All utterance texts in order, joined with single spaces.
pub fn baseline_query(conversation: &Conversation) -> String {
    conversation
        .utterances
        .iter()
        .map(|u| u.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

pub trait QueryExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn extract(&self, conversation: &Conversation) -> Result<Query, EvalError>;
}

/// The full conversation as free text.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineExtractor;

impl QueryExtractor for BaselineExtractor {
    fn name(&self) -> &str {
        "baseline"
    }

    fn extract(&self, conversation: &Conversation) -> Result<Query, EvalError> {
        Ok(Query::Text(baseline_query(conversation)))
    }
}

/// Runs the dialogue-state tracker over the transcript; the category is the
/// longest known category named in the opening utterance.
#[derive(Debug, Clone)]
pub struct ReferenceExtractor {
    categories: Vec<(Vec<String>, String)>,
    tracker: TrackerConfig,
}

impl ReferenceExtractor {
    pub fn new(categories: impl IntoIterator<Item = impl Into<String>>, tracker: TrackerConfig) -> Self {
        let mut categories: Vec<(Vec<String>, String)> = categories
            .into_iter()
            .map(Into::into)
            .map(|c: String| (tokens(&c), c))
            .filter(|(t, _)| !t.is_empty())
            .collect();
        categories.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.1.cmp(&b.1)));
        ReferenceExtractor { categories, tracker }
    }

    pub fn extract_structured(&self, conversation: &Conversation) -> Result<StructuredQuery, EvalError> {
        let opening = conversation.utterances.first().map(|u| tokens(&u.text)).unwrap_or_default();
        let category = self
            .categories
            .iter()
            .find(|(t, _)| !find_runs(&opening, t).is_empty())
            .map(|(_, c)| c.clone())
            .ok_or_else(|| EvalError::NoCategory {
                episode: conversation.id.clone(),
            })?;
        let state = track_transcript(&conversation.utterances, &conversation.plan_history, &self.tracker);
        StructuredQuery::from_steps(&category, state.mentioned()).map_err(|e| EvalError::Extractor {
            episode: conversation.id.clone(),
            reason: e.to_string(),
        })
    }
}

impl QueryExtractor for ReferenceExtractor {
    fn name(&self) -> &str {
        "reference"
    }

    fn extract(&self, conversation: &Conversation) -> Result<Query, EvalError> {
        self.extract_structured(conversation).map(Query::Structured)
    }
}

pub fn extract_query(conversation: &Conversation, extractor: &dyn QueryExtractor) -> Result<Query, EvalError> {
    extractor.extract(conversation)
}

/// The query a perfect extractor would produce: everything the plan covered.
pub fn gold_query(conversation: &Conversation) -> StructuredQuery {
    StructuredQuery::from_steps(&conversation.preference.category, &conversation.plan_history)
        .expect("plan histories have unique aspects")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub extractor: String,
    pub ranking: RankingReport,
    pub query: QueryReport,
}

impl MetricReport {
    /// A fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut out = format!("extractor: {}  (n = {})\n", self.extractor, self.ranking.n_examples);
        out.push_str(&format!("{:<10}{:>8.4}\n", "MRR", self.ranking.mrr));
        for (k, h) in &self.ranking.hit_at {
            out.push_str(&format!("{:<10}{:>8.4}\n", format!("Hit@{k}"), h));
        }
        out.push_str(&format!("{:<10}{:>8.4}\n", "F1", self.query.exact_f1));
        out.push_str(&format!("{:<10}{:>8.4}\n", "ROUGE-1", self.query.rouge_1));
        out.push_str(&format!("{:<10}{:>8.4}\n", "ROUGE-2", self.query.rouge_2));
        out.push_str(&format!("{:<10}{:>8.4}\n", "ROUGE-L", self.query.rouge_l));
        out
    }
}

/// Extracts, ranks and scores every conversation.
pub fn evaluate_conversations(
    conversations: &[Conversation],
    extractor: &dyn QueryExtractor,
    index: &Bm25Index,
    ks: &[usize],
) -> Result<MetricReport, EvalError> {
    if conversations.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if ks.contains(&0) {
        return Err(EvalError::BadK);
    }
    // rank everything so MRR does not depend on the cutoffs requested
    let depth = index.len();
    let mut rankings = Vec::with_capacity(conversations.len());
    let mut pairs = Vec::with_capacity(conversations.len());
    for conv in conversations {
        let q = extractor.extract(conv)?;
        rankings.push((index.rank(&q, depth)?, conv.preference.target_id.clone()));
        pairs.push((q.as_prediction(), gold_query(conv).serialize()));
    }
    Ok(MetricReport {
        extractor: extractor.name().to_string(),
        ranking: ranking_metrics(&rankings, ks)?,
        query: query_metrics(&pairs)?,
    })
}
