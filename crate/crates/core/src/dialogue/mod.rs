//! Verbalizing plans into customer/seller conversations.

mod backend;
mod generate;
mod prompt;
mod remote;
mod state;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::PlanStep;
use crate::search::Preference;

pub use backend::{
    backend_generate, customer_answer, customer_opening, seller_closing, seller_question,
    seller_recommendation, Backend, BackendError, ChatMessage, CustomerTurn, GenerationParams,
    GenerationRequest, GenerationResponse, Role, SellerTurn, TemplateBackend, TurnSpec,
    CUSTOMER_THANKS,
};
pub use generate::{
    generate, generate_interactive, generate_single_pass, hinted_plan, parse_transcript,
    sample_recommendation, track_transcript, BackendRefiner, EpisodeInput, GenerationOptions,
};
pub use prompt::{
    customer_context, feature_block, history_block, render_prompt, seller_context,
    single_pass_context, tracker_context, typical_values_block, PromptContext, PromptError,
    PromptRole, PromptSet, PromptTemplate,
};
pub use remote::{
    parse_completion, HttpReply, InFlightLimiter, RemoteBackend, RemoteConfig, RetryPolicy,
    Transport, UreqTransport, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL,
};
pub use state::{refine_state, update_state, DialogueState, StateRefiner, StateUpdate, TrackerConfig};

/// Most closing turns allowed after the recommendation.
pub const MAX_CLOSING_TURNS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Customer,
    Seller,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub turn_index: usize,
}

/// A plan step with the value hints offered when asking about it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintedStep {
    pub step: PlanStep,
    pub hints: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    SinglePass,
    Interactive,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single-pass" => Ok(Strategy::SinglePass),
            "interactive" => Ok(Strategy::Interactive),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub strategy: Strategy,
    pub backend: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub model: Option<String>,
    pub seed: u64,
    pub backend_calls: u32,
    /// Requests sent including retries.
    pub attempts: u32,
    /// Summed backend latency; absent for backends that do not time themselves.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub elapsed_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub domain: String,
    pub preference: Preference,
    pub plan_history: Vec<PlanStep>,
    pub recommended_product_id: String,
    /// Index of the seller utterance carrying the recommendation.
    pub recommendation_turn: usize,
    pub utterances: Vec<Utterance>,
    pub meta: GenerationMeta,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DialogueError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("unparseable line {line_no}: {line:?}")]
    Parse { line_no: usize, line: String, raw: String },
    #[error("empty conversation")]
    Empty,
    #[error("the customer must speak first")]
    SellerFirst,
    #[error("speaker does not alternate at turn {0}")]
    NotAlternating(usize),
    #[error("turn {0} has index {1}")]
    BadTurnIndex(usize, usize),
    #[error("no seller utterance recommends the product")]
    MissingRecommendation,
    #[error("{0} turns follow the recommendation; at most 3 are allowed")]
    TooManyClosingTurns(usize),
    #[error("backend returned an empty utterance at turn {0}")]
    EmptyUtterance(usize),
    #[error("no planned feature was settled in {turns} consecutive turns; {remaining} left")]
    Deadlock { turns: usize, remaining: usize },
}

impl DialogueError {
    /// Backend output preserved for auditing, if any.
    pub fn raw_output(&self) -> Option<&str> {
        match self {
            DialogueError::Parse { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

/// Checks indexing, alternation, the customer opening and the closing length.
pub fn validate_utterances(utterances: &[Utterance], recommendation_turn: usize) -> Result<(), DialogueError> {
    let first = utterances.first().ok_or(DialogueError::Empty)?;
    if first.speaker != Speaker::Customer {
        return Err(DialogueError::SellerFirst);
    }
    for (i, u) in utterances.iter().enumerate() {
        if u.turn_index != i {
            return Err(DialogueError::BadTurnIndex(i, u.turn_index));
        }
        if i > 0 && u.speaker == utterances[i - 1].speaker {
            return Err(DialogueError::NotAlternating(i));
        }
    }
    match utterances.get(recommendation_turn) {
        Some(u) if u.speaker == Speaker::Seller => {}
        _ => return Err(DialogueError::MissingRecommendation),
    }
    let closing = utterances.len() - 1 - recommendation_turn;
    if closing > MAX_CLOSING_TURNS {
        return Err(DialogueError::TooManyClosingTurns(closing));
    }
    Ok(())
}

impl Conversation {
    pub fn validate(&self) -> Result<(), DialogueError> {
        validate_utterances(&self.utterances, self.recommendation_turn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utts(speakers: &[Speaker]) -> Vec<Utterance> {
        speakers
            .iter()
            .enumerate()
            .map(|(i, &speaker)| Utterance {
                speaker,
                text: "x".into(),
                turn_index: i,
            })
            .collect()
    }

    #[test]
    fn validation() {
        use Speaker::*;
        assert_eq!(validate_utterances(&[], 0), Err(DialogueError::Empty));
        assert_eq!(validate_utterances(&utts(&[Seller]), 0), Err(DialogueError::SellerFirst));
        assert_eq!(validate_utterances(&utts(&[Customer, Customer]), 1), Err(DialogueError::NotAlternating(1)));
        assert_eq!(validate_utterances(&utts(&[Customer, Seller]), 0), Err(DialogueError::MissingRecommendation));
        validate_utterances(&utts(&[Customer, Seller, Customer, Seller]), 1).unwrap();
        assert_eq!(
            validate_utterances(&utts(&[Customer, Seller, Customer, Seller, Customer, Seller]), 1),
            Err(DialogueError::TooManyClosingTurns(4))
        );
    }

    #[test]
    fn strategy_parses() {
        assert_eq!("interactive".parse::<Strategy>().unwrap(), Strategy::Interactive);
        assert!("both".parse::<Strategy>().is_err());
    }
}
