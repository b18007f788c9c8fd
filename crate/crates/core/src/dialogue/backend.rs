//! Text-generation backends.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::HintedStep;
use crate::planner::PlanStep;
use crate::search::Interest;
use crate::text::{find_runs, tokens};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("empty message list")]
    EmptyMessages,
    #[error("environment variable {0} is not set")]
    MissingCredential(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited (HTTP 429)")]
    RateLimited,
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<BackendError> },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::RateLimited | BackendError::Timeout => true,
            BackendError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub seed: u64,
    pub max_length: usize,
}

/// The structured intent behind a request. Rule-based backends realize text
/// from it; model backends read only the messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TurnSpec {
    SinglePass {
        category: String,
        plan: Vec<HintedStep>,
        recommended_title: String,
        max_aspects: usize,
    },
    Seller(SellerTurn),
    Customer(CustomerTurn),
    /// A state-tracker refinement call.
    Tracker,
    /// No structured intent; only the messages matter.
    Free,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SellerTurn {
    Ask { remaining: Vec<HintedStep>, max_aspects: usize },
    Recommend { title: String },
    Close { category: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CustomerTurn {
    Open { category: String },
    /// Answer whichever remaining entries the seller's last utterance asked about.
    Answer { remaining: Vec<PlanStep>, last_seller: String },
    Thank,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRequest {
    pub messages: Vec<ChatMessage>,
    pub params: GenerationParams,
    pub turn: TurnSpec,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationResponse {
    pub text: String,
    /// Requests sent, including retries.
    pub attempts: u32,
    pub model: Option<String>,
    /// Wall-clock time; recorded by network backends only.
    pub latency_ms: Option<u64>,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn model(&self) -> Option<&str> {
        None
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError>;
}

/// Checks the request and dispatches it to `backend`.
pub fn backend_generate(backend: &dyn Backend, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
    if request.messages.is_empty() {
        return Err(BackendError::EmptyMessages);
    }
    backend.generate(request)
}

/// Deterministic rule-based realization of each turn.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateBackend;

fn join_or(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} or {}", init.join(", "), last),
    }
}

fn hint_sentence(hints: &[String]) -> String {
    match hints.len() {
        0 => String::new(),
        1 => format!(" A popular one is {}.", hints[0]),
        _ => format!(" Popular ones are {}.", join_or(hints)),
    }
}

/// A seller question about up to `max_aspects` of `steps`.
pub fn seller_question(steps: &[HintedStep], max_aspects: usize) -> String {
    let asked = &steps[..steps.len().min(max_aspects.max(1))];
    asked
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let lead = if i == 0 {
                format!("Do you have a preference for {}?", h.step.aspect)
            } else {
                format!("And what about {}?", h.step.aspect)
            };
            lead + &hint_sentence(&h.hints)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn customer_answer(step: &PlanStep) -> String {
    match step.interest {
        Interest::Wanted => format!("I'd like {} to be {}.", step.aspect, step.value),
        Interest::Unwanted => format!("I don't want {} for {}.", step.value, step.aspect),
        Interest::Optional => format!("I have no preference for {}.", step.aspect),
    }
}

pub fn customer_opening(category: &str) -> String {
    format!("Hi, I'm looking to buy {category}.")
}

pub fn seller_recommendation(title: &str) -> String {
    format!("Based on what you've told me, I'd recommend this one: {title}.")
}

pub const CUSTOMER_THANKS: &str = "That sounds great, thank you for your help!";

pub fn seller_closing(category: &str) -> String {
    format!("You're welcome! Enjoy your new {category}.")
}

const CUSTOMER_CONFUSED: &str = "Sorry, could you say that again?";

/// Entries of `remaining` whose aspect appears in `seller_text`, in order.
fn asked_about<'a>(remaining: &'a [PlanStep], seller_text: &str) -> Vec<&'a PlanStep> {
    let words = tokens(seller_text);
    remaining
        .iter()
        .filter(|s| !find_runs(&words, &tokens(&s.aspect)).is_empty())
        .collect()
}

fn single_pass_transcript(category: &str, plan: &[HintedStep], title: &str, max_aspects: usize) -> String {
    let mut lines = vec![format!("customer: {}", customer_opening(category))];
    for chunk in plan.chunks(max_aspects.max(1)) {
        lines.push(format!("seller: {}", seller_question(chunk, max_aspects)));
        let answer = chunk
            .iter()
            .map(|h| customer_answer(&h.step))
            .collect::<Vec<_>>()
            .join(" ");
        lines.push(format!("customer: {answer}"));
    }
    lines.push(format!("seller: {}", seller_recommendation(title)));
    lines.push(format!("customer: {CUSTOMER_THANKS}"));
    lines.push(format!("seller: {}", seller_closing(category)));
    lines.join("\n")
}

impl TemplateBackend {
    pub fn realize(turn: &TurnSpec) -> String {
        match turn {
            TurnSpec::SinglePass {
                category,
                plan,
                recommended_title,
                max_aspects,
            } => single_pass_transcript(category, plan, recommended_title, *max_aspects),
            TurnSpec::Seller(SellerTurn::Ask { remaining, max_aspects }) => seller_question(remaining, *max_aspects),
            TurnSpec::Seller(SellerTurn::Recommend { title }) => seller_recommendation(title),
            TurnSpec::Seller(SellerTurn::Close { category }) => seller_closing(category),
            TurnSpec::Customer(CustomerTurn::Open { category }) => customer_opening(category),
            TurnSpec::Customer(CustomerTurn::Answer { remaining, last_seller }) => {
                let asked = asked_about(remaining, last_seller);
                if asked.is_empty() {
                    CUSTOMER_CONFUSED.to_string()
                } else {
                    asked.into_iter().map(customer_answer).collect::<Vec<_>>().join(" ")
                }
            }
            TurnSpec::Customer(CustomerTurn::Thank) => CUSTOMER_THANKS.to_string(),
            TurnSpec::Tracker | TurnSpec::Free => "{}".to_string(),
        }
    }
}

impl Backend for TemplateBackend {
    fn name(&self) -> &str {
        "template"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        Ok(GenerationResponse {
            text: Self::realize(&request.turn),
            attempts: 1,
            model: None,
            latency_ms: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(turn: TurnSpec) -> GenerationRequest {
        GenerationRequest {
            messages: vec![ChatMessage::user("prompt")],
            params: GenerationParams { seed: 0, max_length: 256 },
            turn,
        }
    }

    #[test]
    fn seller_question_with_hints() {
        let turn = TurnSpec::Seller(SellerTurn::Ask {
            remaining: vec![HintedStep {
                step: PlanStep::optional("Color"),
                hints: vec!["blue".into(), "red".into(), "green".into()],
            }],
            max_aspects: 2,
        });
        let out = backend_generate(&TemplateBackend, &request(turn)).unwrap();
        assert_eq!(out.text, "Do you have a preference for Color? Popular ones are blue, red or green.");
        assert_eq!(out.latency_ms, None);
    }

    #[test]
    fn seller_asks_at_most_the_cap() {
        let steps: Vec<HintedStep> = ["a", "b", "c"]
            .iter()
            .map(|a| HintedStep {
                step: PlanStep::optional(a),
                hints: vec![],
            })
            .collect();
        assert_eq!(seller_question(&steps, 2), "Do you have a preference for a? And what about b?");
        assert_eq!(seller_question(&steps, 1), "Do you have a preference for a?");
    }

    #[test]
    fn empty_messages_rejected() {
        let mut r = request(TurnSpec::Free);
        r.messages.clear();
        assert_eq!(backend_generate(&TemplateBackend, &r), Err(BackendError::EmptyMessages));
    }

    #[test]
    fn customer_answers_only_what_was_asked() {
        let remaining = vec![PlanStep::wanted("color", "red"), PlanStep::unwanted("brand", "Acme"), PlanStep::optional("size")];
        let turn = TurnSpec::Customer(CustomerTurn::Answer {
            remaining,
            last_seller: "Do you have a preference for size? And what about color?".into(),
        });
        assert_eq!(TemplateBackend::realize(&turn), "I'd like color to be red. I have no preference for size.");
    }

    #[test]
    fn retry_classification() {
        assert!(BackendError::RateLimited.is_retryable());
        assert!(BackendError::Http { status: 503, body: String::new() }.is_retryable());
        assert!(!BackendError::Http { status: 400, body: String::new() }.is_retryable());
        assert!(!BackendError::MissingCredential("X".into()).is_retryable());
    }
}
