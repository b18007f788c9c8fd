//! Single-pass and interactive conversation generation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::backend::{
    backend_generate, Backend, ChatMessage, CustomerTurn, GenerationParams, GenerationRequest,
    SellerTurn, TurnSpec,
};
use super::prompt::{
    customer_context, seller_context, single_pass_context, tracker_context, PromptSet, PromptTemplate,
};
use super::state::{refine_state, DialogueState, StateRefiner, TrackerConfig};
use super::{
    validate_utterances, Conversation, DialogueError, GenerationMeta, HintedStep, Speaker, Strategy,
    Utterance,
};
use crate::catalog::{Catalog, Product};
use crate::planner::{PlanOutcome, PlanStep};
use crate::search::{Interest, Preference, ProductSet};
use crate::text::{find_runs, fold, tokens};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOptions {
    pub strategy: Strategy,
    /// Most plan aspects a seller question may cover.
    pub max_aspects_per_question: usize,
    /// Consecutive turns without progress before an interactive episode aborts.
    pub deadlock_turns: usize,
    /// Hard cap on interactive conversation length.
    pub max_turns: usize,
    pub single_pass_max_length: usize,
    pub turn_max_length: usize,
    pub tracker: TrackerConfig,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        GenerationOptions {
            strategy: Strategy::SinglePass,
            max_aspects_per_question: 2,
            deadlock_turns: 4,
            max_turns: 200,
            single_pass_max_length: 4096,
            turn_max_length: 512,
            tracker: TrackerConfig::default(),
        }
    }
}

/// Everything one episode's verbalization needs.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeInput<'a> {
    pub id: &'a str,
    pub domain: &'a str,
    pub seed: u64,
    pub preference: &'a Preference,
    pub outcome: &'a PlanOutcome,
    pub recommended: &'a Product,
}

/// The plan history with the hints of the iteration that planned each step.
pub fn hinted_plan(outcome: &PlanOutcome) -> Vec<HintedStep> {
    outcome
        .iterations
        .iter()
        .flat_map(|it| {
            it.steps.iter().zip(&it.hints).map(|(step, hints)| HintedStep {
                step: step.clone(),
                hints: hints.clone(),
            })
        })
        .collect()
}

/// Uniformly picks the product to recommend from the final candidates.
pub fn sample_recommendation<'a, R: Rng + ?Sized>(set: &ProductSet, catalog: &'a Catalog, rng: &mut R) -> Option<&'a Product> {
    set.indices().choose(rng).map(|&i| catalog.product(i))
}

/// Parses `customer: ...` / `seller: ...` lines. Blank lines are skipped;
/// any other line fails the parse.
pub fn parse_transcript(raw: &str) -> Result<Vec<Utterance>, DialogueError> {
    let mut out: Vec<Utterance> = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fail = || DialogueError::Parse {
            line_no: i + 1,
            line: line.to_string(),
            raw: raw.to_string(),
        };
        let (tag, text) = line.split_once(':').ok_or_else(fail)?;
        let speaker = match tag.trim().to_lowercase().as_str() {
            "customer" => Speaker::Customer,
            "seller" => Speaker::Seller,
            _ => return Err(fail()),
        };
        let text = text.trim();
        if text.is_empty() {
            return Err(fail());
        }
        if out.is_empty() && speaker != Speaker::Customer {
            return Err(DialogueError::SellerFirst);
        }
        if out.last().is_some_and(|u| u.speaker == speaker) {
            return Err(DialogueError::NotAlternating(out.len()));
        }
        out.push(Utterance {
            speaker,
            text: text.to_string(),
            turn_index: out.len(),
        });
    }
    if out.is_empty() {
        return Err(DialogueError::Empty);
    }
    Ok(out)
}

/// Runs the rule tracker over a whole transcript.
pub fn track_transcript(utterances: &[Utterance], plan_history: &[PlanStep], cfg: &TrackerConfig) -> DialogueState {
    let mut state = DialogueState::new(plan_history);
    for u in utterances {
        state.update(u, cfg);
    }
    state
}

/// The last seller utterance containing the product title.
fn locate_recommendation(utterances: &[Utterance], title: &str) -> Option<usize> {
    let needle = tokens(title);
    utterances
        .iter()
        .rposition(|u| u.speaker == Speaker::Seller && !find_runs(&tokens(&u.text), &needle).is_empty())
}

struct Recorder<'a> {
    backend: &'a dyn Backend,
    base_seed: u64,
    calls: u32,
    attempts: u32,
    elapsed_ms: Option<u64>,
    model: Option<String>,
}

impl<'a> Recorder<'a> {
    fn new(backend: &'a dyn Backend, seed: u64) -> Self {
        Recorder {
            backend,
            base_seed: seed,
            calls: 0,
            attempts: 0,
            elapsed_ms: None,
            model: backend.model().map(str::to_string),
        }
    }

    fn call(&mut self, prompt: String, turn: TurnSpec, max_length: usize) -> Result<String, DialogueError> {
        let request = GenerationRequest {
            messages: vec![ChatMessage::user(prompt)],
            params: GenerationParams {
                seed: self.base_seed.wrapping_add(self.calls as u64),
                max_length,
            },
            turn,
        };
        let resp = backend_generate(self.backend, &request)?;
        self.calls += 1;
        self.attempts += resp.attempts;
        if let Some(ms) = resp.latency_ms {
            self.elapsed_ms = Some(self.elapsed_ms.unwrap_or(0) + ms);
        }
        if resp.model.is_some() {
            self.model = resp.model;
        }
        Ok(resp.text)
    }

    fn meta(&self, strategy: Strategy) -> GenerationMeta {
        GenerationMeta {
            strategy,
            backend: self.backend.name().to_string(),
            model: self.model.clone(),
            seed: self.base_seed,
            backend_calls: self.calls,
            attempts: self.attempts,
            elapsed_ms: self.elapsed_ms,
        }
    }
}

fn conversation(ep: &EpisodeInput<'_>, utterances: Vec<Utterance>, recommendation_turn: usize, meta: GenerationMeta) -> Result<Conversation, DialogueError> {
    validate_utterances(&utterances, recommendation_turn)?;
    Ok(Conversation {
        id: ep.id.to_string(),
        domain: ep.domain.to_string(),
        preference: ep.preference.clone(),
        plan_history: ep.outcome.history.clone(),
        recommended_product_id: ep.recommended.id.clone(),
        recommendation_turn,
        utterances,
        meta,
    })
}

/// Verbalizes the whole plan with one backend call.
pub fn generate_single_pass(
    ep: &EpisodeInput<'_>,
    backend: &dyn Backend,
    prompts: &PromptSet,
    opts: &GenerationOptions,
) -> Result<Conversation, DialogueError> {
    let plan = hinted_plan(ep.outcome);
    let category = &ep.preference.category;
    let prompt = prompts
        .single_pass
        .render(&single_pass_context(category, &plan, &ep.recommended.title))?;
    let turn = TurnSpec::SinglePass {
        category: category.clone(),
        plan,
        recommended_title: ep.recommended.title.clone(),
        max_aspects: opts.max_aspects_per_question,
    };
    let mut rec = Recorder::new(backend, ep.seed);
    let raw = rec.call(prompt, turn, opts.single_pass_max_length)?;
    let utterances = parse_transcript(&raw)?;
    let turn = locate_recommendation(&utterances, &ep.recommended.title).ok_or(DialogueError::MissingRecommendation)?;
    conversation(ep, utterances, turn, rec.meta(Strategy::SinglePass))
}

/// Drops a leading speaker tag and folds the reply onto one line.
fn clean_utterance(text: &str) -> String {
    let t = text.trim();
    let t = ["customer:", "seller:"]
        .iter()
        .find_map(|tag| {
            t.get(..tag.len())
                .filter(|head| head.eq_ignore_ascii_case(tag))
                .map(|_| &t[tag.len()..])
        })
        .unwrap_or(t);
    t.split_whitespace().collect::<Vec<_>>().join(" ")
}

struct Dialogue<'a, 'b> {
    rec: Recorder<'a>,
    prompts: &'b PromptSet,
    category: String,
    utterances: Vec<Utterance>,
    max_length: usize,
}

impl Dialogue<'_, '_> {
    fn say(&mut self, speaker: Speaker, template: &PromptTemplate, ctx: super::PromptContext, turn: TurnSpec) -> Result<&Utterance, DialogueError> {
        let prompt = template.render(&ctx)?;
        let text = clean_utterance(&self.rec.call(prompt, turn, self.max_length)?);
        let turn_index = self.utterances.len();
        if text.is_empty() {
            return Err(DialogueError::EmptyUtterance(turn_index));
        }
        self.utterances.push(Utterance { speaker, text, turn_index });
        Ok(self.utterances.last().expect("just pushed"))
    }

    fn seller(&mut self, remaining: &[HintedStep], recommend: Option<&str>, closing: bool, turn: SellerTurn) -> Result<(), DialogueError> {
        let ctx = seller_context(&self.category, remaining, recommend, closing, &self.utterances);
        self.say(Speaker::Seller, &self.prompts.seller, ctx, TurnSpec::Seller(turn))?;
        Ok(())
    }

    fn customer(&mut self, opening: bool, remaining: &[PlanStep], closing: bool, turn: CustomerTurn) -> Result<Utterance, DialogueError> {
        let ctx = customer_context(&self.category, opening, remaining, closing, &self.utterances);
        Ok(self.say(Speaker::Customer, &self.prompts.customer, ctx, TurnSpec::Customer(turn))?.clone())
    }
}

/// Alternates seller and customer turns, tracking which planned features
/// the customer has settled.
pub fn generate_interactive(
    ep: &EpisodeInput<'_>,
    backend: &dyn Backend,
    prompts: &PromptSet,
    refiner: Option<&dyn StateRefiner>,
    opts: &GenerationOptions,
) -> Result<Conversation, DialogueError> {
    let category = ep.preference.category.clone();
    let mut d = Dialogue {
        rec: Recorder::new(backend, ep.seed),
        prompts,
        category: category.clone(),
        utterances: Vec::new(),
        max_length: opts.turn_max_length,
    };
    let hinted = hinted_plan(ep.outcome);
    let hints_for = |step: &PlanStep| {
        hinted
            .iter()
            .find(|h| h.step == *step)
            .map(|h| h.hints.clone())
            .unwrap_or_default()
    };

    let mut state = DialogueState::new(&[]);
    d.customer(true, &[], false, CustomerTurn::Open { category: category.clone() })?;

    let mut idle = 0;
    for iteration in &ep.outcome.iterations {
        state.extend(&iteration.steps);
        while !state.is_complete() {
            if d.utterances.len() + 2 > opts.max_turns {
                return Err(DialogueError::Deadlock {
                    turns: idle,
                    remaining: state.remaining().len(),
                });
            }
            let remaining: Vec<HintedStep> = state
                .remaining()
                .iter()
                .map(|s| HintedStep {
                    step: s.clone(),
                    hints: hints_for(s),
                })
                .collect();
            d.seller(
                &remaining,
                None,
                false,
                SellerTurn::Ask {
                    remaining: remaining.clone(),
                    max_aspects: opts.max_aspects_per_question,
                },
            )?;
            idle += 1;
            let last_seller = d.utterances.last().expect("seller spoke").text.clone();
            let steps = state.remaining().to_vec();
            let answer = d.customer(
                false,
                &steps,
                false,
                CustomerTurn::Answer {
                    remaining: steps.clone(),
                    last_seller,
                },
            )?;
            let mut moved = state.update(&answer, &opts.tracker).moved.len();
            if let Some(r) = refiner {
                moved += refine_state(&mut state, &answer, r).len();
            }
            if moved > 0 {
                idle = 0;
            } else {
                idle += 1;
            }
            if idle >= opts.deadlock_turns {
                return Err(DialogueError::Deadlock {
                    turns: idle,
                    remaining: state.remaining().len(),
                });
            }
        }
    }

    let title = ep.recommended.title.clone();
    d.seller(&[], Some(&title), false, SellerTurn::Recommend { title: title.clone() })?;
    let recommendation_turn = d.utterances.len() - 1;
    d.customer(false, &[], true, CustomerTurn::Thank)?;
    d.seller(&[], None, true, SellerTurn::Close { category })?;
    let meta = d.rec.meta(Strategy::Interactive);
    conversation(ep, d.utterances, recommendation_turn, meta)
}

/// Dispatches on `opts.strategy`.
pub fn generate(
    ep: &EpisodeInput<'_>,
    backend: &dyn Backend,
    prompts: &PromptSet,
    refiner: Option<&dyn StateRefiner>,
    opts: &GenerationOptions,
) -> Result<Conversation, DialogueError> {
    match opts.strategy {
        Strategy::SinglePass => generate_single_pass(ep, backend, prompts, opts),
        Strategy::Interactive => generate_interactive(ep, backend, prompts, refiner, opts),
    }
}

/// Asks a backend which remaining features an utterance settles, using the
/// state-tracker template. Replies that are not valid JSON propose nothing.
pub struct BackendRefiner<'a> {
    pub backend: &'a dyn Backend,
    pub template: &'a PromptTemplate,
    pub max_length: usize,
}

impl BackendRefiner<'_> {
    fn parse(reply: &str, state: &DialogueState) -> Vec<PlanStep> {
        let Ok(v) = serde_json::from_str::<Value>(reply.trim()) else {
            log::debug!("tracker reply is not JSON: {reply:?}");
            return Vec::new();
        };
        let mut picked = Vec::new();
        let pairs = |key: &str, interest: Interest| -> Vec<(String, String, Interest)> {
            v.get(key)
                .and_then(Value::as_object)
                .map(|m| {
                    m.iter()
                        .filter_map(|(a, val)| val.as_str().map(|s| (a.clone(), s.to_string(), interest)))
                        .collect()
                })
                .unwrap_or_default()
        };
        let mut claims = pairs("mentioned_positive_features", Interest::Wanted);
        claims.extend(pairs("mentioned_negative_features", Interest::Unwanted));
        if let Some(list) = v.get("mentioned_optional_features").and_then(Value::as_array) {
            claims.extend(
                list.iter()
                    .filter_map(Value::as_str)
                    .map(|a| (a.to_string(), String::new(), Interest::Optional)),
            );
        }
        for (aspect, value, interest) in claims {
            if let Some(s) = state.remaining().iter().find(|s| {
                s.interest == interest
                    && fold(&s.aspect) == fold(&aspect)
                    && (interest == Interest::Optional || fold(&s.value) == fold(&value))
            }) {
                picked.push(s.clone());
            }
        }
        picked
    }
}

impl StateRefiner for BackendRefiner<'_> {
    fn propose(&self, state: &DialogueState, utterance: &Utterance) -> Vec<PlanStep> {
        if utterance.speaker != Speaker::Customer || state.is_complete() {
            return Vec::new();
        }
        let prompt = match self.template.render(&tracker_context(state, utterance)) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("tracker prompt failed to render: {e}");
                return Vec::new();
            }
        };
        let request = GenerationRequest {
            messages: vec![ChatMessage::user(prompt)],
            params: GenerationParams {
                seed: utterance.turn_index as u64,
                max_length: self.max_length,
            },
            turn: TurnSpec::Tracker,
        };
        match backend_generate(self.backend, &request) {
            Ok(r) => Self::parse(&r.text, state),
            Err(e) => {
                log::warn!("tracker call failed: {e}");
                Vec::new()
            }
        }
    }
}
