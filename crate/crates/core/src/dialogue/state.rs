//! Dialogue-state tracking over planned features.
//!
//! The rule layer moves a planned entry from `remaining` to `mentioned` when a
//! customer utterance names it: a wanted or unwanted entry needs its value
//! (and its aspect as well when another planned entry shares that value); an
//! optional entry needs its aspect plus a hedge phrase. Seller utterances never
//! move anything, since sellers routinely name values the customer has not
//! chosen. An optional [`StateRefiner`] may move further entries after the
//! rules run, under the same move-only contract.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Speaker, Utterance};
use crate::planner::PlanStep;
use crate::search::Interest;
use crate::text::{find_runs, tokens};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Aspect (case-insensitive) to alternative phrasings.
    pub aliases: BTreeMap<String, Vec<String>>,
    /// Phrases marking indifference toward an aspect.
    pub hedges: Vec<String>,
    /// Ignore turn 0, where the customer only names the category.
    pub skip_opening: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        let hedges = [
            "don't care",
            "do not care",
            "optional",
            "no preference",
            "no specific preference",
            "no particular preference",
            "flexible",
            "doesn't matter",
            "does not matter",
            "not important",
            "not mandatory",
        ];
        let aliases = [
            ("customer review", vec!["customer reviews", "reviews", "rating"]),
            ("price", vec!["budget", "price range"]),
        ];
        TrackerConfig {
            aliases: aliases
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.into_iter().map(String::from).collect()))
                .collect(),
            hedges: hedges.into_iter().map(String::from).collect(),
            skip_opening: true,
        }
    }
}

impl TrackerConfig {
    fn aspect_forms(&self, aspect: &str) -> Vec<Vec<String>> {
        let mut forms = vec![tokens(aspect)];
        let key = aspect.to_lowercase();
        for (k, alts) in &self.aliases {
            if k.to_lowercase() == key {
                forms.extend(alts.iter().map(|a| tokens(a)));
            }
        }
        forms.retain(|f| !f.is_empty());
        forms
    }
}

/// Remaining and mentioned planned entries. Together they always equal the
/// plan history seen so far; `mentioned` only grows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    remaining: Vec<PlanStep>,
    mentioned: Vec<PlanStep>,
}

/// What one utterance changed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StateUpdate {
    pub moved: Vec<PlanStep>,
    /// Entries whose value appeared but could not be attributed.
    pub ambiguous: Vec<PlanStep>,
}

type Span = (usize, usize);

fn spans(haystack: &[String], needle: &[String]) -> Vec<Span> {
    find_runs(haystack, needle)
        .into_iter()
        .map(|s| (s, s + needle.len()))
        .collect()
}

fn inside(inner: Span, outer: Span) -> bool {
    outer.0 <= inner.0 && inner.1 <= outer.1 && (outer.1 - outer.0) > (inner.1 - inner.0)
}

fn overlaps(a: Span, b: Span) -> bool {
    a.0 < b.1 && b.0 < a.1
}

impl DialogueState {
    pub fn new(plan_history: &[PlanStep]) -> Self {
        DialogueState {
            remaining: plan_history.to_vec(),
            mentioned: Vec::new(),
        }
    }

    /// Adds newly planned entries to `remaining`.
    pub fn extend(&mut self, steps: &[PlanStep]) {
        self.remaining.extend_from_slice(steps);
    }

    pub fn remaining(&self) -> &[PlanStep] {
        &self.remaining
    }

    pub fn mentioned(&self) -> &[PlanStep] {
        &self.mentioned
    }

    pub fn remaining_by(&self, interest: Interest) -> impl Iterator<Item = &PlanStep> {
        self.remaining.iter().filter(move |s| s.interest == interest)
    }

    pub fn mentioned_by(&self, interest: Interest) -> impl Iterator<Item = &PlanStep> {
        self.mentioned.iter().filter(move |s| s.interest == interest)
    }

    pub fn is_complete(&self) -> bool {
        self.remaining.is_empty()
    }

    /// Moves `step` from remaining to mentioned. Returns false if it was not remaining.
    pub fn mark_mentioned(&mut self, step: &PlanStep) -> bool {
        match self.remaining.iter().position(|s| s == step) {
            Some(i) => {
                let s = self.remaining.remove(i);
                self.mentioned.push(s);
                true
            }
            None => false,
        }
    }

    /// Applies the rule layer to one utterance.
    pub fn update(&mut self, utterance: &Utterance, cfg: &TrackerConfig) -> StateUpdate {
        let mut report = StateUpdate::default();
        if utterance.speaker != Speaker::Customer
            || self.remaining.is_empty()
            || (cfg.skip_opening && utterance.turn_index == 0)
        {
            return report;
        }
        let words = tokens(&utterance.text);
        let all: Vec<&PlanStep> = self.remaining.iter().chain(&self.mentioned).collect();
        let value_tokens: Vec<Vec<String>> = all
            .iter()
            .map(|s| {
                if s.interest == Interest::Optional {
                    Vec::new()
                } else {
                    tokens(&s.value)
                }
            })
            .collect();
        let raw_value_spans: Vec<Vec<Span>> = value_tokens.iter().map(|v| spans(&words, v)).collect();
        // a value occurrence nested in a longer value occurrence belongs to the longer one
        let value_spans: Vec<Vec<Span>> = raw_value_spans
            .iter()
            .enumerate()
            .map(|(i, own)| {
                own.iter()
                    .copied()
                    .filter(|&sp| {
                        !raw_value_spans
                            .iter()
                            .enumerate()
                            .any(|(j, other)| j != i && other.iter().any(|&o| inside(sp, o)))
                    })
                    .collect()
            })
            .collect();
        let raw_aspect_spans: Vec<Vec<Span>> = all
            .iter()
            .map(|s| {
                cfg.aspect_forms(&s.aspect)
                    .iter()
                    .flat_map(|f| spans(&words, f))
                    .collect()
            })
            .collect();
        let aspect_spans: Vec<Vec<Span>> = raw_aspect_spans
            .iter()
            .enumerate()
            .map(|(i, own)| {
                own.iter()
                    .copied()
                    .filter(|&sp| {
                        let in_value = value_spans
                            .iter()
                            .enumerate()
                            .any(|(j, vs)| j != i && vs.iter().any(|&v| overlaps(sp, v)));
                        let in_aspect = raw_aspect_spans
                            .iter()
                            .enumerate()
                            .any(|(j, other)| j != i && other.iter().any(|&o| inside(sp, o)));
                        !in_value && !in_aspect
                    })
                    .collect()
            })
            .collect();
        let hedged = cfg
            .hedges
            .iter()
            .any(|h| !find_runs(&words, &tokens(h)).is_empty());

        let mut to_move = Vec::new();
        for (i, step) in all.iter().enumerate().take(self.remaining.len()) {
            let aspect_named = !aspect_spans[i].is_empty();
            match step.interest {
                Interest::Optional => {
                    if aspect_named && hedged {
                        to_move.push((*step).clone());
                    }
                }
                Interest::Wanted | Interest::Unwanted => {
                    // a value with no word characters can only be matched by its aspect
                    if value_tokens[i].is_empty() {
                        if aspect_named {
                            to_move.push((*step).clone());
                        }
                        continue;
                    }
                    if value_spans[i].is_empty() {
                        continue;
                    }
                    let shared = value_tokens
                        .iter()
                        .enumerate()
                        .any(|(j, v)| j != i && *v == value_tokens[i]);
                    if aspect_named || !shared {
                        to_move.push((*step).clone());
                    } else {
                        log::debug!(
                            "ambiguous mention of {:?} for aspect {:?}; not moved",
                            step.value,
                            step.aspect
                        );
                        report.ambiguous.push((*step).clone());
                    }
                }
            }
        }
        for step in to_move {
            if self.mark_mentioned(&step) {
                report.moved.push(step);
            }
        }
        report
    }
}

/// Functional form of [`DialogueState::update`].
pub fn update_state(state: &DialogueState, utterance: &Utterance, cfg: &TrackerConfig) -> DialogueState {
    let mut next = state.clone();
    next.update(utterance, cfg);
    next
}

/// A secondary tracking layer (for example a model call) that proposes
/// further entries to mark as mentioned.
pub trait StateRefiner: Send + Sync {
    fn propose(&self, state: &DialogueState, utterance: &Utterance) -> Vec<PlanStep>;
}

/// Applies a refiner's proposals, ignoring anything not currently remaining.
pub fn refine_state(state: &mut DialogueState, utterance: &Utterance, refiner: &dyn StateRefiner) -> Vec<PlanStep> {
    refiner
        .propose(state, utterance)
        .into_iter()
        .filter(|s| state.mark_mentioned(s))
        .collect()
}
