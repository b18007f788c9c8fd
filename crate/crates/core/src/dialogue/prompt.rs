//! Prompt templates and their rendering.
//!
//! Templates use `{{Name}}` placeholders and `{{#Name}}...{{/Name}}` sections,
//! which render only when `Name` is non-empty. A section tag followed by a
//! newline swallows that newline, so sections can sit on their own lines.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::state::DialogueState;
use super::{HintedStep, Speaker, Utterance};
use crate::planner::PlanStep;
use crate::search::Interest;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("no value for placeholder {0:?}")]
    MissingPlaceholder(String),
    #[error("section {0:?} is never closed")]
    UnclosedSection(String),
    #[error("unexpected closing tag {0:?}")]
    StrayClose(String),
    #[error("unterminated tag at byte {0}")]
    UnterminatedTag(usize),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptRole {
    SinglePass,
    Seller,
    Customer,
    StateTracker,
}

impl PromptRole {
    pub const ALL: [PromptRole; 4] = [
        PromptRole::SinglePass,
        PromptRole::Seller,
        PromptRole::Customer,
        PromptRole::StateTracker,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptRole::SinglePass => "single_pass.txt",
            PromptRole::Seller => "seller.txt",
            PromptRole::Customer => "customer.txt",
            PromptRole::StateTracker => "state_tracker.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptRole::SinglePass => include_str!("../../prompts/single_pass.txt"),
            PromptRole::Seller => include_str!("../../prompts/seller.txt"),
            PromptRole::Customer => include_str!("../../prompts/customer.txt"),
            PromptRole::StateTracker => include_str!("../../prompts/state_tracker.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub role: PromptRole,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(name: &str, role: PromptRole, body: &str) -> Self {
        PromptTemplate {
            name: name.to_string(),
            role,
            body: body.to_string(),
        }
    }

    pub fn render(&self, ctx: &PromptContext) -> Result<String, PromptError> {
        render_prompt(&self.body, ctx)
    }
}

/// One template per role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub single_pass: PromptTemplate,
    pub seller: PromptTemplate,
    pub customer: PromptTemplate,
    pub state_tracker: PromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        let t = |r: PromptRole| PromptTemplate::new(r.file_name(), r, r.builtin());
        PromptSet {
            single_pass: t(PromptRole::SinglePass),
            seller: t(PromptRole::Seller),
            customer: t(PromptRole::Customer),
            state_tracker: t(PromptRole::StateTracker),
        }
    }
}

impl PromptSet {
    /// Loads templates from `dir`, falling back to the built-in text for
    /// any role whose file is absent.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = PromptSet::default();
        for role in PromptRole::ALL {
            let path = dir.join(role.file_name());
            if !path.exists() {
                log::info!("{} not found; using built-in template", path.display());
                continue;
            }
            let body = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            *set.get_mut(role) = PromptTemplate::new(role.file_name(), role, &body);
        }
        Ok(set)
    }

    pub fn get(&self, role: PromptRole) -> &PromptTemplate {
        match role {
            PromptRole::SinglePass => &self.single_pass,
            PromptRole::Seller => &self.seller,
            PromptRole::Customer => &self.customer,
            PromptRole::StateTracker => &self.state_tracker,
        }
    }

    fn get_mut(&mut self, role: PromptRole) -> &mut PromptTemplate {
        match role {
            PromptRole::SinglePass => &mut self.single_pass,
            PromptRole::Seller => &mut self.seller,
            PromptRole::Customer => &mut self.customer,
            PromptRole::StateTracker => &mut self.state_tracker,
        }
    }
}

pub type PromptContext = BTreeMap<String, String>;

fn lookup<'a>(ctx: &'a PromptContext, name: &str) -> Result<&'a str, PromptError> {
    ctx.get(name)
        .map(String::as_str)
        .ok_or_else(|| PromptError::MissingPlaceholder(name.to_string()))
}

fn skip_newline(s: &str) -> &str {
    s.strip_prefix("\r\n").or_else(|| s.strip_prefix('\n')).unwrap_or(s)
}

/// Substitutes `ctx` into `template`.
pub fn render_prompt(template: &str, ctx: &PromptContext) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or_else(|| PromptError::UnterminatedTag(template.len() - rest.len() + open))?;
        let tag = after[..close].trim();
        rest = &after[close + 2..];
        if let Some(name) = tag.strip_prefix('#') {
            let name = name.trim();
            let end_tag = format!("{{{{/{name}}}}}");
            let end = rest
                .find(&end_tag)
                .ok_or_else(|| PromptError::UnclosedSection(name.to_string()))?;
            let body = skip_newline(&rest[..end]);
            rest = skip_newline(&rest[end + end_tag.len()..]);
            if !lookup(ctx, name)?.is_empty() {
                out.push_str(&render_prompt(body, ctx)?);
            }
        } else if let Some(name) = tag.strip_prefix('/') {
            return Err(PromptError::StrayClose(name.trim().to_string()));
        } else {
            out.push_str(lookup(ctx, tag)?);
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn feature_line(step: &PlanStep) -> String {
    match step.interest {
        Interest::Optional => format!("Aspect: {};", step.aspect),
        _ => format!("Aspect: {}, Value: {};", step.aspect, step.value),
    }
}

/// `Aspect: X, Value: Y;` lines for entries of one interest, in plan order.
pub fn feature_block<'a>(steps: impl IntoIterator<Item = &'a PlanStep>, interest: Interest) -> String {
    steps
        .into_iter()
        .filter(|s| s.interest == interest)
        .map(feature_line)
        .collect::<Vec<_>>()
        .join("\n")
}

/// `Aspect: X, Typical Values: a, b, c;` lines for steps that carry hints.
pub fn typical_values_block(steps: &[HintedStep]) -> String {
    steps
        .iter()
        .filter(|h| !h.hints.is_empty())
        .map(|h| format!("Aspect: {}, Typical Values: {};", h.step.aspect, h.hints.join(", ")))
        .collect::<Vec<_>>()
        .join("\n")
}

fn ask_block(steps: &[HintedStep]) -> String {
    steps
        .iter()
        .map(|h| {
            if h.hints.is_empty() {
                format!("Aspect: {};", h.step.aspect)
            } else {
                format!("Aspect: {}, Typical Values: {};", h.step.aspect, h.hints.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// `customer: ...` / `seller: ...` lines.
pub fn history_block(utterances: &[Utterance]) -> String {
    utterances
        .iter()
        .map(|u| format!("{}: {}", u.speaker, u.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn flag(on: bool) -> String {
    if on { "yes".into() } else { String::new() }
}

pub fn single_pass_context(category: &str, plan: &[HintedStep], recommended_title: &str) -> PromptContext {
    let steps = plan.iter().map(|h| &h.step);
    PromptContext::from([
        ("ProductCategory".into(), category.to_string()),
        ("WantedFeatures".into(), feature_block(steps.clone(), Interest::Wanted)),
        ("UnwantedFeatures".into(), feature_block(steps.clone(), Interest::Unwanted)),
        ("OptionalFeatures".into(), feature_block(steps, Interest::Optional)),
        ("TypicalValues".into(), typical_values_block(plan)),
        ("RecommendedProduct".into(), recommended_title.to_string()),
    ])
}

pub fn seller_context(
    category: &str,
    remaining: &[HintedStep],
    recommend: Option<&str>,
    closing: bool,
    history: &[Utterance],
) -> PromptContext {
    PromptContext::from([
        ("ProductCategory".into(), category.to_string()),
        ("RemainingFeatures".into(), ask_block(remaining)),
        ("RecommendedProduct".into(), recommend.unwrap_or_default().to_string()),
        ("Closing".into(), flag(closing)),
        ("ConversationHistory".into(), history_block(history)),
    ])
}

pub fn customer_context(
    category: &str,
    opening: bool,
    remaining: &[PlanStep],
    closing: bool,
    history: &[Utterance],
) -> PromptContext {
    PromptContext::from([
        ("ProductCategory".into(), category.to_string()),
        ("Opening".into(), flag(opening)),
        ("WantedFeatures".into(), feature_block(remaining, Interest::Wanted)),
        ("UnwantedFeatures".into(), feature_block(remaining, Interest::Unwanted)),
        ("OptionalFeatures".into(), feature_block(remaining, Interest::Optional)),
        ("Closing".into(), flag(closing)),
        ("ConversationHistory".into(), history_block(history)),
    ])
}

pub fn tracker_context(state: &DialogueState, utterance: &Utterance) -> PromptContext {
    let or_none = |s: String| if s.is_empty() { "(none)".to_string() } else { s };
    PromptContext::from([
        ("RemainingWanted".into(), or_none(feature_block(state.remaining(), Interest::Wanted))),
        ("RemainingUnwanted".into(), or_none(feature_block(state.remaining(), Interest::Unwanted))),
        ("RemainingOptional".into(), or_none(feature_block(state.remaining(), Interest::Optional))),
        ("Utterance".into(), utterance.text.clone()),
    ])
}

impl std::fmt::Display for Speaker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Speaker::Customer => "customer",
            Speaker::Seller => "seller",
        })
    }
}
