//! Target-oriented conversational product search: preference sampling,
//! decision-tree dialogue planning, verbalization, and downstream evaluation.

pub mod catalog;
pub mod cli;
pub mod dialogue;
pub mod eval;
pub mod pipeline;
pub mod planner;
pub mod preference;
pub mod search;
pub mod synthetic;
pub mod text;
