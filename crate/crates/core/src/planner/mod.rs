//! Dialogue planning with a purity-driven decision tree.
//!
//! Each search iteration filters the catalog under the revealed preference,
//! fits a tree over the surviving candidates, and walks it along the
//! target-consistent path to decide which aspects the conversation covers
//! next. The loop ends when every candidate satisfies the preference or no
//! aspect is left to discuss.

mod split;
mod tree;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, Product};
use crate::search::{
    converged, filter, top_values, Interest, Preference, PreferenceEntry, ProductSet,
    RevealedPreference, SearchError,
};
use crate::text::fold;

pub use split::{best_split, score_split, Criterion, SplitScore, TIE_EPS};
pub use tree::{fit_tree, Branch, DecisionTree, Leaf, SplitNode, TreeConfig, TreeNode};

/// A planned (aspect, value, interest) step. Optional steps carry an empty value.
pub type PlanStep = PreferenceEntry;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("fewer than two distinct labels; nothing to split")]
    SingleLabel,
    #[error("no candidate aspects")]
    NoCandidates,
    #[error("no candidate aspect has positive gain")]
    NoUsefulSplit,
    #[error("target {0:?} is not in the catalog")]
    UnknownTarget(String),
    #[error("target dropped out of the candidate set at iteration {0}")]
    TargetLost(usize),
    #[error("no branch for the target's value of {0:?}")]
    MissingBranch(String),
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// Features and labels for fitting a tree over a candidate set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeDataset {
    pub feature_space: Vec<String>,
    /// One row per product, aligned to `feature_space`; `None` is MISSING.
    pub rows: Vec<Vec<Option<String>>>,
    pub labels: Vec<String>,
    /// Catalog index of each row.
    pub members: Vec<usize>,
}

/// `aspect:value` pairs joined with `&`, in feature order, skipping MISSING.
pub fn build_label(feature_space: &[String], row: &[Option<String>]) -> String {
    feature_space
        .iter()
        .zip(row)
        .filter_map(|(a, v)| v.as_ref().map(|v| format!("{a}:{v}")))
        .collect::<Vec<_>>()
        .join("&")
}

/// Builds the tree dataset over `set`, excluding aspects already revealed.
pub fn make_dataset(set: &ProductSet, catalog: &Catalog, rev_pref: &RevealedPreference) -> TreeDataset {
    let mut feature_space = Vec::new();
    let mut seen = HashSet::new();
    for p in set.products(catalog) {
        for aspect in p.aspects.keys() {
            if !rev_pref.contains_aspect(aspect) && seen.insert(aspect.clone()) {
                feature_space.push(aspect.clone());
            }
        }
    }
    let rows: Vec<Vec<Option<String>>> = set
        .products(catalog)
        .map(|p| feature_space.iter().map(|a| p.aspects.get(a).cloned()).collect())
        .collect();
    let labels = rows.iter().map(|r| build_label(&feature_space, r)).collect();
    TreeDataset {
        feature_space,
        rows,
        labels,
        members: set.indices().to_vec(),
    }
}

/// Which branch to follow at nodes whose aspect is optional or unwanted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchPolicy {
    /// Follow the target product's own value.
    #[default]
    TargetConsistent,
    /// Follow the largest admissible branch.
    Majority,
}

fn step_for(aspect: &str, preference: &Preference) -> PlanStep {
    match preference.entry(aspect) {
        Some(e) if e.interest != Interest::Optional => PlanStep {
            aspect: aspect.to_string(),
            value: e.value.clone(),
            interest: e.interest,
        },
        _ => PlanStep::optional(aspect),
    }
}

/// Walks the tree from the root, emitting one step per internal node.
pub fn traverse(
    tree: &DecisionTree,
    preference: &Preference,
    target: &Product,
    policy: BranchPolicy,
) -> Result<Vec<PlanStep>, PlanError> {
    let mut plan = Vec::new();
    let mut node = &tree.root;
    while let TreeNode::Split(split) = node {
        let step = step_for(&split.aspect, preference);
        let target_branch = || {
            let want = target.value(&split.aspect).map(fold);
            split
                .branches
                .iter()
                .find(|b| b.value.as_deref().map(fold) == want)
        };
        let next = match (policy, step.interest) {
            (BranchPolicy::TargetConsistent, _) => Some(
                target_branch().ok_or_else(|| PlanError::MissingBranch(split.aspect.clone()))?,
            ),
            (BranchPolicy::Majority, Interest::Wanted) => split
                .branches
                .iter()
                .find(|b| b.value.as_deref().map(fold) == Some(fold(&step.value))),
            (BranchPolicy::Majority, interest) => split
                .branches
                .iter()
                .filter(|b| {
                    interest != Interest::Unwanted
                        || b.value.as_deref().map(fold) != Some(fold(&step.value))
                })
                .fold(None::<&Branch>, |best, b| match best {
                    Some(x) if x.count >= b.count => Some(x),
                    _ => Some(b),
                }),
        };
        plan.push(step);
        match next {
            Some(b) => node = &b.child,
            None => break,
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub tree: TreeConfig,
    pub branch_policy: BranchPolicy,
    /// Cap on steps taken from one traversal; `None` keeps the full path.
    pub max_steps_per_turn: Option<usize>,
    /// Keep only the root step of each fitted tree, refitting before the next.
    pub refit_per_step: bool,
    /// Number of value hints attached to each step.
    pub hint_count: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            tree: TreeConfig::default(),
            branch_policy: BranchPolicy::default(),
            max_steps_per_turn: None,
            refit_per_step: false,
            hint_count: 3,
        }
    }
}

/// One search iteration: the candidates it started from and the steps it planned.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanIteration {
    pub candidates: ProductSet,
    pub steps: Vec<PlanStep>,
    /// Most frequent values among `candidates`, one list per step.
    pub hints: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    AspectsExhausted,
}

/// Serializable per-iteration summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub candidates: usize,
    pub aspects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub history: Vec<PlanStep>,
    pub iterations: Vec<PlanIteration>,
    pub final_set: ProductSet,
    pub stop: StopReason,
}

impl PlanOutcome {
    pub fn trace(&self) -> Vec<IterationTrace> {
        self.iterations
            .iter()
            .map(|it| IterationTrace {
                candidates: it.candidates.len(),
                aspects: it.steps.iter().map(|s| s.aspect.clone()).collect(),
            })
            .collect()
    }

    /// Number of search-and-plan iterations.
    pub fn searches(&self) -> usize {
        self.iterations.len()
    }

    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }

    /// Hint lists for every step of the history, in history order.
    pub fn hints(&self) -> Vec<(String, Vec<String>)> {
        self.iterations
            .iter()
            .flat_map(|it| {
                it.steps
                    .iter()
                    .zip(&it.hints)
                    .map(|(s, h)| (s.aspect.clone(), h.clone()))
            })
            .collect()
    }
}

/// Runs search iterations until convergence or aspect exhaustion.
pub fn plan_dialogue(
    catalog: &Catalog,
    preference: &Preference,
    config: &PlannerConfig,
) -> Result<PlanOutcome, PlanError> {
    let target_idx = catalog
        .index_of(&preference.target_id)
        .ok_or_else(|| PlanError::UnknownTarget(preference.target_id.clone()))?;
    let target = catalog.product(target_idx);
    let mut rev = RevealedPreference::new(&preference.category);
    let mut history = Vec::new();
    let mut iterations: Vec<PlanIteration> = Vec::new();

    loop {
        let candidates = filter(catalog, &rev)?;
        if !candidates.contains(target_idx) {
            return Err(PlanError::TargetLost(iterations.len()));
        }
        if let Some(prev) = iterations.last() {
            debug_assert!(candidates.len() <= prev.candidates.len());
        }
        let stop = if converged(&candidates, preference, catalog) {
            Some(StopReason::Converged)
        } else {
            None
        };
        let mut steps = Vec::new();
        if stop.is_none() {
            let data = make_dataset(&candidates, catalog, &rev);
            let tree = fit_tree(&data, &config.tree);
            steps = traverse(&tree, preference, target, config.branch_policy)?;
            let cap = if config.refit_per_step {
                Some(1)
            } else {
                config.max_steps_per_turn
            };
            if let Some(cap) = cap {
                steps.truncate(cap.max(1));
            }
        }
        if let Some(stop) = stop.or(steps.is_empty().then_some(StopReason::AspectsExhausted)) {
            return Ok(PlanOutcome {
                history,
                iterations,
                final_set: candidates,
                stop,
            });
        }
        for s in &steps {
            rev.push(s.clone())?;
        }
        history.extend(steps.iter().cloned());
        let hints = steps
            .iter()
            .map(|s| top_values(&candidates, catalog, &s.aspect, config.hint_count))
            .collect();
        iterations.push(PlanIteration {
            candidates,
            steps,
            hints,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Catalog {
        Catalog::new(
            "d",
            vec![
                Product::new("p0", "case", "t", [("Color", "blue"), ("Brand", "a")]),
                Product::new("p1", "case", "t", [("Color", "blue"), ("Brand", "a")]),
                Product::new("p2", "case", "t", [("Color", "red"), ("Brand", "a")]),
                Product::new("p3", "case", "t", [("Color", "red"), ("Brand", "b")]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn label_follows_feature_order() {
        let cat = Catalog::new(
            "d",
            vec![
                Product::new("x", "tablet case", "t", [("model", "iPad"), ("color", "blue"), ("material", "TPU")]),
                Product::new("y", "tablet case", "t", [("model", "iPad"), ("color", "blue"), ("material", "TPU")]),
                Product::new("z", "tablet case", "t", [("model", "iPad"), ("color", "red")]),
            ],
        )
        .unwrap();
        let all = filter(&cat, &RevealedPreference::new("tablet case")).unwrap();
        let d = make_dataset(&all, &cat, &RevealedPreference::new("tablet case"));
        assert_eq!(d.feature_space, ["model", "color", "material"]);
        assert_eq!(d.labels[0], "model:iPad&color:blue&material:TPU");
        assert_eq!(d.labels[0], d.labels[1]);
        assert_eq!(d.rows[2][2], None);
        assert_eq!(d.labels[2], "model:iPad&color:red");

        let rev = RevealedPreference::with_entries("tablet case", [PlanStep::wanted("model", "iPad")]).unwrap();
        let d = make_dataset(&all, &cat, &rev);
        assert_eq!(d.feature_space, ["color", "material"]);
    }

    #[test]
    fn identical_products_give_single_leaf() {
        let cat = Catalog::new(
            "d",
            vec![
                Product::new("a", "c", "t", [("x", "1"), ("y", "2")]),
                Product::new("b", "c", "t", [("x", "1"), ("y", "2")]),
            ],
        )
        .unwrap();
        let all = filter(&cat, &RevealedPreference::new("c")).unwrap();
        let tree = fit_tree(&make_dataset(&all, &cat, &RevealedPreference::new("c")), &TreeConfig::default());
        assert_eq!(tree.depth(), 0);
        assert!(matches!(&tree.root, TreeNode::Leaf(l) if l.pure && l.members == [0, 1]));
        let pref = Preference::new("c", "a", vec![PlanStep::wanted("x", "1")]).unwrap();
        assert!(traverse(&tree, &pref, cat.product(0), BranchPolicy::TargetConsistent).unwrap().is_empty());
    }

    #[test]
    fn toy_tree_matches_hand_built() {
        let cat = toy();
        let all = filter(&cat, &RevealedPreference::new("case")).unwrap();
        let tree = fit_tree(&make_dataset(&all, &cat, &RevealedPreference::new("case")), &TreeConfig::default());
        // root Color: blue -> pure {p0,p1}; red -> Brand: a -> {p2}, b -> {p3}
        let TreeNode::Split(root) = &tree.root else { panic!("expected split") };
        assert_eq!(root.aspect, "Color");
        assert_eq!(root.branches.len(), 2);
        assert_eq!(root.branches[0].value.as_deref(), Some("blue"));
        assert_eq!(root.branches[0].count, 2);
        assert!(matches!(&root.branches[0].child, TreeNode::Leaf(l) if l.pure && l.members == [0, 1]));
        let TreeNode::Split(red) = &root.branches[1].child else { panic!("expected split") };
        assert_eq!(red.aspect, "Brand");
        assert_eq!(red.branches.iter().map(|b| b.count).collect::<Vec<_>>(), [1, 1]);
        assert_eq!(tree.depth(), 2);
    }

    #[test]
    fn traversal_follows_preference() {
        let cat = toy();
        let all = filter(&cat, &RevealedPreference::new("case")).unwrap();
        let tree = fit_tree(&make_dataset(&all, &cat, &RevealedPreference::new("case")), &TreeConfig::default());
        let pref = Preference::new("case", "p0", vec![PlanStep::wanted("Color", "blue")]).unwrap();
        let plan = traverse(&tree, &pref, cat.product(0), BranchPolicy::TargetConsistent).unwrap();
        assert_eq!(plan, [PlanStep::wanted("Color", "blue")]);

        // Brand node is reached on the red side and is absent from the preference.
        let pref = Preference::new("case", "p3", vec![PlanStep::wanted("Color", "red")]).unwrap();
        let plan = traverse(&tree, &pref, cat.product(3), BranchPolicy::TargetConsistent).unwrap();
        assert_eq!(plan, [PlanStep::wanted("Color", "red"), PlanStep::optional("Brand")]);
    }

    #[test]
    fn single_product_category_needs_no_search() {
        let cat = Catalog::new("d", vec![Product::new("only", "c", "t", [("x", "1"), ("y", "2")])]).unwrap();
        let pref = Preference::new("c", "only", vec![PlanStep::wanted("x", "1")]).unwrap();
        let out = plan_dialogue(&cat, &pref, &PlannerConfig::default()).unwrap();
        assert!(out.history.is_empty());
        assert!(out.iterations.is_empty());
        assert_eq!(out.stop, StopReason::Converged);
        assert_eq!(out.final_set.indices(), [0]);
    }

    #[test]
    fn toy_loop_converges_in_one_iteration() {
        let cat = toy();
        let pref = Preference::new(
            "case",
            "p0",
            vec![PlanStep::wanted("Color", "blue"), PlanStep::optional("Brand")],
        )
        .unwrap();
        let out = plan_dialogue(&cat, &pref, &PlannerConfig::default()).unwrap();
        assert_eq!(out.searches(), 1);
        assert_eq!(out.history[0], PlanStep::wanted("Color", "blue"));
        assert_eq!(out.final_set.ids(&cat), ["p0", "p1"]);
        assert!(out.converged());
        assert_eq!(out.trace(), vec![IterationTrace { candidates: 4, aspects: vec!["Color".into()] }]);
        assert_eq!(out.hints(), vec![("Color".to_string(), vec!["blue".to_string(), "red".to_string()])]);
    }

    #[test]
    fn step_cap_spreads_plan_over_iterations() {
        let cat = toy();
        let pref = Preference::new(
            "case",
            "p3",
            vec![PlanStep::wanted("Color", "red"), PlanStep::wanted("Brand", "b")],
        )
        .unwrap();
        let full = plan_dialogue(&cat, &pref, &PlannerConfig::default()).unwrap();
        assert_eq!(full.searches(), 1);
        assert_eq!(full.history.len(), 2);
        let capped = PlannerConfig {
            max_steps_per_turn: Some(1),
            ..PlannerConfig::default()
        };
        let out = plan_dialogue(&cat, &pref, &capped).unwrap();
        assert_eq!(out.searches(), 2);
        assert_eq!(out.history, full.history);
        assert_eq!(out.final_set.ids(&cat), ["p3"]);
    }

    #[test]
    fn majority_policy_skips_unwanted_branch() {
        let cat = toy();
        let all = filter(&cat, &RevealedPreference::new("case")).unwrap();
        let tree = fit_tree(&make_dataset(&all, &cat, &RevealedPreference::new("case")), &TreeConfig::default());
        let pref = Preference::new(
            "case",
            "p2",
            vec![PlanStep::unwanted("Color", "blue"), PlanStep::wanted("Brand", "a")],
        )
        .unwrap();
        let plan = traverse(&tree, &pref, cat.product(2), BranchPolicy::Majority).unwrap();
        assert_eq!(plan, [PlanStep::unwanted("Color", "blue"), PlanStep::wanted("Brand", "a")]);
    }
}
