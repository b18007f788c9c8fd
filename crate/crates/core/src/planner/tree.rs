//! Multi-way categorical decision tree over a [`TreeDataset`].

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::split::{best_split, partition, Criterion};
use super::TreeDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: Option<usize>,
    /// A split is admissible only if every branch keeps at least this many products.
    pub min_leaf: usize,
    pub criterion: Criterion,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: None,
            min_leaf: 1,
            criterion: Criterion::GainRatio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Leaf {
    /// The members' label when pure, otherwise the most common one.
    pub label: String,
    pub pure: bool,
    /// Catalog indices.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    /// `None` is the MISSING branch.
    pub value: Option<String>,
    pub count: usize,
    pub child: TreeNode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitNode {
    pub aspect: String,
    pub members: Vec<usize>,
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TreeNode {
    Leaf(Leaf),
    Split(SplitNode),
}

impl TreeNode {
    pub fn members(&self) -> &[usize] {
        match self {
            TreeNode::Leaf(l) => &l.members,
            TreeNode::Split(s) => &s.members,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Split(s) => 1 + s.branches.iter().map(|b| b.child.depth()).max().unwrap_or(0),
        }
    }

    /// All leaves, left to right.
    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            match n {
                TreeNode::Leaf(l) => out.push(l),
                TreeNode::Split(s) => stack.extend(s.branches.iter().rev().map(|b| &b.child)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionTree {
    pub root: TreeNode,
}

impl DecisionTree {
    pub fn depth(&self) -> usize {
        self.root.depth()
    }
}

/// Fits a tree on every row of `data`.
pub fn fit_tree(data: &TreeDataset, config: &TreeConfig) -> DecisionTree {
    let rows: Vec<usize> = (0..data.rows.len()).collect();
    let mut used = HashSet::new();
    DecisionTree {
        root: grow(data, &rows, &mut used, 0, config),
    }
}

fn make_leaf(data: &TreeDataset, rows: &[usize]) -> TreeNode {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &r in rows {
        *counts.entry(data.labels[r].as_str()).or_default() += 1;
    }
    // only a strictly larger count replaces, so the smallest label wins ties
    let label = counts
        .iter()
        .fold(None::<(&str, usize)>, |acc, (&l, &c)| match acc {
            Some((_, best)) if best >= c => acc,
            _ => Some((l, c)),
        })
        .map(|(l, _)| l.to_string())
        .unwrap_or_default();
    TreeNode::Leaf(Leaf {
        label,
        pure: counts.len() <= 1,
        members: rows.iter().map(|&r| data.members[r]).collect(),
    })
}

fn grow(
    data: &TreeDataset,
    rows: &[usize],
    used: &mut HashSet<usize>,
    depth: usize,
    config: &TreeConfig,
) -> TreeNode {
    if config.max_depth.is_some_and(|d| depth >= d) {
        return make_leaf(data, rows);
    }
    let candidates: Vec<usize> = (0..data.feature_space.len())
        .filter(|f| !used.contains(f))
        .filter(|&f| {
            config.min_leaf <= 1
                || partition(data, rows, f).values().all(|m| m.len() >= config.min_leaf)
        })
        .collect();
    let Ok(best) = best_split(data, rows, &candidates, config.criterion) else {
        return make_leaf(data, rows);
    };

    let mut parts: Vec<(Option<String>, Vec<usize>)> = partition(data, rows, best.feature)
        .into_iter()
        .map(|(v, m)| (v.map(String::from), m))
        .collect();
    // present values in lexicographic order, MISSING last
    parts.sort_by(|a, b| match (&a.0, &b.0) {
        (Some(x), Some(y)) => x.cmp(y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });

    used.insert(best.feature);
    let branches = parts
        .into_iter()
        .map(|(value, members)| Branch {
            value,
            count: members.len(),
            child: grow(data, &members, used, depth + 1, config),
        })
        .collect();
    used.remove(&best.feature);

    TreeNode::Split(SplitNode {
        aspect: data.feature_space[best.feature].clone(),
        members: rows.iter().map(|&r| data.members[r]).collect(),
        branches,
    })
}
