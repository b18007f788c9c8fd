//! Split scoring for multi-way categorical splits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PlanError, TreeDataset};

/// Scores closer than this are treated as tied.
pub const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// Information gain divided by the split's intrinsic information.
    #[default]
    GainRatio,
    /// Plain information gain.
    Gain,
    /// Decrease in Gini impurity.
    Gini,
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gain-ratio" => Ok(Criterion::GainRatio),
            "gain" => Ok(Criterion::Gain),
            "gini" => Ok(Criterion::Gini),
            other => Err(format!("unknown criterion {other:?}")),
        }
    }
}

/// Scores of one candidate aspect at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitScore {
    pub feature: usize,
    pub gain: f64,
    pub gain_ratio: f64,
    pub gini_decrease: f64,
}

impl SplitScore {
    pub fn primary(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::GainRatio => self.gain_ratio,
            Criterion::Gain => self.gain,
            Criterion::Gini => self.gini_decrease,
        }
    }
}

fn entropy(counts: impl Iterator<Item = usize>, n: usize) -> f64 {
    let n = n as f64;
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn gini(counts: impl Iterator<Item = usize>, n: usize) -> f64 {
    let n = n as f64;
    1.0 - counts.map(|c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn label_counts<'a>(labels: impl Iterator<Item = &'a str>) -> BTreeMap<&'a str, usize> {
    let mut m = BTreeMap::new();
    for l in labels {
        *m.entry(l).or_default() += 1;
    }
    m
}

/// Partition of `rows` by the value of `feature`.
pub(crate) fn partition<'a>(
    data: &'a TreeDataset,
    rows: &[usize],
    feature: usize,
) -> BTreeMap<Option<&'a str>, Vec<usize>> {
    let mut parts: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
    for &r in rows {
        parts.entry(data.rows[r][feature].as_deref()).or_default().push(r);
    }
    parts
}

/// Scores splitting `rows` on `feature`.
pub fn score_split(data: &TreeDataset, rows: &[usize], feature: usize) -> SplitScore {
    let n = rows.len();
    let parent = label_counts(rows.iter().map(|&r| data.labels[r].as_str()));
    let h_parent = entropy(parent.values().copied(), n);
    let g_parent = gini(parent.values().copied(), n);

    let mut h_cond = 0.0;
    let mut g_cond = 0.0;
    let mut split_info = 0.0;
    for members in partition(data, rows, feature).values() {
        let w = members.len() as f64 / n as f64;
        let counts = label_counts(members.iter().map(|&r| data.labels[r].as_str()));
        h_cond += w * entropy(counts.values().copied(), members.len());
        g_cond += w * gini(counts.values().copied(), members.len());
        split_info -= w * w.log2();
    }
    let gain = (h_parent - h_cond).max(0.0);
    let gain_ratio = if split_info > TIE_EPS { gain / split_info } else { 0.0 };
    SplitScore {
        feature,
        gain,
        gain_ratio,
        gini_decrease: (g_parent - g_cond).max(0.0),
    }
}

/// Picks the candidate maximizing `criterion`, tie-broken by plain gain then
/// by aspect name.
pub fn best_split(
    data: &TreeDataset,
    rows: &[usize],
    candidates: &[usize],
    criterion: Criterion,
) -> Result<SplitScore, PlanError> {
    if candidates.is_empty() {
        return Err(PlanError::NoCandidates);
    }
    let distinct = label_counts(rows.iter().map(|&r| data.labels[r].as_str())).len();
    if distinct < 2 {
        return Err(PlanError::SingleLabel);
    }
    let mut best: Option<SplitScore> = None;
    for &f in candidates {
        let s = score_split(data, rows, f);
        let better = match &best {
            None => true,
            Some(b) => {
                let (sp, bp) = (s.primary(criterion), b.primary(criterion));
                if sp > bp + TIE_EPS {
                    true
                } else if sp < bp - TIE_EPS {
                    false
                } else if s.gain > b.gain + TIE_EPS {
                    true
                } else if s.gain < b.gain - TIE_EPS {
                    false
                } else {
                    data.feature_space[f] < data.feature_space[b.feature]
                }
            }
        };
        if better {
            best = Some(s);
        }
    }
    let best = best.expect("candidates non-empty");
    if best.gain <= TIE_EPS {
        return Err(PlanError::NoUsefulSplit);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(features: &[&str], rows: &[&[Option<&str>]]) -> TreeDataset {
        let feature_space: Vec<String> = features.iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<Option<String>>> = rows
            .iter()
            .map(|r| r.iter().map(|v| v.map(String::from)).collect())
            .collect();
        let labels = rows
            .iter()
            .map(|r| super::super::build_label(&feature_space, r))
            .collect();
        let members = (0..rows.len()).collect();
        TreeDataset {
            feature_space,
            rows,
            labels,
            members,
        }
    }

    #[test]
    fn pure_split_beats_impure() {
        // Color splits 2/2; Brand splits 3/1. Labels are all distinct.
        let d = dataset(
            &["Brand", "Color"],
            &[
                &[Some("a"), Some("blue")],
                &[Some("a"), Some("blue")],
                &[Some("a"), Some("red")],
                &[Some("b"), Some("red")],
            ],
        );
        let rows: Vec<usize> = (0..4).collect();
        let best = best_split(&d, &rows, &[0, 1], Criterion::GainRatio).unwrap();
        assert_eq!(d.feature_space[best.feature], "Color");
        // Labels: {a&blue x2, a&red, b&red}: H = 1.5 bits.
        let color = score_split(&d, &rows, 1);
        assert!((color.gain - 1.0).abs() < 1e-12);
        assert!((color.gain_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_tie_prefers_smaller_name() {
        let d = dataset(
            &["zeta", "alpha"],
            &[&[Some("x"), Some("p")], &[Some("y"), Some("q")]],
        );
        for c in [Criterion::GainRatio, Criterion::Gain, Criterion::Gini] {
            let best = best_split(&d, &[0, 1], &[0, 1], c).unwrap();
            assert_eq!(d.feature_space[best.feature], "alpha");
        }
    }

    #[test]
    fn single_label_is_rejected() {
        let d = dataset(&["a"], &[&[Some("x")], &[Some("x")]]);
        assert_eq!(best_split(&d, &[0, 1], &[0], Criterion::Gain), Err(PlanError::SingleLabel));
    }

    #[test]
    fn constant_candidates_give_no_useful_split() {
        let d = dataset(&["a", "b"], &[&[Some("x"), Some("1")], &[Some("x"), Some("2")]]);
        assert_eq!(best_split(&d, &[0, 1], &[0], Criterion::GainRatio), Err(PlanError::NoUsefulSplit));
    }

    #[test]
    fn missing_is_its_own_branch() {
        let d = dataset(&["a"], &[&[Some("x")], &[None]]);
        let s = score_split(&d, &[0, 1], 0);
        assert!((s.gain - 1.0).abs() < 1e-12);
    }
}
