//! Helpers and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use convshop::catalog::{Catalog, Product};
use convshop::dialogue::{PromptSet, TemplateBackend};
use convshop::pipeline::{EpisodeRecord, Pipeline, RunConfig};
use convshop::planner::TreeDataset;
use convshop::search::{Interest, PreferenceEntry, RevealedPreference};
use convshop::synthetic::{synthetic_catalog, SyntheticConfig, SyntheticSpec};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn catalog(n: usize, seed: u64) -> Catalog {
    synthetic_catalog(
        &SyntheticSpec::default(),
        &SyntheticConfig {
            n_products: n,
            seed,
            ..Default::default()
        },
    )
    .unwrap()
}

pub fn run_template(catalog: &Catalog, config: &RunConfig) -> Vec<EpisodeRecord> {
    let prompts = PromptSet::default();
    Pipeline {
        catalog,
        config,
        backend: &TemplateBackend,
        prompts: &prompts,
        refiner: None,
    }
    .run()
    .unwrap()
}

/// A random revealed preference: a category, then random aspects from the
/// whole vocabulary (so some are absent from the category) with random
/// values, some of which no product carries.
pub fn random_revealed<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> RevealedPreference {
    let category = &spec.categories.choose(rng).unwrap().name;
    let mut aspects: Vec<&String> = spec.vocabulary.keys().collect();
    aspects.shuffle(rng);
    let k = rng.gen_range(0..=5);
    let entries = aspects.into_iter().take(k).map(|a| {
        let value = if rng.gen_bool(0.1) {
            "nonexistent".to_string()
        } else {
            let v = spec.vocabulary[a.as_str()].choose(rng).unwrap().clone();
            // exercise case folding
            if rng.gen_bool(0.2) { v.to_uppercase() } else { v }
        };
        match rng.gen_range(0..3) {
            0 => PreferenceEntry::wanted(a, &value),
            1 => PreferenceEntry::unwanted(a, &value),
            _ => PreferenceEntry::optional(a),
        }
    });
    RevealedPreference::with_entries(category, entries).unwrap()
}

/// Filter by scanning every product.
pub fn naive_filter(catalog: &Catalog, rev: &RevealedPreference) -> Vec<usize> {
    let lower = |s: &str| s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ");
    let mut out = Vec::new();
    for (i, p) in catalog.products().iter().enumerate() {
        if p.category != rev.category() {
            continue;
        }
        let mut ok = true;
        for e in rev.entries() {
            let held = p
                .aspects
                .iter()
                .find(|(k, _)| lower(k) == lower(&e.aspect))
                .map(|(_, v)| lower(v));
            let matches = held.as_deref() == Some(lower(&e.value).as_str());
            ok &= match e.interest {
                Interest::Wanted => matches,
                Interest::Unwanted => !matches,
                Interest::Optional => true,
            };
        }
        if ok {
            out.push(i);
        }
    }
    out
}

/// Random dataset with up to `max_rows` rows and `max_features` features.
pub fn random_dataset<R: Rng>(rng: &mut R, max_rows: usize, max_features: usize) -> TreeDataset {
    let n_features = rng.gen_range(1..=max_features);
    let n_rows = rng.gen_range(2..=max_rows);
    let feature_space: Vec<String> = (0..n_features).map(|f| format!("aspect{f}")).collect();
    let arity: Vec<usize> = (0..n_features).map(|_| rng.gen_range(1..=5)).collect();
    let missing: Vec<f64> = (0..n_features).map(|_| if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..0.4) }).collect();
    let rows: Vec<Vec<Option<String>>> = (0..n_rows)
        .map(|_| {
            (0..n_features)
                .map(|f| (!rng.gen_bool(missing[f])).then(|| format!("v{}", rng.gen_range(0..arity[f]))))
                .collect()
        })
        .collect();
    let labels = rows.iter().map(|r| convshop::planner::build_label(&feature_space, r)).collect();
    TreeDataset {
        feature_space,
        rows,
        labels,
        members: (0..n_rows).collect(),
    }
}

/// Exhaustive gain-ratio choice: every feature's gain and split information
/// from raw counts, best ratio first, then gain, then name. `None` when the
/// rows share one label or no feature has positive gain.
pub fn oracle_best_gain_ratio(data: &TreeDataset) -> Option<(usize, f64, f64)> {
    const EPS: f64 = 1e-12;
    let n = data.rows.len() as f64;
    let h = |groups: &[Vec<usize>]| -> f64 {
        // entropy of the full rows (the label is a function of the row)
        let mut out = 0.0;
        let total: usize = groups.iter().map(Vec::len).sum();
        for g in groups {
            let mut counts: HashMap<&Vec<Option<String>>, usize> = HashMap::new();
            for &r in g {
                *counts.entry(&data.rows[r]).or_default() += 1;
            }
            let m = g.len() as f64;
            let hg: f64 = counts.values().map(|&c| {
                let p = c as f64 / m;
                -p * p.log2()
            }).sum();
            out += m / total as f64 * hg;
        }
        out
    };
    let all: Vec<usize> = (0..data.rows.len()).collect();
    let distinct: std::collections::HashSet<&Vec<Option<String>>> = data.rows.iter().collect();
    if distinct.len() < 2 {
        return None;
    }
    let h_parent = h(&[all.clone()]);
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..data.feature_space.len() {
        let mut parts: BTreeMap<Option<&String>, Vec<usize>> = BTreeMap::new();
        for &r in &all {
            parts.entry(data.rows[r][f].as_ref()).or_default().push(r);
        }
        let groups: Vec<Vec<usize>> = parts.into_values().collect();
        let gain = (h_parent - h(&groups)).max(0.0);
        let split_info: f64 = groups.iter().map(|g| {
            let w = g.len() as f64 / n;
            -w * w.log2()
        }).sum();
        let ratio = if split_info > EPS { gain / split_info } else { 0.0 };
        let better = match best {
            None => true,
            Some((bf, bg, br)) => {
                if (ratio - br).abs() > EPS {
                    ratio > br
                } else if (gain - bg).abs() > EPS {
                    gain > bg
                } else {
                    data.feature_space[f] < data.feature_space[bf]
                }
            }
        };
        if better {
            best = Some((f, gain, ratio));
        }
    }
    best.filter(|&(_, g, _)| g > EPS)
}

fn oracle_tokens(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in s.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// BM25 evaluated document by document, one query token occurrence at a time.
pub fn oracle_bm25(docs: &[(String, String)], query: &str, k1: f64, b: f64) -> Vec<(String, f64)> {
    let toks: Vec<Vec<String>> = docs.iter().map(|(_, t)| oracle_tokens(t)).collect();
    let n = docs.len() as f64;
    let avgdl = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let q = oracle_tokens(query);
    let mut scored: Vec<(String, f64)> = docs
        .iter()
        .zip(&toks)
        .map(|((id, _), d)| {
            let mut s = 0.0;
            for term in &q {
                let df = toks.iter().filter(|t| t.contains(term)).count() as f64;
                let tf = d.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avgdl));
            }
            (id.clone(), s)
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored
}

/// Whether `got` is `want` in the order "score descending, then id", where
/// scores within `tol` of each other count as tied.
pub fn same_ranking(got: &[(String, f64)], want: &[(String, f64)], tol: f64) -> bool {
    let mut a: Vec<&str> = got.iter().map(|(i, _)| i.as_str()).collect();
    let mut b: Vec<&str> = want.iter().map(|(i, _)| i.as_str()).collect();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return false;
    }
    let oracle: HashMap<&str, f64> = want.iter().map(|(i, s)| (i.as_str(), *s)).collect();
    got.windows(2).all(|w| {
        let (x, y) = (oracle[w[0].0.as_str()], oracle[w[1].0.as_str()]);
        x > y + tol || ((x - y).abs() <= tol && w[0].0 < w[1].0)
    })
}

pub fn product_text(p: &Product) -> String {
    let mut s = p.title.clone();
    for (a, v) in &p.aspects {
        s.push_str(&format!(" {a} {v}"));
    }
    s
}
