//! Ranking and query-generation metrics.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::bm25::RankedResult;
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub n_examples: usize,
    pub mrr: f64,
    pub hit_at: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub n_examples: usize,
    pub exact_f1: f64,
    pub rouge_1: f64,
    pub rouge_2: f64,
    pub rouge_l: f64,
}

/// Reciprocal rank of `gold`, or 0 if absent.
pub fn reciprocal_rank(result: &RankedResult, gold: &str) -> f64 {
    result.rank_of(gold).map_or(0.0, |r| 1.0 / r as f64)
}

/// MRR and Hit@k over `(ranking, gold id)` pairs.
pub fn ranking_metrics(rankings: &[(RankedResult, String)], ks: &[usize]) -> Result<RankingReport, EvalError> {
    if rankings.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = rankings.len() as f64;
    let ranks: Vec<Option<usize>> = rankings.iter().map(|(r, g)| r.rank_of(g)).collect();
    let mrr = ranks.iter().map(|r| r.map_or(0.0, |r| 1.0 / r as f64)).sum::<f64>() / n;
    let hit_at = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
            (k, hits as f64 / n)
        })
        .collect();
    Ok(RankingReport {
        n_examples: rankings.len(),
        mrr,
        hit_at,
    })
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn ngrams(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

fn f1(overlap: f64, pred: f64, gold: f64) -> f64 {
    if overlap == 0.0 {
        return 0.0;
    }
    let (p, r) = (overlap / pred, overlap / gold);
    2.0 * p * r / (p + r)
}

/// ROUGE-N F1 on lowercase whitespace tokens. When neither side has an
/// n-gram the score is 1 if the token sequences are equal, else 0.
pub fn rouge_n(pred: &str, gold: &str, n: usize) -> f64 {
    let (p, g) = (words(pred), words(gold));
    let (pn, gn) = (ngrams(&p, n), ngrams(&g, n));
    let (pt, gt) = (pn.values().sum::<usize>(), gn.values().sum::<usize>());
    if pt == 0 && gt == 0 {
        return if p == g { 1.0 } else { 0.0 };
    }
    if pt == 0 || gt == 0 {
        return 0.0;
    }
    let overlap: usize = pn.iter().map(|(k, c)| (*c).min(gn.get(k).copied().unwrap_or(0))).sum();
    f1(overlap as f64, pt as f64, gt as f64)
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    for x in a {
        let mut cur = vec![0; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// ROUGE-L F1 on lowercase whitespace tokens.
pub fn rouge_l(pred: &str, gold: &str) -> f64 {
    let (p, g) = (words(pred), words(gold));
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    f1(lcs(&p, &g) as f64, p.len() as f64, g.len() as f64)
}

fn items(s: &str) -> HashSet<String> {
    s.split(" ; ")
        .map(|i| i.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
        .filter(|i| !i.is_empty())
        .collect()
}

/// Set F1 over the `" ; "`-separated items of two serialized queries.
pub fn exact_f1(pred: &str, gold: &str) -> f64 {
    let (p, g) = (items(pred), items(gold));
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    let overlap = p.intersection(&g).count();
    f1(overlap as f64, p.len() as f64, g.len() as f64)
}

/// Mean exact-F1 and ROUGE over `(predicted, gold)` query strings.
pub fn query_metrics(pairs: &[(String, String)]) -> Result<QueryReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = pairs.len() as f64;
    let mean = |f: &dyn Fn(&str, &str) -> f64| pairs.iter().map(|(p, g)| f(p, g)).sum::<f64>() / n;
    Ok(QueryReport {
        n_examples: pairs.len(),
        exact_f1: mean(&exact_f1),
        rouge_1: mean(&|p, g| rouge_n(p, g, 1)),
        rouge_2: mean(&|p, g| rouge_n(p, g, 2)),
        rouge_l: mean(&rouge_l),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::bm25::RankedItem;

    fn ranked(ids: &[&str]) -> RankedResult {
        RankedResult {
            items: ids
                .iter()
                .map(|i| RankedItem {
                    id: i.to_string(),
                    score: 1.0,
                    demoted: false,
                })
                .collect(),
        }
    }

    #[test]
    fn mrr_of_ranks_1_2_4() {
        let rs = vec![
            (ranked(&["g", "a"]), "g".to_string()),
            (ranked(&["a", "g"]), "g".to_string()),
            (ranked(&["a", "b", "c", "g"]), "g".to_string()),
        ];
        let r = ranking_metrics(&rs, &[1, 2, 10]).unwrap();
        assert!((r.mrr - 1.75 / 3.0).abs() < 1e-12);
        assert_eq!(r.hit_at[&1], 1.0 / 3.0);
        assert_eq!(r.hit_at[&2], 2.0 / 3.0);
        assert_eq!(r.hit_at[&10], 1.0);
    }

    #[test]
    fn absent_gold_scores_zero() {
        let rs = vec![(ranked(&["a"]), "g".to_string()), (ranked(&[]), "g".to_string())];
        let r = ranking_metrics(&rs, &[1, 100]).unwrap();
        assert_eq!(r.mrr, 0.0);
        assert!(r.hit_at.values().all(|&h| h == 0.0));
        assert_eq!(ranking_metrics(&[], &[1]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn identical_strings_score_one() {
        let s = "lipstick ; + color: dynamite red ; - brand: gocheaper";
        assert_eq!(exact_f1(s, s), 1.0);
        assert_eq!(rouge_n(s, s, 1), 1.0);
        assert_eq!(rouge_n(s, s, 2), 1.0);
        assert_eq!(rouge_l(s, s), 1.0);
        assert_eq!(rouge_n("mug", "mug", 2), 1.0);
        assert_eq!(rouge_n("mug", "cup", 2), 0.0);
    }

    #[test]
    fn hand_computed_partial_scores() {
        // pred: a b c d, gold: a b x; unigram overlap 2 -> P 1/2, R 2/3, F 4/7
        assert!((rouge_n("a b c d", "a b x", 1) - 4.0 / 7.0).abs() < 1e-12);
        // bigram overlap {a b} -> P 1/3, R 1/2, F 2/5
        assert!((rouge_n("a b c d", "a b x", 2) - 0.4).abs() < 1e-12);
        // LCS(a c b d, a b d) = 3 -> P 3/4, R 1, F 6/7
        assert!((rouge_l("a c b d", "a b d") - 6.0 / 7.0).abs() < 1e-12);
        // clipped counts: pred "a a a", gold "a b" -> overlap 1, P 1/3, R 1/2
        assert!((rouge_n("a a a", "a b", 1) - 0.4).abs() < 1e-12);
        // items {x, y} vs {y, z}: F1 1/2
        assert!((exact_f1("x ; y", "Y ; z") - 0.5).abs() < 1e-12);
        assert_eq!(exact_f1("", ""), 1.0);
        assert_eq!(exact_f1("", "x"), 0.0);
    }

    #[test]
    fn query_report_means() {
        let pairs = vec![("a".to_string(), "a".to_string()), ("b".to_string(), "c".to_string())];
        let q = query_metrics(&pairs).unwrap();
        assert_eq!(q.exact_f1, 0.5);
        assert_eq!(q.rouge_1, 0.5);
        assert_eq!(q.n_examples, 2);
    }
}
