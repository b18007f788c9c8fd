//! Okapi BM25 over product documents.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{EvalError, Query};
use crate::catalog::Catalog;
use crate::text::{fold, tokens};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// `ln(1 + (n - df + 0.5) / (df + 0.5))`, which stays positive for any df.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// One query term's contribution to one document.
pub fn term_score(params: Bm25Params, idf: f64, tf: usize, doc_len: usize, avgdl: f64) -> f64 {
    let tf = tf as f64;
    let norm = 1.0 - params.b + params.b * doc_len as f64 / avgdl;
    idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
}

/// Query terms with their multiplicities, in term order.
pub fn query_terms(text: &str) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for t in tokens(text) {
        *m.entry(t).or_default() += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub id: String,
    pub score: f64,
    /// Matched an unwanted aspect-value pair and was moved below the rest.
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub demoted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub items: Vec<RankedItem>,
}

impl RankedResult {
    /// 1-based rank of `id`.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|it| it.id == id).map(|p| p + 1)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.items.iter().map(|it| it.id.as_str()).collect()
    }
}

/// Immutable inverted index.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    ids: Vec<String>,
    doc_len: Vec<usize>,
    avgdl: f64,
    postings: HashMap<String, Vec<(usize, usize)>>,
    /// Folded aspect to folded value, per document.
    pairs: Vec<HashMap<String, String>>,
}

impl Bm25Index {
    /// Indexes `(id, text)` documents.
    pub fn from_documents(params: Bm25Params, docs: Vec<(String, String)>) -> Result<Self, EvalError> {
        let n = docs.len();
        Self::build(params, docs.into_iter().map(|(id, text)| (id, text, HashMap::new())).collect(), n)
    }

    fn build(params: Bm25Params, docs: Vec<(String, String, HashMap<String, String>)>, n: usize) -> Result<Self, EvalError> {
        if n == 0 {
            return Err(EvalError::EmptyCatalog);
        }
        let mut ids = Vec::with_capacity(n);
        let mut doc_len = Vec::with_capacity(n);
        let mut pairs = Vec::with_capacity(n);
        let mut postings: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
        for (d, (id, text, p)) in docs.into_iter().enumerate() {
            let toks = tokens(&text);
            doc_len.push(toks.len());
            let mut tf: BTreeMap<String, usize> = BTreeMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1;
            }
            for (t, c) in tf {
                postings.entry(t).or_default().push((d, c));
            }
            ids.push(id);
            pairs.push(p);
        }
        let avgdl = (doc_len.iter().sum::<usize>() as f64 / n as f64).max(f64::MIN_POSITIVE);
        Ok(Bm25Index {
            params,
            ids,
            doc_len,
            avgdl,
            postings,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Score of every document for a text query.
    ///
    /// Each document's term contributions are summed in ascending order, so
    /// documents matching the same contributions through different terms get
    /// bit-identical scores and fall back to the id tie-break.
    pub fn scores(&self, text: &str) -> Vec<f64> {
        let mut parts: Vec<Vec<f64>> = vec![Vec::new(); self.ids.len()];
        for (term, qtf) in query_terms(text) {
            let Some(list) = self.postings.get(&term) else { continue };
            let w = idf(self.ids.len(), list.len());
            for &(d, tf) in list {
                parts[d].push(qtf as f64 * term_score(self.params, w, tf, self.doc_len[d], self.avgdl));
            }
        }
        parts
            .into_iter()
            .map(|mut p| {
                p.sort_by(f64::total_cmp);
                p.into_iter().sum()
            })
            .collect()
    }

    fn matches_pair(&self, d: usize, aspect: &str, value: &str) -> bool {
        self.pairs[d].get(&fold(aspect)).is_some_and(|v| *v == fold(value))
    }

    /// Top `k` documents with positive score.
    pub fn rank(&self, query: &Query, k: usize) -> Result<RankedResult, EvalError> {
        if k == 0 {
            return Err(EvalError::BadK);
        }
        let (text, unwanted) = match query {
            Query::Text(t) => (t.clone(), Vec::new()),
            Query::Structured(q) => (q.flatten(), q.unwanted.clone()),
        };
        let scores = self.scores(&text);
        let mut items: Vec<RankedItem> = scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0.0)
            .map(|(d, &score)| RankedItem {
                id: self.ids[d].clone(),
                score,
                demoted: unwanted.iter().any(|(a, v)| self.matches_pair(d, a, v)),
            })
            .collect();
        items.sort_by(|a, b| {
            a.demoted
                .cmp(&b.demoted)
                .then(b.score.total_cmp(&a.score))
                .then_with(|| a.id.cmp(&b.id))
        });
        items.truncate(k);
        Ok(RankedResult { items })
    }
}

/// Title followed by `aspect value` pairs.
pub fn product_document(title: &str, aspects: impl IntoIterator<Item = (impl AsRef<str>, impl AsRef<str>)>) -> String {
    let mut doc = title.to_string();
    for (a, v) in aspects {
        doc.push(' ');
        doc.push_str(a.as_ref());
        doc.push(' ');
        doc.push_str(v.as_ref());
    }
    doc
}

/// Indexes every product in `catalog`.
pub fn index_products(catalog: &Catalog, params: Bm25Params) -> Result<Bm25Index, EvalError> {
    let docs = catalog
        .products()
        .iter()
        .map(|p| {
            let pairs = p.aspects.iter().map(|(a, v)| (fold(a), fold(v))).collect();
            (p.id.clone(), product_document(&p.title, &p.aspects), pairs)
        })
        .collect();
    Bm25Index::build(params, docs, catalog.len())
}

/// Convenience wrapper over [`Bm25Index::rank`].
pub fn rank(index: &Bm25Index, query: &Query, k: usize) -> Result<RankedResult, EvalError> {
    index.rank(query, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Product;
    use crate::eval::StructuredQuery;

    fn index(docs: &[(&str, &str)]) -> Bm25Index {
        Bm25Index::from_documents(
            Bm25Params::default(),
            docs.iter().map(|(i, t)| (i.to_string(), t.to_string())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_doc_title_ranks_first() {
        let cat = Catalog::new("d", vec![Product::new("x", "mug", "Big Blue Mug", [("color", "blue"), ("size", "big")])]).unwrap();
        let idx = index_products(&cat, Bm25Params::default()).unwrap();
        let r = idx.rank(&Query::Text("Big Blue Mug".into()), 10).unwrap();
        assert_eq!(r.rank_of("x"), Some(1));
    }

    #[test]
    fn rarer_term_scores_higher() {
        // "a" occurs in every doc, "b" in one, "c" in two; d1 and d2 differ only in b vs c.
        let idx = index(&[("d1", "a b"), ("d2", "a c"), ("d3", "a c")]);
        let sb = idx.scores("b")[0];
        let sc = idx.scores("c")[1];
        assert!(sb > sc);
        assert!(idf(3, 1) > idf(3, 2));
    }

    #[test]
    fn shorter_doc_scores_higher() {
        let idx = index(&[("long", "x y z w"), ("short", "x y")]);
        let s = idx.scores("x");
        assert!(s[1] > s[0]);
        let flat = Bm25Index::from_documents(
            Bm25Params { k1: 1.2, b: 0.0 },
            vec![("long".into(), "x y z w".into()), ("short".into(), "x y".into())],
        )
        .unwrap();
        let s = flat.scores("x");
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn unknown_terms_give_empty_result() {
        let idx = index(&[("d1", "red mug")]);
        assert!(idx.rank(&Query::Text("zebra".into()), 5).unwrap().items.is_empty());
        assert_eq!(idx.rank(&Query::Text("red".into()), 0), Err(EvalError::BadK));
        assert!(matches!(Bm25Index::from_documents(Bm25Params::default(), vec![]), Err(EvalError::EmptyCatalog)));
    }

    #[test]
    fn ties_break_on_id_and_k_truncates() {
        let idx = index(&[("b", "red"), ("a", "red"), ("c", "red")]);
        let r = idx.rank(&Query::Text("red".into()), 2).unwrap();
        assert_eq!(r.ids(), ["a", "b"]);
    }

    #[test]
    fn unwanted_pair_is_demoted() {
        let cat = Catalog::new(
            "d",
            vec![
                Product::new("acme", "mug", "Red Mug", [("brand", "Acme"), ("color", "red")]),
                Product::new("other", "mug", "Mug", [("brand", "Other"), ("color", "blue")]),
            ],
        )
        .unwrap();
        let idx = index_products(&cat, Bm25Params::default()).unwrap();
        let q = StructuredQuery {
            category: "mug".into(),
            wanted: vec![],
            unwanted: vec![("brand".into(), "acme".into())],
            optional: vec![],
        };
        let r = idx.rank(&Query::Structured(q), 10).unwrap();
        assert_eq!(r.ids(), ["other", "acme"]);
        assert!(r.items[1].demoted);
    }
}
