//! Product catalog ingestion, normalization, and per-category aspect statistics.
//!
//! Raw records arrive one JSON object per line. Aspect keys are canonicalized
//! (renames, drops), numeric price and review fields are bucketed into the
//! opaque strings the rest of the pipeline treats as categorical labels, and
//! products with fewer than two descriptive features are discarded.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{fold, format_number, squash};

pub const PRICE_KEY: &str = "price";
pub const REVIEW_KEY: &str = "customer review";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no products")]
    NoProducts,
    #[error("duplicate product id {0:?}")]
    DuplicateId(String),
    #[error("product {id:?}: {reason}")]
    InvalidProduct { id: String, reason: String },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("negative price {0}")]
    NegativePrice(f64),
    #[error("review score {0} outside [0, 5]")]
    ReviewOutOfRange(f64),
}

/// A catalog item. `aspects` keeps insertion order; keys are unique and normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub category: String,
    pub title: String,
    pub aspects: IndexMap<String, String>,
}

impl Product {
    pub fn new<I, K, V>(id: &str, category: &str, title: &str, aspects: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Product {
            id: id.to_string(),
            category: category.to_string(),
            title: title.to_string(),
            aspects: aspects
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }

    /// Value of `aspect`; exact key first, then a case-insensitive scan.
    pub fn value(&self, aspect: &str) -> Option<&str> {
        if let Some(v) = self.aspects.get(aspect) {
            return Some(v);
        }
        let key = fold(aspect);
        self.aspects
            .iter()
            .find(|(k, _)| fold(k) == key)
            .map(|(_, v)| v.as_str())
    }

    /// Number of aspects other than price and customer review.
    pub fn feature_count(&self) -> usize {
        self.aspects
            .keys()
            .filter(|k| k.as_str() != PRICE_KEY && k.as_str() != REVIEW_KEY)
            .count()
    }

    /// Whether the product carries `aspect` with a value equal to `value` after folding.
    pub fn has_value(&self, aspect: &str, value: &str) -> bool {
        self.value(aspect)
            .map(|v| fold(v) == fold(value))
            .unwrap_or(false)
    }
}

/// Normalization settings applied while loading raw records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizeConfig {
    /// Keys removed entirely, matched case-insensitively.
    pub drop_keys: BTreeSet<String>,
    /// Raw key (case-insensitive) to canonical key.
    pub rename_map: BTreeMap<String, String>,
    pub price_edges: Vec<f64>,
    pub review_ladder: Vec<f64>,
    pub min_features: usize,
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        NormalizeConfig {
            drop_keys: ["ASIN", "Date First Available", "Is Discontinued By Manufacturer"]
                .into_iter()
                .map(String::from)
                .collect(),
            rename_map: [("Colour", "Color"), ("Brand Name", "Brand")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            price_edges: vec![0.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0],
            review_ladder: vec![3.0, 3.5, 4.0, 4.5],
            min_features: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NormalizedKey {
    Keep(String),
    Drop,
}

/// Canonical form of a raw aspect key: trimmed, renamed, or dropped.
pub fn normalize_aspect_key(raw: &str, cfg: &NormalizeConfig) -> NormalizedKey {
    let key = squash(raw);
    let folded = fold(&key);
    if key.is_empty() || cfg.drop_keys.iter().any(|d| fold(d) == folded) {
        return NormalizedKey::Drop;
    }
    if let Some((_, to)) = cfg.rename_map.iter().find(|(from, _)| fold(from) == folded) {
        return NormalizedKey::Keep(to.clone());
    }
    match folded.as_str() {
        "price" => NormalizedKey::Keep(PRICE_KEY.to_string()),
        "customer review" | "customer reviews" => NormalizedKey::Keep(REVIEW_KEY.to_string()),
        _ => NormalizedKey::Keep(key),
    }
}

/// Buckets a price into `between $L and $U`, or `higher than $E` past the last edge.
pub fn bucket_price(price: f64, edges: &[f64]) -> Result<String, CatalogError> {
    if price < 0.0 || price.is_nan() {
        return Err(CatalogError::NegativePrice(price));
    }
    for pair in edges.windows(2) {
        if price >= pair[0] && price < pair[1] {
            return Ok(format!(
                "between ${} and ${}",
                format_number(pair[0]),
                format_number(pair[1])
            ));
        }
    }
    match edges.last() {
        Some(&last) if price >= last => Ok(format!("higher than ${}", format_number(last))),
        // below the first edge
        _ => Ok(format!("lower than ${}", format_number(edges.first().copied().unwrap_or(0.0)))),
    }
}

/// Maps a star rating onto the largest ladder rung not exceeding it.
pub fn bucket_review(stars: f64, ladder: &[f64]) -> Result<String, CatalogError> {
    if !(0.0..=5.0).contains(&stars) {
        return Err(CatalogError::ReviewOutOfRange(stars));
    }
    match ladder.iter().rev().find(|&&t| t <= stars) {
        Some(&t) => Ok(format!("higher than {} stars", format_number(t))),
        None => Ok(format!(
            "lower than {} stars",
            format_number(ladder.first().copied().unwrap_or(0.0))
        )),
    }
}

fn parse_amount(s: &str) -> Option<f64> {
    s.trim().trim_start_matches('$').replace(',', "").parse().ok()
}

/// Whether a string is already in one of the price bucket forms.
pub fn is_price_bucket(s: &str) -> bool {
    if let Some(rest) = s.strip_prefix("between $") {
        if let Some((lo, hi)) = rest.split_once(" and $") {
            return lo.parse::<f64>().is_ok() && hi.parse::<f64>().is_ok();
        }
        return false;
    }
    ["higher than $", "lower than $"]
        .iter()
        .any(|p| s.strip_prefix(p).is_some_and(|n| n.parse::<f64>().is_ok()))
}

/// Whether a string is already in one of the review bucket forms.
pub fn is_review_bucket(s: &str) -> bool {
    ["higher than ", "lower than "].iter().any(|p| {
        s.strip_prefix(p)
            .and_then(|r| r.strip_suffix(" stars"))
            .is_some_and(|n| n.parse::<f64>().is_ok())
    })
}

/// One line of the product record format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub id: String,
    pub category: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<f64>,
    #[serde(default)]
    pub aspects: IndexMap<String, String>,
}

/// Applies key normalization and bucketing to a raw record.
///
/// Returns `Ok(None)` when the product is discarded for having too few features.
pub fn normalize_record(
    rec: ProductRecord,
    cfg: &NormalizeConfig,
) -> Result<Option<Product>, String> {
    let id = squash(&rec.id);
    let category = squash(&rec.category);
    if id.is_empty() {
        return Err("empty id".into());
    }
    if category.is_empty() {
        return Err("empty category".into());
    }
    let mut aspects: IndexMap<String, String> = IndexMap::new();
    for (raw_key, raw_value) in &rec.aspects {
        let NormalizedKey::Keep(key) = normalize_aspect_key(raw_key, cfg) else {
            continue;
        };
        let value = squash(raw_value);
        if value.is_empty() || aspects.contains_key(&key) {
            continue;
        }
        let value = if key == PRICE_KEY && !is_price_bucket(&value) {
            match parse_amount(&value).map(|p| bucket_price(p, &cfg.price_edges)) {
                Some(Ok(b)) => b,
                _ => continue,
            }
        } else if key == REVIEW_KEY && !is_review_bucket(&value) {
            match parse_amount(&value).map(|r| bucket_review(r, &cfg.review_ladder)) {
                Some(Ok(b)) => b,
                _ => continue,
            }
        } else {
            value
        };
        aspects.insert(key, value);
    }
    if let Some(p) = rec.price {
        let b = bucket_price(p, &cfg.price_edges).map_err(|e| e.to_string())?;
        aspects.insert(PRICE_KEY.to_string(), b);
    }
    if let Some(r) = rec.review {
        let b = bucket_review(r, &cfg.review_ladder).map_err(|e| e.to_string())?;
        aspects.insert(REVIEW_KEY.to_string(), b);
    }
    let product = Product {
        id,
        category,
        title: squash(&rec.title),
        aspects,
    };
    if product.feature_count() < cfg.min_features {
        return Ok(None);
    }
    Ok(Some(product))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

/// What happened to the input while loading.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub read: usize,
    pub skipped: Vec<SkippedLine>,
    pub too_few_features: usize,
}

type AspectStats = BTreeMap<String, BTreeMap<String, usize>>;

/// An immutable, indexed product collection for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    domain: String,
    products: Vec<Product>,
    by_id: HashMap<String, usize>,
    category_index: BTreeMap<String, Vec<usize>>,
    aspect_value_index: BTreeMap<String, AspectStats>,
}

impl Catalog {
    /// Builds the indexes over `products`.
    ///
    /// Values that differ only in case or spacing within one (category, aspect)
    /// are unified to the first spelling seen, so equality and grouping agree.
    pub fn new(domain: &str, mut products: Vec<Product>) -> Result<Self, CatalogError> {
        if products.is_empty() {
            return Err(CatalogError::NoProducts);
        }
        let mut spelling: HashMap<(String, String, String), String> = HashMap::new();
        let mut by_id = HashMap::with_capacity(products.len());
        for (idx, p) in products.iter_mut().enumerate() {
            if p.id.is_empty() {
                return Err(CatalogError::InvalidProduct {
                    id: p.id.clone(),
                    reason: "empty id".into(),
                });
            }
            if by_id.insert(p.id.clone(), idx).is_some() {
                return Err(CatalogError::DuplicateId(p.id.clone()));
            }
            if p.feature_count() < 2 {
                return Err(CatalogError::InvalidProduct {
                    id: p.id.clone(),
                    reason: "fewer than two features".into(),
                });
            }
            for (aspect, value) in p.aspects.iter_mut() {
                let k = (p.category.clone(), aspect.clone(), fold(value));
                let canonical = spelling.entry(k).or_insert_with(|| squash(value));
                *value = canonical.clone();
            }
        }

        let mut category_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut aspect_value_index: BTreeMap<String, AspectStats> = BTreeMap::new();
        for (idx, p) in products.iter().enumerate() {
            category_index.entry(p.category.clone()).or_default().push(idx);
            let stats = aspect_value_index.entry(p.category.clone()).or_default();
            for (a, v) in &p.aspects {
                *stats.entry(a.clone()).or_default().entry(v.clone()).or_default() += 1;
            }
        }
        Ok(Catalog {
            domain: domain.to_string(),
            products,
            by_id,
            category_index,
            aspect_value_index,
        })
    }

    /// Loads a line-delimited product file. Malformed lines are skipped and reported.
    pub fn load(
        path: &Path,
        domain: &str,
        cfg: &NormalizeConfig,
    ) -> Result<(Catalog, LoadReport), CatalogError> {
        let file = File::open(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(BufReader::new(file), domain, cfg).map_err(|e| match e {
            CatalogError::Io { source, .. } => CatalogError::Io {
                path: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    pub fn from_reader<R: BufRead>(
        reader: R,
        domain: &str,
        cfg: &NormalizeConfig,
    ) -> Result<(Catalog, LoadReport), CatalogError> {
        let mut report = LoadReport::default();
        let mut products = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| CatalogError::Io {
                path: String::new(),
                source,
            })?;
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            report.read += 1;
            let skip = |reason: String| SkippedLine {
                line: line_no,
                reason,
            };
            let rec: ProductRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("line {line_no}: malformed record: {e}");
                    report.skipped.push(skip(e.to_string()));
                    continue;
                }
            };
            match normalize_record(rec, cfg) {
                Ok(Some(p)) => {
                    if !seen.insert(p.id.clone()) {
                        report.skipped.push(skip(format!("duplicate id {:?}", p.id)));
                        continue;
                    }
                    products.push(p);
                }
                Ok(None) => report.too_few_features += 1,
                Err(reason) => {
                    log::warn!("line {line_no}: {reason}");
                    report.skipped.push(skip(reason));
                }
            }
        }
        Ok((Catalog::new(domain, products)?, report))
    }

    /// Writes the normalized catalog back out in the product record format.
    pub fn export<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for p in &self.products {
            let rec = ProductRecord {
                id: p.id.clone(),
                category: p.category.clone(),
                title: p.title.clone(),
                price: None,
                review: None,
                aspects: p.aspects.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn product(&self, idx: usize) -> &Product {
        &self.products[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Product> {
        self.index_of(id).map(|i| &self.products[i])
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.category_index.keys().map(String::as_str)
    }

    /// Catalog indices of the products in `category`, in catalog order.
    pub fn category_members(&self, category: &str) -> Option<&[usize]> {
        self.category_index.get(category).map(Vec::as_slice)
    }

    /// Aspect → value → count over the products of `category`.
    pub fn aspect_value_stats(&self, category: &str) -> Result<&AspectStats, CatalogError> {
        self.aspect_value_index
            .get(category)
            .ok_or_else(|| CatalogError::UnknownCategory(category.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NormalizeConfig {
        NormalizeConfig::default()
    }

    #[test]
    fn key_normalization() {
        let c = cfg();
        assert_eq!(normalize_aspect_key("Colour", &c), NormalizedKey::Keep("Color".into()));
        assert_eq!(normalize_aspect_key("Brand Name", &c), NormalizedKey::Keep("Brand".into()));
        assert_eq!(normalize_aspect_key("ASIN", &c), NormalizedKey::Drop);
        assert_eq!(normalize_aspect_key("  asin ", &c), NormalizedKey::Drop);
        assert_eq!(normalize_aspect_key(" Material ", &c), NormalizedKey::Keep("Material".into()));
    }

    #[test]
    fn price_buckets() {
        let e = cfg().price_edges;
        assert_eq!(bucket_price(15.99, &e).unwrap(), "between $10 and $20");
        assert_eq!(bucket_price(0.0, &e).unwrap(), "between $0 and $10");
        assert_eq!(bucket_price(1500.0, &e).unwrap(), "higher than $1000");
        assert_eq!(bucket_price(1000.0, &e).unwrap(), "higher than $1000");
        assert!(matches!(bucket_price(-1.0, &e), Err(CatalogError::NegativePrice(_))));
        assert!(is_price_bucket(&bucket_price(55.0, &e).unwrap()));
    }

    #[test]
    fn review_buckets() {
        let l = cfg().review_ladder;
        assert_eq!(bucket_review(4.7, &l).unwrap(), "higher than 4.5 stars");
        assert_eq!(bucket_review(5.0, &l).unwrap(), "higher than 4.5 stars");
        assert_eq!(bucket_review(2.1, &l).unwrap(), "lower than 3 stars");
        assert_eq!(bucket_review(3.2, &l).unwrap(), "higher than 3 stars");
        assert!(bucket_review(5.1, &l).is_err());
        assert!(bucket_review(-0.1, &l).is_err());
        assert!(is_review_bucket("higher than 4.5 stars"));
    }

    #[test]
    fn single_feature_product_is_discarded() {
        let rec: ProductRecord = serde_json::from_str(
            r#"{"id":"a","category":"c","title":"t","price":12,"aspects":{"Colour":"blue"}}"#,
        )
        .unwrap();
        assert_eq!(normalize_record(rec, &cfg()).unwrap(), None);
    }

    #[test]
    fn empty_input_is_no_products() {
        let err = Catalog::from_reader("".as_bytes(), "d", &cfg()).unwrap_err();
        assert!(matches!(err, CatalogError::NoProducts));
        assert_eq!(err.to_string(), "no products");
    }

    #[test]
    fn stats_count_values() {
        let products = vec![
            Product::new("1", "case", "t", [("Color", "blue"), ("Brand", "x")]),
            Product::new("2", "case", "t", [("Color", "blue"), ("Brand", "y")]),
            Product::new("3", "case", "t", [("Color", "red"), ("Brand", "x")]),
            Product::new("4", "bag", "t", [("Color", "pink"), ("Brand", "x")]),
        ];
        let cat = Catalog::new("d", products).unwrap();
        let stats = cat.aspect_value_stats("case").unwrap();
        let colors = &stats["Color"];
        assert_eq!(colors.len(), 2);
        assert_eq!(colors["blue"], 2);
        assert_eq!(colors["red"], 1);
        let bag = cat.aspect_value_stats("bag").unwrap();
        assert!(bag.values().all(|vals| vals.values().all(|&c| c == 1)));
        assert!(matches!(
            cat.aspect_value_stats("shoe"),
            Err(CatalogError::UnknownCategory(_))
        ));
    }

    #[test]
    fn value_spelling_is_unified_per_aspect() {
        let products = vec![
            Product::new("1", "case", "t", [("Color", "Blue"), ("Brand", "x")]),
            Product::new("2", "case", "t", [("Color", "blue "), ("Brand", "x")]),
        ];
        let cat = Catalog::new("d", products).unwrap();
        assert_eq!(cat.aspect_value_stats("case").unwrap()["Color"]["Blue"], 2);
        assert_eq!(cat.product(1).aspects["Color"], "Blue");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let p = Product::new("1", "case", "t", [("Color", "blue"), ("Brand", "x")]);
        assert!(matches!(
            Catalog::new("d", vec![p.clone(), p]),
            Err(CatalogError::DuplicateId(_))
        ));
    }
}
