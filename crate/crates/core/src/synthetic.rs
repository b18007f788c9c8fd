//! Seeded synthetic catalogs for tests, benchmarks and demos.
//!
//! Value vocabularies are disjoint across aspects and share no words with
//! aspect names, category names or the template conversation wording, so
//! generated conversations can be matched back to the catalog without
//! ambiguity. Value frequencies are Zipf-skewed, and non-brand aspects are
//! sometimes missing.

use indexmap::IndexMap;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, CatalogError, Product};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCategory {
    pub name: String,
    pub aspects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub domain: String,
    pub categories: Vec<SyntheticCategory>,
    /// Aspect to its value vocabulary, most common first.
    pub vocabulary: IndexMap<String, Vec<String>>,
    /// Words appended to titles.
    pub title_words: Vec<String>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let vocab: &[(&str, &[&str])] = &[
            ("brand", &["Zentrix", "Orvella", "Kumo", "Brightline", "Halvard", "Nexa", "Pellucid", "Tamsin"]),
            ("color", &["charcoal", "ivory", "navy blue", "crimson", "teal", "amber", "olive", "coral", "lavender", "mustard"]),
            ("material", &["aluminum", "leather", "silicone", "bamboo", "polycarbonate", "walnut wood", "canvas"]),
            ("size", &["medium", "compact", "extra large", "petite", "oversized"]),
            ("style", &["minimalist", "vintage", "rugged", "sporty", "elegant", "retro"]),
            ("finish", &["matte", "glossy", "brushed", "satin", "textured"]),
            ("pattern", &["solid", "striped", "checkered", "floral", "camouflage"]),
            ("connectivity", &["bluetooth", "wired", "usb c", "wifi", "infrared"]),
            ("power source", &["rechargeable", "battery", "mains", "solar"]),
            ("weight class", &["lightweight", "midweight", "featherweight", "heavyweight"]),
            ("origin", &["japan", "germany", "mexico", "vietnam", "canada"]),
            ("warranty", &["limited", "extended", "lifetime", "standard"]),
        ];
        let cats: &[(&str, &[&str])] = &[
            ("desk lamp", &["brand", "color", "material", "power source", "style", "finish", "warranty"]),
            ("backpack", &["brand", "color", "material", "size", "pattern", "style", "weight class", "warranty"]),
            ("speaker", &["brand", "color", "connectivity", "power source", "size", "finish", "origin", "warranty"]),
            ("phone case", &["brand", "color", "material", "pattern", "finish", "origin"]),
        ];
        SyntheticSpec {
            domain: "home and gadgets".into(),
            categories: cats
                .iter()
                .map(|(n, a)| SyntheticCategory {
                    name: n.to_string(),
                    aspects: a.iter().map(|s| s.to_string()).collect(),
                })
                .collect(),
            vocabulary: vocab
                .iter()
                .map(|(a, vs)| (a.to_string(), vs.iter().map(|s| s.to_string()).collect()))
                .collect(),
            title_words: ["Classic", "Pro", "Essential", "Deluxe", "Series", "Edition", "Plus", "Select"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_products: usize,
    pub seed: u64,
    /// Chance that a non-brand aspect is absent from a product.
    pub missing_rate: f64,
    /// Exponent of the value-frequency power law.
    pub zipf_exponent: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_products: 1000,
            seed: 0,
            missing_rate: 0.1,
            zipf_exponent: 1.0,
        }
    }
}

fn zipf(n: usize, s: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| 1.0 / (r as f64).powf(s))).expect("non-empty vocabulary")
}

/// Generates `cfg.n_products` products spread evenly over `spec.categories`.
pub fn synthetic_products(spec: &SyntheticSpec, cfg: &SyntheticConfig) -> Vec<Product> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dists: IndexMap<&str, WeightedIndex<f64>> = spec
        .vocabulary
        .iter()
        .map(|(a, vs)| (a.as_str(), zipf(vs.len(), cfg.zipf_exponent)))
        .collect();
    let width = cfg.n_products.max(1).to_string().len().max(5);
    (0..cfg.n_products)
        .map(|i| {
            let cat = &spec.categories[i % spec.categories.len()];
            let mut aspects: Vec<(String, String)> = Vec::new();
            let mut dropped = Vec::new();
            for a in &cat.aspects {
                let value = spec.vocabulary[a.as_str()][dists[a.as_str()].sample(&mut rng)].clone();
                let keep = a == "brand" || !rng.gen_bool(cfg.missing_rate);
                if keep {
                    aspects.push((a.clone(), value));
                } else {
                    dropped.push((a.clone(), value));
                }
            }
            // products need at least two features
            while aspects.len() < 2 && !dropped.is_empty() {
                aspects.push(dropped.remove(0));
            }
            let brand = aspects.iter().find(|(a, _)| a == "brand").map(|(_, v)| v.clone());
            let word = spec.title_words.choose(&mut rng).cloned();
            let title = [brand, Some(cat.name.clone()), word]
                .into_iter()
                .flatten()
                .collect::<Vec<_>>()
                .join(" ");
            Product::new(&format!("syn-{i:0width$}"), &cat.name, &title, aspects)
        })
        .collect()
}

pub fn synthetic_catalog(spec: &SyntheticSpec, cfg: &SyntheticConfig) -> Result<Catalog, CatalogError> {
    Catalog::new(&spec.domain, synthetic_products(spec, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokens;
    use std::collections::HashSet;

    #[test]
    fn deterministic_and_sized() {
        let cfg = SyntheticConfig {
            n_products: 200,
            ..Default::default()
        };
        let a = synthetic_catalog(&SyntheticSpec::default(), &cfg).unwrap();
        let b = synthetic_catalog(&SyntheticSpec::default(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        assert_eq!(a.categories().count(), 4);
        assert!(a.products().iter().all(|p| p.feature_count() >= 2));
    }

    #[test]
    fn vocabularies_do_not_share_words() {
        let spec = SyntheticSpec::default();
        let mut owner: std::collections::HashMap<String, String> = Default::default();
        let names: HashSet<String> = spec
            .vocabulary
            .keys()
            .chain(spec.categories.iter().map(|c| &c.name))
            .flat_map(|s| tokens(s))
            .collect();
        for (aspect, values) in &spec.vocabulary {
            for v in values {
                for t in tokens(v) {
                    assert!(!names.contains(&t), "{t} collides with a name");
                    if let Some(prev) = owner.insert(t.clone(), aspect.clone()) {
                        assert_eq!(&prev, aspect, "{t} shared by {prev} and {aspect}");
                    }
                }
            }
        }
        // nor with the template wording or hedge phrases
        use crate::dialogue::*;
        let mut fixed = vec![
            customer_opening(""),
            seller_recommendation(""),
            seller_closing(""),
            CUSTOMER_THANKS.to_string(),
            "Do you have a preference for ? And what about ? Popular ones are or . A popular one is".into(),
            "I'd like to be . I don't want for . I have no preference for .".into(),
        ];
        fixed.extend(TrackerConfig::default().hedges);
        let fixed: HashSet<String> = fixed.iter().flat_map(|s| tokens(s)).collect();
        for t in owner.keys() {
            assert!(!fixed.contains(t), "{t} appears in template wording");
        }
        for c in &spec.categories {
            for a in &c.aspects {
                assert!(spec.vocabulary.contains_key(a));
            }
        }
    }
}
