//! Target sampling and customer preference synthesis.
//!
//! Each aspect of the sampled target independently receives an interest.
//! Wanted entries keep the target's value, optional entries drop it, and
//! unwanted entries swap in a different value seen for the same aspect in
//! the target's category.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, Product};
use crate::search::{Interest, Preference, PreferenceEntry};
use crate::text::fold;

#[derive(Debug, Error, PartialEq)]
pub enum PreferenceError {
    #[error("empty catalog")]
    EmptyCatalog,
    #[error("interest weights must be non-negative and sum to 1, got {0:?}")]
    BadWeights(InterestWeights),
    #[error("a wanted entry is impossible with zero wanted weight")]
    NoWantedPossible,
    #[error("target {0:?} has no aspects")]
    NoAspects(String),
    #[error("aspect {aspect:?} has no alternative to {value:?} in category {category:?}")]
    Uncorruptable {
        aspect: String,
        value: String,
        category: String,
    },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
}

/// Probabilities of assigning wanted / unwanted / optional to an aspect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterestWeights {
    pub wanted: f64,
    pub unwanted: f64,
    pub optional: f64,
}

impl Default for InterestWeights {
    fn default() -> Self {
        InterestWeights {
            wanted: 1.0 / 3.0,
            unwanted: 1.0 / 3.0,
            optional: 1.0 / 3.0,
        }
    }
}

impl InterestWeights {
    pub fn new(wanted: f64, unwanted: f64, optional: f64) -> Result<Self, PreferenceError> {
        let w = InterestWeights {
            wanted,
            unwanted,
            optional,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), PreferenceError> {
        let parts = [self.wanted, self.unwanted, self.optional];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(PreferenceError::BadWeights(*self));
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Interest {
        let u: f64 = rng.gen();
        if u < self.wanted {
            Interest::Wanted
        } else if u < self.wanted + self.unwanted {
            Interest::Unwanted
        } else {
            Interest::Optional
        }
    }
}

/// Uniformly samples a target product.
pub fn sample_target<'a, R: Rng + ?Sized>(
    catalog: &'a Catalog,
    rng: &mut R,
) -> Result<&'a Product, PreferenceError> {
    if catalog.is_empty() {
        return Err(PreferenceError::EmptyCatalog);
    }
    Ok(catalog.product(rng.gen_range(0..catalog.len())))
}

/// Draws a value for `aspect` within `category` that differs from `true_value`.
pub fn corrupt_value<R: Rng + ?Sized>(
    aspect: &str,
    true_value: &str,
    catalog: &Catalog,
    category: &str,
    rng: &mut R,
) -> Result<String, PreferenceError> {
    let stats = catalog
        .aspect_value_stats(category)
        .map_err(|_| PreferenceError::UnknownCategory(category.to_string()))?;
    let truth = fold(true_value);
    let alternatives: Vec<&String> = stats
        .get(aspect)
        .map(|values| values.keys().filter(|v| fold(v) != truth).collect())
        .unwrap_or_default();
    alternatives
        .choose(rng)
        .map(|v| v.to_string())
        .ok_or_else(|| PreferenceError::Uncorruptable {
            aspect: aspect.to_string(),
            value: true_value.to_string(),
            category: category.to_string(),
        })
}

/// Synthesizes a preference from `target`, guaranteeing at least one wanted entry.
pub fn sample_preference<R: Rng + ?Sized>(
    target: &Product,
    catalog: &Catalog,
    rng: &mut R,
    weights: &InterestWeights,
) -> Result<Preference, PreferenceError> {
    weights.validate()?;
    if target.aspects.is_empty() {
        return Err(PreferenceError::NoAspects(target.id.clone()));
    }
    if weights.wanted <= 0.0 {
        return Err(PreferenceError::NoWantedPossible);
    }
    let interests = loop {
        let draw: Vec<Interest> = target.aspects.iter().map(|_| weights.draw(rng)).collect();
        if draw.contains(&Interest::Wanted) {
            break draw;
        }
    };
    let mut entries = Vec::with_capacity(interests.len());
    for ((aspect, value), interest) in target.aspects.iter().zip(interests) {
        let entry = match interest {
            Interest::Wanted => PreferenceEntry::wanted(aspect, value),
            Interest::Optional => PreferenceEntry::optional(aspect),
            Interest::Unwanted => {
                match corrupt_value(aspect, value, catalog, &target.category, rng) {
                    Ok(other) => PreferenceEntry::unwanted(aspect, &other),
                    Err(PreferenceError::Uncorruptable { .. }) => PreferenceEntry::optional(aspect),
                    Err(e) => return Err(e),
                }
            }
        };
        entries.push(entry);
    }
    Ok(Preference::new(&target.category, &target.id, entries)
        .expect("target aspects are unique and entries well-formed"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::satisfies;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn colors(values: &[&str]) -> Catalog {
        let products = values
            .iter()
            .enumerate()
            .map(|(i, c)| Product::new(&format!("p{i}"), "case", "t", [("Color", *c), ("Brand", "x")]))
            .collect();
        Catalog::new("d", products).unwrap()
    }

    #[test]
    fn single_product_catalog_samples_it() {
        let cat = colors(&["blue"]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(sample_target(&cat, &mut rng).unwrap().id, "p0");
    }

    #[test]
    fn sampling_is_seeded() {
        let cat = colors(&["a", "b", "c", "d", "e", "f", "g", "h"]);
        let ids = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100)
                .map(|_| sample_target(&cat, &mut rng).unwrap().id.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(1), ids(1));
        let (a, b) = (ids(1), ids(2));
        let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
        // expected 100/8 = 12.5 collisions under independence
        assert!(same < 40, "{same} collisions");
    }

    #[test]
    fn corruption() {
        let cat = colors(&["blue", "red"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(corrupt_value("Color", "blue", &cat, "case", &mut rng).unwrap(), "red");

        let cat = colors(&["blue", "blue"]);
        assert!(matches!(
            corrupt_value("Color", "blue", &cat, "case", &mut rng),
            Err(PreferenceError::Uncorruptable { .. })
        ));

        let cat = colors(&["blue", "red", "green"]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            corrupt_value("Color", "blue", &cat, "case", &mut rng).unwrap()
        };
        let v = draw(42);
        assert!(v == "red" || v == "green");
        assert_eq!(v, draw(42));
    }

    #[test]
    fn all_wanted_weights_copy_target() {
        let cat = colors(&["blue", "red"]);
        let target = cat.product(0);
        let w = InterestWeights::new(1.0, 0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pref = sample_preference(target, &cat, &mut rng, &w).unwrap();
        assert_eq!(
            pref.entries,
            vec![PreferenceEntry::wanted("Color", "blue"), PreferenceEntry::wanted("Brand", "x")]
        );
        assert_eq!(pref.target_id, "p0");
    }

    #[test]
    fn uncorruptable_unwanted_becomes_optional() {
        // Brand has a single value in the category.
        let cat = colors(&["blue", "red"]);
        let w = InterestWeights::new(0.5, 0.5, 0.0).unwrap();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pref = sample_preference(cat.product(0), &cat, &mut rng, &w).unwrap();
            let brand = pref.entry("Brand").unwrap();
            assert_ne!(brand.interest, Interest::Unwanted);
            if let Some(c) = pref.entry("Color").filter(|e| e.interest == Interest::Unwanted) {
                assert_eq!(c.value, "red");
            }
            assert!(satisfies(cat.product(0), &pref));
        }
    }

    #[test]
    fn weights_validation() {
        assert!(InterestWeights::new(0.5, 0.6, 0.0).is_err());
        assert!(InterestWeights::new(-0.1, 0.6, 0.5).is_err());
        InterestWeights::default().validate().unwrap();
        let cat = colors(&["blue", "red"]);
        let w = InterestWeights::new(0.0, 0.5, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_preference(cat.product(0), &cat, &mut rng, &w),
            Err(PreferenceError::NoWantedPossible)
        );
    }
}
