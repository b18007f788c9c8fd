//! Rule-based catalog filtering under a revealed preference, and value hints.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, Product};
use crate::text::fold;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SearchError {
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("aspect {0:?} appears twice")]
    DuplicateAspect(String),
    #[error("optional aspect {0:?} must carry an empty value")]
    OptionalWithValue(String),
    #[error("{0:?} entry for aspect {1:?} needs a value")]
    MissingValue(Interest, String),
}

/// The customer's stance on an aspect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interest {
    Wanted,
    Unwanted,
    Optional,
}

impl fmt::Display for Interest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interest::Wanted => "wanted",
            Interest::Unwanted => "unwanted",
            Interest::Optional => "optional",
        })
    }
}

/// One (aspect, value, interest) triple. Optional entries have an empty value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreferenceEntry {
    pub aspect: String,
    pub value: String,
    pub interest: Interest,
}

impl PreferenceEntry {
    pub fn wanted(aspect: &str, value: &str) -> Self {
        PreferenceEntry {
            aspect: aspect.into(),
            value: value.into(),
            interest: Interest::Wanted,
        }
    }

    pub fn unwanted(aspect: &str, value: &str) -> Self {
        PreferenceEntry {
            aspect: aspect.into(),
            value: value.into(),
            interest: Interest::Unwanted,
        }
    }

    pub fn optional(aspect: &str) -> Self {
        PreferenceEntry {
            aspect: aspect.into(),
            value: String::new(),
            interest: Interest::Optional,
        }
    }

    /// Whether `product` is compatible with this single entry.
    pub fn admits(&self, product: &Product) -> bool {
        match self.interest {
            Interest::Wanted => product.has_value(&self.aspect, &self.value),
            Interest::Unwanted => !product.has_value(&self.aspect, &self.value),
            Interest::Optional => true,
        }
    }
}

fn validate_entry(entries: &[PreferenceEntry], e: &PreferenceEntry) -> Result<(), SearchError> {
    let key = fold(&e.aspect);
    if entries.iter().any(|x| fold(&x.aspect) == key) {
        return Err(SearchError::DuplicateAspect(e.aspect.clone()));
    }
    match e.interest {
        Interest::Optional if !e.value.is_empty() => {
            Err(SearchError::OptionalWithValue(e.aspect.clone()))
        }
        Interest::Wanted | Interest::Unwanted if e.value.is_empty() => {
            Err(SearchError::MissingValue(e.interest, e.aspect.clone()))
        }
        _ => Ok(()),
    }
}

/// The part of a preference disclosed so far. Starts with the category only
/// and grows append-only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevealedPreference {
    category: String,
    entries: Vec<PreferenceEntry>,
}

impl RevealedPreference {
    pub fn new(category: &str) -> Self {
        RevealedPreference {
            category: category.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn with_entries<I>(category: &str, entries: I) -> Result<Self, SearchError>
    where
        I: IntoIterator<Item = PreferenceEntry>,
    {
        let mut r = Self::new(category);
        for e in entries {
            r.push(e)?;
        }
        Ok(r)
    }

    pub fn push(&mut self, entry: PreferenceEntry) -> Result<(), SearchError> {
        validate_entry(&self.entries, &entry)?;
        self.entries.push(entry);
        Ok(())
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn entries(&self) -> &[PreferenceEntry] {
        &self.entries
    }

    pub fn contains_aspect(&self, aspect: &str) -> bool {
        let key = fold(aspect);
        self.entries.iter().any(|e| fold(&e.aspect) == key)
    }
}

/// A sampled customer profile: category plus one entry per used target aspect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preference {
    pub category: String,
    pub entries: Vec<PreferenceEntry>,
    pub target_id: String,
}

impl Preference {
    pub fn new(
        category: &str,
        target_id: &str,
        entries: Vec<PreferenceEntry>,
    ) -> Result<Self, SearchError> {
        let mut checked: Vec<PreferenceEntry> = Vec::with_capacity(entries.len());
        for e in entries {
            validate_entry(&checked, &e)?;
            checked.push(e);
        }
        Ok(Preference {
            category: category.to_string(),
            entries: checked,
            target_id: target_id.to_string(),
        })
    }

    pub fn entry(&self, aspect: &str) -> Option<&PreferenceEntry> {
        let key = fold(aspect);
        self.entries.iter().find(|e| fold(&e.aspect) == key)
    }

    pub fn by_interest(&self, interest: Interest) -> impl Iterator<Item = &PreferenceEntry> {
        self.entries.iter().filter(move |e| e.interest == interest)
    }
}

/// Candidate products, as catalog indices in catalog order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProductSet {
    members: Vec<usize>,
}

impl ProductSet {
    pub fn from_indices(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        ProductSet { members }
    }

    pub fn indices(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.members.binary_search(&idx).is_ok()
    }

    pub fn ids(&self, catalog: &Catalog) -> Vec<String> {
        self.members
            .iter()
            .map(|&i| catalog.product(i).id.clone())
            .collect()
    }

    pub fn products<'a>(&'a self, catalog: &'a Catalog) -> impl Iterator<Item = &'a Product> + 'a {
        self.members.iter().map(move |&i| catalog.product(i))
    }

    pub fn is_subset(&self, other: &ProductSet) -> bool {
        let o: HashSet<_> = other.members.iter().collect();
        self.members.iter().all(|m| o.contains(m))
    }
}

/// Products of the preference's category compatible with every revealed entry.
pub fn filter(catalog: &Catalog, rev_pref: &RevealedPreference) -> Result<ProductSet, SearchError> {
    let members = catalog
        .category_members(rev_pref.category())
        .ok_or_else(|| SearchError::UnknownCategory(rev_pref.category().to_string()))?;
    let kept = members
        .iter()
        .copied()
        .filter(|&i| {
            let p = catalog.product(i);
            rev_pref.entries().iter().all(|e| e.admits(p))
        })
        .collect();
    Ok(ProductSet { members: kept })
}

/// Up to `k` most frequent values of `aspect` within `set`, ties broken lexicographically.
pub fn top_values(set: &ProductSet, catalog: &Catalog, aspect: &str, k: usize) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in set.products(catalog) {
        if let Some(v) = p.value(aspect) {
            *counts.entry(v).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(k).map(|(v, _)| v.to_string()).collect()
}

/// True iff `product` meets every wanted entry and hits no unwanted one.
pub fn satisfies(product: &Product, preference: &Preference) -> bool {
    product.category == preference.category && preference.entries.iter().all(|e| e.admits(product))
}

/// Loop-exit predicate: non-empty and every member satisfies the preference.
pub fn converged(set: &ProductSet, preference: &Preference, catalog: &Catalog) -> bool {
    !set.is_empty() && set.products(catalog).all(|p| satisfies(p, preference))
}
