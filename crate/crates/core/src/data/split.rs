//! Seen/unseen category splits with a per-category train/val partition.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::manifest::{Manifest, ManifestRecord};
use crate::data::sample::Category;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub unseen_categories: BTreeSet<Category>,
    pub train_fraction: f64,
    pub seed: u64,
    /// Accept unseen categories that do not occur in the data.
    #[serde(default)]
    pub allow_missing_unseen: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            unseen_categories: BTreeSet::new(),
            train_fraction: 0.8,
            seed: 0,
            allow_missing_unseen: false,
        }
    }
}

/// Indices into the original item list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub unseen: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub unseen: Vec<T>,
}

/// Number of training items out of `n` for a category: floor(n·f), with the
/// remainder going to validation. A tiny slack absorbs binary rounding such
/// as `0.8 * 5 = 4.000…`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction) + 1e-9).floor() as usize
}

pub fn split_indices(categories: &[&Category], spec: &SplitSpec) -> Result<SplitIndices> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction {} must lie in (0, 1)",
            spec.train_fraction
        )));
    }
    let mut by_cat: BTreeMap<&Category, Vec<usize>> = BTreeMap::new();
    for (i, c) in categories.iter().enumerate() {
        by_cat.entry(*c).or_default().push(i);
    }
    if !spec.allow_missing_unseen {
        if let Some(missing) = spec
            .unseen_categories
            .iter()
            .find(|c| !by_cat.contains_key(c))
        {
            return Err(Error::UnknownUnseenCategory(missing.to_string()));
        }
    }
    if !by_cat.is_empty() && by_cat.keys().all(|c| spec.unseen_categories.contains(*c)) {
        return Err(Error::EmptySeenSet);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = SplitIndices::default();
    for (cat, mut idx) in by_cat {
        if spec.unseen_categories.contains(cat) {
            out.unseen.extend(idx);
            continue;
        }
        idx.shuffle(&mut rng);
        let k = train_count(idx.len(), spec.train_fraction);
        out.train.extend_from_slice(&idx[..k]);
        out.val.extend_from_slice(&idx[k..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.unseen.sort_unstable();
    Ok(out)
}

pub fn split_dataset(manifest: &Manifest, spec: &SplitSpec) -> Result<Split<ManifestRecord>> {
    let cats: Vec<&Category> = manifest.records.iter().map(|r| &r.category).collect();
    let idx = split_indices(&cats, spec)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| manifest.records[i].clone()).collect();
    Ok(Split {
        train: pick(&idx.train),
        val: pick(&idx.val),
        unseen: pick(&idx.unseen),
    })
}
