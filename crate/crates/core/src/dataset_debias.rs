//! Dataset-level rebalancing: per label class, pair raw-tweet users with
//! rewritten-tweet users one-for-one and route everyone else to their
//! per-user mixed set.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FeatureDimension, Label, Polarity, UserRecord, Variant};
use crate::text_debias::rewrite_usable;
use crate::util::write_atomic;

/// Which tweet variant a training user contributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantAssignment {
    pub user_id: String,
    pub variant: Variant,
}

#[derive(Debug, Error)]
pub enum DatasetDebiasError {
    #[error("user {0:?} needs a mixed tweet set but none was provided")]
    MissingMixedSet(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed assignment file: {0}")]
    Malformed(String),
}

/// A user's rewrite set is valid when every tweet carries a usable rewrite.
pub fn full_rewrite_set(user: &UserRecord) -> bool {
    user.tweets.iter().all(rewrite_usable)
}

/// Assign a variant to every training user.
///
/// Per label class: a seeded shuffle splits the class into an original pool
/// (first floor(m/2) users) and a rewrite pool (the rest). Rewrite-pool users
/// with a valid rewrite set become `rewritten`; the same number of users from
/// the original pool become `raw`, keeping the two counts equal. When the
/// original pool is too small, surplus rewritten users are demoted instead.
/// Everyone left over is `mixed` and must appear in `mixed_available`.
///
/// Output covers each input user exactly once, in input order.
pub fn debias_dataset(
    train_users: &[&UserRecord],
    mixed_available: &BTreeSet<String>,
    seed: u64,
) -> Result<Vec<VariantAssignment>, DatasetDebiasError> {
    let mut by_user: BTreeMap<&str, Variant> = BTreeMap::new();
    let mut rng = Pcg64::seed_from_u64(seed);

    for label in Label::BOTH {
        let mut class: Vec<&UserRecord> = train_users
            .iter()
            .copied()
            .filter(|u| u.label == label)
            .collect();
        class.shuffle(&mut rng);
        let h = class.len() / 2;
        let (orig_pool, rewrite_pool) = class.split_at(h);

        let rewritten: Vec<&UserRecord> = rewrite_pool
            .iter()
            .copied()
            .filter(|u| full_rewrite_set(u))
            .collect();
        let paired = rewritten.len().min(orig_pool.len());
        for user in &rewritten[..paired] {
            by_user.insert(&user.user_id, Variant::Rewritten);
        }
        // The pool is already in seeded-shuffled order, so taking a prefix is
        // a uniform sample.
        for user in &orig_pool[..paired] {
            by_user.insert(&user.user_id, Variant::Raw);
        }
        for user in &class {
            if !by_user.contains_key(user.user_id.as_str()) {
                if !mixed_available.contains(&user.user_id) {
                    return Err(DatasetDebiasError::MissingMixedSet(user.user_id.clone()));
                }
                by_user.insert(&user.user_id, Variant::Mixed);
            }
        }
    }

    Ok(train_users
        .iter()
        .map(|u| VariantAssignment {
            user_id: u.user_id.clone(),
            variant: by_user[u.user_id.as_str()],
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

/// Per-class variant counts and the polarity mix that results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub raw: usize,
    pub rewritten: usize,
    pub mixed: usize,
    /// Tweet-level polarity proportions under the assigned variants.
    pub polarity_proportions: BTreeMap<String, f64>,
}

/// label -> summary
pub type AssignmentSummary = BTreeMap<String, ClassSummary>;

/// Aggregate assignments per class: variant counts and the polarity
/// proportions of the tweets each class would contribute. Mixed users need
/// their selection bits to resolve which tweets flipped.
pub fn assignment_summary(
    assignments: &[VariantAssignment],
    users: &BTreeMap<String, &UserRecord>,
    dimension: FeatureDimension,
    selections: &BTreeMap<String, Vec<bool>>,
) -> AssignmentSummary {
    let mut summary: AssignmentSummary = BTreeMap::new();
    for label in Label::BOTH {
        summary.insert(
            label.to_string(),
            ClassSummary {
                raw: 0,
                rewritten: 0,
                mixed: 0,
                polarity_proportions: BTreeMap::new(),
            },
        );
    }
    let mut polarity_counts: BTreeMap<String, BTreeMap<Polarity, usize>> = BTreeMap::new();

    for assignment in assignments {
        let Some(user) = users.get(&assignment.user_id) else {
            continue;
        };
        let entry = summary.get_mut(user.label.as_str()).expect("prefilled");
        match assignment.variant {
            Variant::Raw => entry.raw += 1,
            Variant::Rewritten => entry.rewritten += 1,
            Variant::Mixed => entry.mixed += 1,
        }
        let counts = polarity_counts.entry(user.label.to_string()).or_default();
        for (index, tweet) in user.tweets.iter().enumerate() {
            let use_rewrite = match assignment.variant {
                Variant::Raw => false,
                Variant::Rewritten => rewrite_usable(tweet),
                Variant::Mixed => selections
                    .get(&assignment.user_id)
                    .and_then(|bits| bits.get(index).copied())
                    .unwrap_or(false),
            };
            if let Some(polarity) = tweet.polarity(dimension, use_rewrite) {
                *counts.entry(polarity).or_default() += 1;
            }
        }
    }

    for (label, counts) in polarity_counts {
        let total: usize = counts.values().sum();
        if total == 0 {
            continue;
        }
        let entry = summary.get_mut(&label).expect("prefilled");
        for (polarity, count) in counts {
            entry
                .polarity_proportions
                .insert(polarity.to_string(), count as f64 / total as f64);
        }
    }
    summary
}

// ---------------------------------------------------------------------------
// Assignment file (JSONL)
// ---------------------------------------------------------------------------

pub fn save_assignments(
    path: &Path,
    assignments: &[VariantAssignment],
) -> Result<(), DatasetDebiasError> {
    let mut buf = Vec::new();
    for assignment in assignments {
        serde_json::to_writer(&mut buf, assignment).expect("assignment serializes");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)?;
    Ok(())
}

pub fn load_assignments(path: &Path) -> Result<Vec<VariantAssignment>, DatasetDebiasError> {
    let text = std::fs::read_to_string(path)?;
    let mut assignments = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        assignments.push(
            serde_json::from_str(line).map_err(|e| DatasetDebiasError::Malformed(e.to_string()))?,
        );
    }
    Ok(assignments)
}
