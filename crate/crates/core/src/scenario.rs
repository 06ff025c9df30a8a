//! Shortcut and standard train/validation/test splits.
//!
//! The shortcut train set pairs (pos, bot) with (neg, human); the shortcut
//! test set reverses the pairing. Standard sets are label-balanced with
//! polarity left free. All five emitted sets are exactly 1:1 in labels,
//! pairwise disjoint, and deterministic under the spec seed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dataset, FeatureDimension, Label, Polarity};
use crate::util::write_atomic;

/// How to partition a dataset for one feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub dimension: FeatureDimension,
    pub seed: u64,
    /// Fraction of each training pool carved off as validation, in (0, 0.5).
    pub val_fraction: f64,
    /// Optional cap on the size of each emitted training set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_cap: Option<usize>,
    /// Whether neutral-polarity users may enter the standard sets.
    #[serde(default)]
    pub include_neutral_in_standard: bool,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return Err(ScenarioError::InvalidSpec(format!(
                "val_fraction must lie in (0, 0.5), got {}",
                self.val_fraction
            )));
        }
        if self.train_cap == Some(0) {
            return Err(ScenarioError::InvalidSpec("train_cap must be positive".into()));
        }
        Ok(())
    }
}

/// Per-user record of why a user landed where it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub polarity: Polarity,
    pub label: Label,
}

/// The five disjoint user-id sets plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSplit {
    pub spec: PartitionSpec,
    pub shortcut_train: Vec<String>,
    pub standard_train: Vec<String>,
    pub validation: Vec<String>,
    pub shortcut_test: Vec<String>,
    pub standard_test: Vec<String>,
    pub provenance: BTreeMap<String, Provenance>,
}

/// Names of the five emitted sets, in a fixed order.
pub const SET_NAMES: [&str; 5] = [
    "shortcut_train",
    "standard_train",
    "validation",
    "shortcut_test",
    "standard_test",
];

impl ScenarioSplit {
    pub fn set(&self, name: &str) -> Option<&[String]> {
        match name {
            "shortcut_train" => Some(&self.shortcut_train),
            "standard_train" => Some(&self.standard_train),
            "validation" => Some(&self.validation),
            "shortcut_test" => Some(&self.shortcut_test),
            "standard_test" => Some(&self.standard_test),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid partition spec: {0}")]
    InvalidSpec(String),
    #[error("no users in the ({polarity}, {label}) cell")]
    EmptyCell { polarity: Polarity, label: Label },
    #[error("balancing left the {set} set empty")]
    InsufficientUsers { set: &'static str },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed split file: {0}")]
    Malformed(String),
}

/// Build the five sets from a dataset.
///
/// Each (polarity x label) cell is shuffled once under the seeded generator,
/// then cut in half: the first half feeds the correlated shortcut sets, the
/// second half the polarity-mixed standard pool. Validation is carved from
/// both training pools (at `val_fraction`) before `train_cap` applies.
/// Standard users split roughly 2:1 between train pool and test.
pub fn build_scenario(
    dataset: &Dataset,
    spec: &PartitionSpec,
) -> Result<ScenarioSplit, ScenarioError> {
    spec.validate()?;
    let dimension = spec.dimension;

    let mut cells: BTreeMap<(Polarity, Label), Vec<&str>> = BTreeMap::new();
    for user in &dataset.users {
        cells
            .entry((user.polarity(dimension), user.label))
            .or_default()
            .push(&user.user_id);
    }
    for polarity in [Polarity::Pos, Polarity::Neg] {
        for label in Label::BOTH {
            if cells.get(&(polarity, label)).map_or(true, Vec::is_empty) {
                return Err(ScenarioError::EmptyCell { polarity, label });
            }
        }
    }

    let mut rng = Pcg64::seed_from_u64(spec.seed);
    // Fixed shuffle order over the BTreeMap keys keeps runs reproducible.
    for cell in cells.values_mut() {
        cell.shuffle(&mut rng);
    }

    let split_half = |cell: &[&str]| -> (Vec<String>, Vec<String>) {
        let mid = cell.len() / 2;
        (
            cell[..mid].iter().map(|s| s.to_string()).collect(),
            cell[mid..].iter().map(|s| s.to_string()).collect(),
        )
    };
    let (pb_shortcut, pb_standard) = split_half(cell_slice(&cells, Polarity::Pos, Label::Bot));
    let (nh_shortcut, nh_standard) = split_half(cell_slice(&cells, Polarity::Neg, Label::Human));
    let (ph_shortcut, ph_standard) = split_half(cell_slice(&cells, Polarity::Pos, Label::Human));
    let (nb_shortcut, nb_standard) = split_half(cell_slice(&cells, Polarity::Neg, Label::Bot));

    // Shortcut train: (pos, bot) with (neg, human), balanced, minus validation.
    let n_str = pb_shortcut.len().min(nh_shortcut.len());
    let n_val_str = (n_str as f64 * spec.val_fraction).floor() as usize;
    let mut n_tr = n_str - n_val_str;
    if let Some(cap) = spec.train_cap {
        n_tr = n_tr.min(cap / 2);
    }
    let mut validation: Vec<String> = Vec::new();
    validation.extend_from_slice(&pb_shortcut[..n_val_str]);
    validation.extend_from_slice(&nh_shortcut[..n_val_str]);
    let mut shortcut_train: Vec<String> = Vec::new();
    shortcut_train.extend_from_slice(&pb_shortcut[n_val_str..n_val_str + n_tr]);
    shortcut_train.extend_from_slice(&nh_shortcut[n_val_str..n_val_str + n_tr]);
    if shortcut_train.is_empty() {
        return Err(ScenarioError::InsufficientUsers {
            set: "shortcut_train",
        });
    }

    // Shortcut test: the reversed pairing, balanced.
    let n_ste = ph_shortcut.len().min(nb_shortcut.len());
    let mut shortcut_test: Vec<String> = Vec::new();
    shortcut_test.extend_from_slice(&ph_shortcut[..n_ste]);
    shortcut_test.extend_from_slice(&nb_shortcut[..n_ste]);
    if shortcut_test.is_empty() {
        return Err(ScenarioError::InsufficientUsers {
            set: "shortcut_test",
        });
    }

    // Standard pool: the remaining halves, polarity mixed by a fresh shuffle,
    // stratified on label only.
    let mut bots: Vec<String> = Vec::new();
    bots.extend(pb_standard);
    bots.extend(nb_standard);
    let mut humans: Vec<String> = Vec::new();
    humans.extend(nh_standard);
    humans.extend(ph_standard);
    if spec.include_neutral_in_standard {
        bots.extend(
            cell_slice(&cells, Polarity::Neu, Label::Bot)
                .iter()
                .map(|s| s.to_string()),
        );
        humans.extend(
            cell_slice(&cells, Polarity::Neu, Label::Human)
                .iter()
                .map(|s| s.to_string()),
        );
    }
    bots.shuffle(&mut rng);
    humans.shuffle(&mut rng);

    let n_std = bots.len().min(humans.len());
    if n_std == 0 {
        return Err(ScenarioError::InsufficientUsers {
            set: "standard_train",
        });
    }
    let n_test = (n_std / 3).max(1);
    let n_pool = n_std - n_test;
    if n_pool == 0 {
        return Err(ScenarioError::InsufficientUsers {
            set: "standard_train",
        });
    }
    let n_val_std = (n_pool as f64 * spec.val_fraction).floor() as usize;
    let mut n_std_tr = n_pool - n_val_std;
    if let Some(cap) = spec.train_cap {
        n_std_tr = n_std_tr.min(cap / 2);
    }
    if n_std_tr == 0 {
        return Err(ScenarioError::InsufficientUsers {
            set: "standard_train",
        });
    }

    let mut standard_test: Vec<String> = Vec::new();
    standard_test.extend_from_slice(&bots[..n_test]);
    standard_test.extend_from_slice(&humans[..n_test]);
    validation.extend_from_slice(&bots[n_test..n_test + n_val_std]);
    validation.extend_from_slice(&humans[n_test..n_test + n_val_std]);
    let offset = n_test + n_val_std;
    let mut standard_train: Vec<String> = Vec::new();
    standard_train.extend_from_slice(&bots[offset..offset + n_std_tr]);
    standard_train.extend_from_slice(&humans[offset..offset + n_std_tr]);

    let mut provenance = BTreeMap::new();
    for ids in [
        &shortcut_train,
        &standard_train,
        &validation,
        &shortcut_test,
        &standard_test,
    ] {
        for id in ids {
            let user = dataset.user(id).expect("split ids come from the dataset");
            provenance.insert(
                id.clone(),
                Provenance {
                    polarity: user.polarity(dimension),
                    label: user.label,
                },
            );
        }
    }

    Ok(ScenarioSplit {
        spec: spec.clone(),
        shortcut_train,
        standard_train,
        validation,
        shortcut_test,
        standard_test,
        provenance,
    })
}

fn cell_slice<'a>(
    cells: &'a BTreeMap<(Polarity, Label), Vec<&'a str>>,
    polarity: Polarity,
    label: Label,
) -> &'a [&'a str] {
    cells
        .get(&(polarity, label))
        .map(Vec::as_slice)
        .unwrap_or(&[])
}

// ---------------------------------------------------------------------------
// Summary table
// ---------------------------------------------------------------------------

/// Per-set counts broken down by (label x polarity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    /// set name -> "polarity_label" -> count
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
}

/// Tabulate each set of the split by (label x polarity) from its provenance.
pub fn split_summary(split: &ScenarioSplit) -> SplitSummary {
    let mut counts = BTreeMap::new();
    for name in SET_NAMES {
        let mut table: BTreeMap<String, usize> = BTreeMap::new();
        for polarity in [Polarity::Pos, Polarity::Neg, Polarity::Neu] {
            for label in Label::BOTH {
                table.insert(format!("{polarity}_{label}"), 0);
            }
        }
        for id in split.set(name).expect("known set name") {
            let provenance = split.provenance[id];
            *table
                .get_mut(&format!("{}_{}", provenance.polarity, provenance.label))
                .expect("all cells prefilled") += 1;
        }
        counts.insert(name.to_string(), table);
    }
    SplitSummary { counts }
}

impl fmt::Display for SplitSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "set", "pos_bot", "pos_hum", "neg_bot", "neg_hum", "neu_bot", "neu_hum", "total"
        )?;
        for name in SET_NAMES {
            let table = &self.counts[name];
            let get = |key: &str| table.get(key).copied().unwrap_or(0);
            let total: usize = table.values().sum();
            writeln!(
                f,
                "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
                name,
                get("pos_bot"),
                get("pos_human"),
                get("neg_bot"),
                get("neg_human"),
                get("neu_bot"),
                get("neu_human"),
                total
            )?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Split file
// ---------------------------------------------------------------------------

pub fn save_split(path: &Path, split: &ScenarioSplit) -> Result<(), ScenarioError> {
    let json = serde_json::to_vec_pretty(split).expect("split serializes");
    write_atomic(path, &json)?;
    Ok(())
}

pub fn load_split(path: &Path) -> Result<ScenarioSplit, ScenarioError> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| ScenarioError::Malformed(e.to_string()))
}
