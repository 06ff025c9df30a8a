//! The (train setting x test setting) evaluation grid and its report files.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    accuracy, confidence_histogram, ece, mean_confidence, train_detector, DetectorHyper,
    EvalError, FeatureSet,
};
use crate::contrastive::ProjectionHead;
use crate::model::{user_text_key, Dataset, EmbeddingMatrix, UserRecord, Variant};
use crate::scenario::ScenarioSplit;

/// Canonical name of the standard-train, raw-variant baseline row.
pub const ROW_STANDARD_RAW: &str = "standard/raw";
/// Canonical name of the shortcut-train, raw-variant baseline row.
pub const ROW_SHORTCUT_RAW: &str = "shortcut/raw";
/// The two test columns of the grid.
pub const TEST_SETTINGS: [&str; 2] = ["shortcut_test", "standard_test"];

/// Which tweet versions a user's feature is pooled from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VariantChoice {
    Raw,
    Rewritten,
    /// Per-tweet bits from the text-level selection (true = rewrite).
    Mixed(Vec<bool>),
}

/// One row of the grid: a training set, the per-user variant assignment, and
/// whether features pass through the projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettingSpec {
    pub name: String,
    /// "standard_train" or "shortcut_train".
    pub train_set: String,
    /// Per-user variants; users not listed default to raw.
    pub variants: BTreeMap<String, Variant>,
    pub project: bool,
}

impl TrainSettingSpec {
    pub fn raw(name: &str, train_set: &str) -> TrainSettingSpec {
        TrainSettingSpec {
            name: name.into(),
            train_set: train_set.into(),
            variants: BTreeMap::new(),
            project: false,
        }
    }
}

/// Everything the grid needs besides the row specs.
pub struct EvalInputs<'a> {
    pub dataset: &'a Dataset,
    pub split: &'a ScenarioSplit,
    pub embeddings: &'a EmbeddingMatrix,
    /// Per-user selection bits for the mixed variant.
    pub selections: &'a BTreeMap<String, Vec<bool>>,
    pub head: Option<&'a ProjectionHead>,
    pub hyper: DetectorHyper,
    pub ece_bins: usize,
    /// Free-form provenance notes echoed into the report.
    pub notes: Vec<String>,
}

/// Metrics of one (train setting, test setting) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub ece: f64,
    pub mean_confidence: f64,
    pub confidence_histogram: Vec<usize>,
}

/// Relative accuracy changes of a row against the two raw baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeChanges {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vs_standard_raw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vs_shortcut_raw: Option<f64>,
}

/// Config echo stored in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub detector: DetectorHyper,
    pub ece_bins: usize,
    pub notes: Vec<String>,
}

/// Accuracy / calibration grid plus relative changes, serialized with stable
/// key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: ReportConfig,
    /// row name -> test setting -> metrics
    pub cells: BTreeMap<String, BTreeMap<String, CellMetrics>>,
    /// test setting -> row name -> changes
    pub relative_changes: BTreeMap<String, BTreeMap<String, RelativeChanges>>,
}

/// Mean of the user's k selected-variant text embeddings, each optionally
/// passed through the projection head first. Pooling is permutation
/// invariant up to float rounding.
pub fn pooled_feature(
    user: &UserRecord,
    choice: &VariantChoice,
    embeddings: &EmbeddingMatrix,
    head: Option<&ProjectionHead>,
) -> Result<Vec<f64>, EvalError> {
    let k = user.tweets.len();
    let mut rows = Array2::zeros((k, embeddings.dim));
    for index in 0..k {
        let variant = match choice {
            VariantChoice::Raw => Variant::Raw,
            VariantChoice::Rewritten => Variant::Rewritten,
            VariantChoice::Mixed(bits) => {
                if bits.get(index).copied().unwrap_or(false) {
                    Variant::Rewritten
                } else {
                    Variant::Raw
                }
            }
        };
        let key = user_text_key(user, variant, index)?;
        let vec = embeddings.get(&key)?;
        for (slot, &v) in rows.row_mut(index).iter_mut().zip(vec) {
            *slot = v;
        }
    }
    let projected = match head {
        Some(h) => h.apply(&rows),
        None => rows,
    };
    let mut mean = vec![0.0; projected.ncols()];
    for row in projected.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= k as f64;
    }
    Ok(mean)
}

fn feature_set(
    inputs: &EvalInputs<'_>,
    ids: &[String],
    variants: &BTreeMap<String, Variant>,
    project: bool,
) -> Result<FeatureSet, EvalError> {
    let head = if project { inputs.head } else { None };
    let mut dim = None;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for id in ids {
        let user = inputs
            .dataset
            .user(id)
            .ok_or_else(|| EvalError::UnknownSet(format!("user {id} not in dataset")))?;
        let choice = match variants.get(id).copied().unwrap_or(Variant::Raw) {
            Variant::Raw => VariantChoice::Raw,
            Variant::Rewritten => VariantChoice::Rewritten,
            Variant::Mixed => {
                let bits = inputs
                    .selections
                    .get(id)
                    .cloned()
                    .ok_or_else(|| EvalError::MissingSelection {
                        user_id: id.clone(),
                    })?;
                VariantChoice::Mixed(bits)
            }
        };
        let feature = pooled_feature(user, &choice, inputs.embeddings, head)?;
        dim = Some(feature.len());
        rows.push(feature);
        labels.push(user.label);
    }
    let dim = dim.unwrap_or(inputs.embeddings.dim);
    let mut features = Array2::zeros((rows.len(), dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    Ok(FeatureSet {
        ids: ids.to_vec(),
        features,
        labels,
    })
}

/// Train one detector per row spec and evaluate it on both test settings.
///
/// Every row trains on its own variant of the named training set (projected
/// when requested), early-stops on the shared validation set, and is then
/// scored on the raw shortcut and standard test sets under the same feature
/// transform. Relative changes compare each row to the raw baselines per
/// test column.
pub fn evaluate_grid(
    inputs: &EvalInputs<'_>,
    rows: &[TrainSettingSpec],
) -> Result<EvaluationReport, EvalError> {
    let empty = BTreeMap::new();
    let mut cells: BTreeMap<String, BTreeMap<String, CellMetrics>> = BTreeMap::new();
    let mut accuracies: BTreeMap<(String, String), f64> = BTreeMap::new();

    for row in rows {
        let train_ids = inputs
            .split
            .set(&row.train_set)
            .ok_or_else(|| EvalError::UnknownSet(row.train_set.clone()))?;
        let train = feature_set(inputs, train_ids, &row.variants, row.project)?;
        let validation = if inputs.split.validation.is_empty() {
            None
        } else {
            Some(feature_set(
                inputs,
                &inputs.split.validation,
                &empty,
                row.project,
            )?)
        };
        let detector = train_detector(&train, validation.as_ref(), &inputs.hyper)?;

        let mut row_cells = BTreeMap::new();
        for test_name in TEST_SETTINGS {
            let test_ids = inputs.split.set(test_name).expect("known test set");
            let test = feature_set(inputs, test_ids, &empty, row.project)?;
            let preds = detector.predict(&test);
            let metrics = CellMetrics {
                n: preds.predictions.len(),
                accuracy: accuracy(&preds)?,
                ece: ece(&preds, inputs.ece_bins)?,
                mean_confidence: mean_confidence(&preds)?,
                confidence_histogram: confidence_histogram(&preds, inputs.ece_bins),
            };
            accuracies.insert((test_name.to_string(), row.name.clone()), metrics.accuracy);
            row_cells.insert(test_name.to_string(), metrics);
        }
        cells.insert(row.name.clone(), row_cells);
    }

    let mut relative_changes: BTreeMap<String, BTreeMap<String, RelativeChanges>> =
        BTreeMap::new();
    for test_name in TEST_SETTINGS {
        let mut per_row = BTreeMap::new();
        for row in rows {
            let value = accuracies[&(test_name.to_string(), row.name.clone())];
            let change_vs = |baseline_row: &str| -> Option<f64> {
                if row.name == baseline_row {
                    return None;
                }
                let baseline = accuracies.get(&(test_name.to_string(), baseline_row.into()))?;
                super::relative_change(*baseline, value).ok()
            };
            per_row.insert(
                row.name.clone(),
                RelativeChanges {
                    vs_standard_raw: change_vs(ROW_STANDARD_RAW),
                    vs_shortcut_raw: change_vs(ROW_SHORTCUT_RAW),
                },
            );
        }
        relative_changes.insert(test_name.to_string(), per_row);
    }

    Ok(EvaluationReport {
        config: ReportConfig {
            detector: inputs.hyper.clone(),
            ece_bins: inputs.ece_bins,
            notes: inputs.notes.clone(),
        },
        cells,
        relative_changes,
    })
}

/// Flatten the report into CSV, one line per (row, test) cell.
pub fn report_csv(report: &EvaluationReport) -> String {
    let mut out = String::from(
        "train_setting,test_setting,n,accuracy,ece,mean_confidence,rel_vs_standard_raw,rel_vs_shortcut_raw\n",
    );
    for (row_name, row_cells) in &report.cells {
        for (test_name, metrics) in row_cells {
            let changes = report
                .relative_changes
                .get(test_name)
                .and_then(|m| m.get(row_name));
            let fmt = |c: Option<f64>| c.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row_name,
                test_name,
                metrics.n,
                metrics.accuracy,
                metrics.ece,
                metrics.mean_confidence,
                fmt(changes.and_then(|c| c.vs_standard_raw)),
                fmt(changes.and_then(|c| c.vs_shortcut_raw)),
            ));
        }
    }
    out
}

/// Confidence histograms as CSV for external plotting.
pub fn report_histograms_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("train_setting,test_setting,bin_low,bin_high,count\n");
    for (row_name, row_cells) in &report.cells {
        for (test_name, metrics) in row_cells {
            let bins = metrics.confidence_histogram.len();
            for (b, count) in metrics.confidence_histogram.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row_name,
                    test_name,
                    b as f64 / bins as f64,
                    (b + 1) as f64 / bins as f64,
                    count
                ));
            }
        }
    }
    out
}
