//! Detector training over pooled embeddings and the evaluation metrics:
//! accuracy, relative change, expected calibration error, mean confidence.

mod grid;

pub use grid::{
    evaluate_grid, pooled_feature, report_csv, report_histograms_csv, CellMetrics, EvalInputs,
    EvaluationReport, RelativeChanges, ReportConfig, TrainSettingSpec, VariantChoice,
    ROW_SHORTCUT_RAW, ROW_STANDARD_RAW, TEST_SETTINGS,
};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Label, ModelError};

/// MLP detector: one ReLU hidden layer, 2-way linear output, softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorHead {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Detector training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorHyper {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DetectorHyper {
    fn default() -> DetectorHyper {
        DetectorHyper {
            hidden: 128,
            learning_rate: 1e-3,
            epochs: 200,
            patience: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Features and labels with aligned rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub ids: Vec<String>,
    pub features: Array2<f64>,
    pub labels: Vec<Label>,
}

/// One scored user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub user_id: String,
    pub predicted: Label,
    /// Max softmax probability; in [0.5, 1] for a binary argmax.
    pub confidence: f64,
    pub actual: Label,
}

/// Predictions over one evaluation set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("fewer than two examples in the {0} class")]
    DegenerateLabels(Label),
    #[error("prediction set is empty")]
    EmptyPredictions,
    #[error("relative change needs a positive baseline, got {0}")]
    ZeroBaseline(f64),
    #[error("ece needs at least one bin")]
    InvalidBins,
    #[error("unknown split set {0:?}")]
    UnknownSet(String),
    #[error("user {user_id:?} is assigned variant mixed but has no selection bits")]
    MissingSelection { user_id: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl DetectorHead {
    fn init(dim: usize, hidden: usize, seed: u64) -> DetectorHead {
        let mut rng = Pcg64::seed_from_u64(seed);
        let mut sample = |rows: usize, cols: usize, scale: f64| {
            let mut m = Array2::zeros((rows, cols));
            for v in m.iter_mut() {
                let x: f64 = StandardNormal.sample(&mut rng);
                *v = x * scale;
            }
            m
        };
        let w1 = sample(dim, hidden, 1.0 / (dim as f64).sqrt());
        let w2 = sample(hidden, 2, 1.0 / (hidden as f64).sqrt());
        DetectorHead {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(2),
        }
    }

    /// Row-wise class probabilities, shape (n, 2).
    pub fn predict_probs(&self, x: &Array2<f64>) -> Array2<f64> {
        let hidden = (x.dot(&self.w1) + &self.b1).mapv(|v| v.max(0.0));
        let logits = hidden.dot(&self.w2) + &self.b2;
        let mut probs = logits;
        for mut row in probs.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        probs
    }

    /// Label every row of a feature set, carrying ids and true labels along.
    pub fn predict(&self, set: &FeatureSet) -> PredictionSet {
        let probs = self.predict_probs(&set.features);
        let predictions = set
            .ids
            .iter()
            .zip(&set.labels)
            .zip(probs.rows())
            .map(|((id, &actual), row)| {
                let (predicted, confidence) = if row[1] >= row[0] {
                    (Label::Bot, row[1])
                } else {
                    (Label::Human, row[0])
                };
                Prediction {
                    user_id: id.clone(),
                    predicted,
                    confidence,
                    actual,
                }
            })
            .collect();
        PredictionSet { predictions }
    }
}

fn accuracy_on(head: &DetectorHead, set: &FeatureSet) -> f64 {
    let preds = head.predict(set);
    preds
        .predictions
        .iter()
        .filter(|p| p.predicted == p.actual)
        .count() as f64
        / preds.predictions.len().max(1) as f64
}

/// Train the detector with softmax cross-entropy, mini-batch SGD, and
/// hand-derived gradients. With a validation set, training stops after
/// `patience` epochs without a validation-accuracy improvement and the best
/// snapshot is returned. Deterministic given the seed.
pub fn train_detector(
    train: &FeatureSet,
    validation: Option<&FeatureSet>,
    hyper: &DetectorHyper,
) -> Result<DetectorHead, EvalError> {
    for label in Label::BOTH {
        if train.labels.iter().filter(|&&l| l == label).count() < 2 {
            return Err(EvalError::DegenerateLabels(label));
        }
    }
    let n = train.labels.len();
    let dim = train.features.ncols();
    let mut head = DetectorHead::init(dim, hyper.hidden, hyper.seed);
    let mut rng = Pcg64::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..n).collect();

    let mut best: Option<(f64, DetectorHead)> = None;
    let mut stale_epochs = 0usize;

    for _epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let mut x = Array2::zeros((chunk.len(), dim));
            for (row, &index) in chunk.iter().enumerate() {
                x.row_mut(row).assign(&train.features.row(index));
            }
            let pre = x.dot(&head.w1) + &head.b1;
            let hidden = pre.mapv(|v| v.max(0.0));
            let logits = hidden.dot(&head.w2) + &head.b2;
            let mut d_logits = logits;
            for (row_index, &index) in chunk.iter().enumerate() {
                let mut row = d_logits.row_mut(row_index);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|v| v / sum);
                let target = usize::from(u8::from(train.labels[index]));
                row[target] -= 1.0;
            }
            d_logits.mapv_inplace(|v| v / chunk.len() as f64);

            let d_w2 = hidden.t().dot(&d_logits);
            let d_b2 = d_logits.sum_axis(Axis(0));
            let d_hidden = d_logits.dot(&head.w2.t());
            let d_pre = d_hidden * pre.mapv(|v| f64::from(v > 0.0));
            let d_w1 = x.t().dot(&d_pre);
            let d_b1 = d_pre.sum_axis(Axis(0));

            let lr = hyper.learning_rate;
            head.w1 = &head.w1 - &d_w1.mapv(|g| g * lr);
            head.b1 = &head.b1 - &d_b1.mapv(|g| g * lr);
            head.w2 = &head.w2 - &d_w2.mapv(|g| g * lr);
            head.b2 = &head.b2 - &d_b2.mapv(|g| g * lr);
        }

        if let Some(val) = validation {
            let acc = accuracy_on(&head, val);
            if best.as_ref().map_or(true, |(b, _)| acc > *b) {
                best = Some((acc, head.clone()));
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= hyper.patience {
                    break;
                }
            }
        }
    }

    Ok(match best {
        Some((_, snapshot)) => snapshot,
        None => head,
    })
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Fraction of correct predictions.
pub fn accuracy(preds: &PredictionSet) -> Result<f64, EvalError> {
    if preds.predictions.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    Ok(preds
        .predictions
        .iter()
        .filter(|p| p.predicted == p.actual)
        .count() as f64
        / preds.predictions.len() as f64)
}

/// (value - baseline) / baseline; negative means a drop.
pub fn relative_change(baseline: f64, value: f64) -> Result<f64, EvalError> {
    if baseline <= 0.0 {
        return Err(EvalError::ZeroBaseline(baseline));
    }
    Ok((value - baseline) / baseline)
}

/// Mean of the per-prediction confidences.
pub fn mean_confidence(preds: &PredictionSet) -> Result<f64, EvalError> {
    if preds.predictions.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    Ok(preds.predictions.iter().map(|p| p.confidence).sum::<f64>()
        / preds.predictions.len() as f64)
}

/// Bin index of a confidence value under `bins` equal-width left-open bins
/// over (0, 1].
fn bin_of(confidence: f64, bins: usize) -> usize {
    ((confidence * bins as f64).ceil() as usize)
        .saturating_sub(1)
        .min(bins - 1)
}

/// Expected calibration error with equal-width left-open bins over (0, 1]:
/// sum_b (n_b / n) |acc_b - conf_b|.
pub fn ece(preds: &PredictionSet, bins: usize) -> Result<f64, EvalError> {
    if bins == 0 {
        return Err(EvalError::InvalidBins);
    }
    if preds.predictions.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut confidence_sum = vec![0.0f64; bins];
    for p in &preds.predictions {
        let b = bin_of(p.confidence, bins);
        count[b] += 1;
        correct[b] += usize::from(p.predicted == p.actual);
        confidence_sum[b] += p.confidence;
    }
    let n = preds.predictions.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        if count[b] == 0 {
            continue;
        }
        let acc = correct[b] as f64 / count[b] as f64;
        let conf = confidence_sum[b] / count[b] as f64;
        total += (count[b] as f64 / n) * (acc - conf).abs();
    }
    Ok(total)
}

/// Histogram of confidences over the same left-open bins as [`ece`].
pub fn confidence_histogram(preds: &PredictionSet, bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins.max(1)];
    for p in &preds.predictions {
        counts[bin_of(p.confidence, bins.max(1))] += 1;
    }
    counts
}
