//! Training loop (plain SGD, seeded mini-batches), head checkpoints, and the
//! loss-curve file.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg64;

use super::{
    info_nce, manifold_loss, total_loss, ContrastiveBatch, ContrastiveError, CosineScore,
    LossConfig, ProjectionHead,
};
use crate::util::write_atomic;

/// Row-aligned raw/rewritten base embeddings for the whole training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub raw: Array2<f64>,
    pub new: Array2<f64>,
}

impl PairSet {
    pub fn new(raw: Array2<f64>, new: Array2<f64>) -> PairSet {
        assert_eq!(raw.dim(), new.dim(), "pair matrices must align");
        PairSet { raw, new }
    }

    pub fn len(&self) -> usize {
        self.raw.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.raw.ncols()
    }

    fn batch(&self, indices: &[usize]) -> ContrastiveBatch {
        let gather = |m: &Array2<f64>| {
            let mut out = Array2::zeros((indices.len(), m.ncols()));
            for (row, &index) in indices.iter().enumerate() {
                out.row_mut(row).assign(&m.row(index));
            }
            out
        };
        ContrastiveBatch {
            h_raw: gather(&self.raw),
            e_new: gather(&self.new),
        }
    }

    fn as_batch(&self) -> ContrastiveBatch {
        ContrastiveBatch {
            h_raw: self.raw.clone(),
            e_new: self.new.clone(),
        }
    }
}

/// One row of the loss curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub head: ProjectionHead,
    pub score: CosineScore,
    pub curve: Vec<CurvePoint>,
    /// Step whose parameters were selected (lowest validation loss when a
    /// validation set is given, otherwise the final step).
    pub selected_step: usize,
}

/// Loss value without gradients, for validation tracking.
fn loss_value(
    head: &ProjectionHead,
    score: &CosineScore,
    batch: &ContrastiveBatch,
    cfg: &LossConfig,
) -> Result<f64, ContrastiveError> {
    let h_pos = head.apply(&batch.h_raw);
    let h_neg = head.apply(&batch.e_new);
    let mut loss = manifold_loss(&h_pos, &h_neg, &batch.h_raw, cfg)?;
    if cfg.lambda_mi > 0.0 {
        loss -= cfg.lambda_mi * info_nce(&h_pos, &h_neg, score)?;
    }
    Ok(loss)
}

/// Train a zero-initialized head with plain SGD over seeded shuffled
/// mini-batches. Deterministic given the config seed.
pub fn train(
    pairs: &PairSet,
    validation: Option<&PairSet>,
    cfg: &LossConfig,
) -> Result<TrainResult, ContrastiveError> {
    cfg.validate()?;
    let n = pairs.len();
    if n < cfg.batch_size {
        return Err(ContrastiveError::InsufficientPairs {
            available: n,
            needed: cfg.batch_size,
        });
    }
    let mut head = ProjectionHead::zeros(pairs.dim(), cfg.hidden);
    let mut score = CosineScore::default();
    let mut curve = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 {
        return Ok(TrainResult {
            head,
            score,
            curve,
            selected_step: 0,
        });
    }

    let mut rng = Pcg64::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    let val_batch = validation.map(PairSet::as_batch);
    let mut best: Option<(f64, ProjectionHead, CosineScore, usize)> = None;

    for step in 1..=cfg.steps {
        if cursor + cfg.batch_size > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let indices = &order[cursor..cursor + cfg.batch_size];
        cursor += cfg.batch_size;

        let batch = pairs.batch(indices);
        let (train_loss, grads) = total_loss(&head, &score, &batch, cfg)
            .map_err(|e| match e {
                ContrastiveError::NonFiniteLoss { .. } => ContrastiveError::NonFiniteLoss { step },
                other => other,
            })?;

        let lr = cfg.learning_rate;
        head.w1 = &head.w1 - &grads.w1.mapv(|g| g * lr);
        head.b1 = &head.b1 - &grads.b1.mapv(|g| g * lr);
        head.w2 = &head.w2 - &grads.w2.mapv(|g| g * lr);
        head.b2 = &head.b2 - &grads.b2.mapv(|g| g * lr);
        score.weight -= lr * grads.score_weight;
        score.bias -= lr * grads.score_bias;

        let mut val_loss = None;
        if let Some(vb) = &val_batch {
            if step % cfg.val_every.max(1) == 0 || step == cfg.steps {
                let v = loss_value(&head, &score, vb, cfg)?;
                if best.as_ref().map_or(true, |(b, ..)| v < *b) {
                    best = Some((v, head.clone(), score, step));
                }
                val_loss = Some(v);
            }
        }
        curve.push(CurvePoint {
            step,
            train_loss,
            val_loss,
        });
    }

    let (head, score, selected_step) = match best {
        Some((_, h, s, step)) => (h, s, step),
        None => (head, score, cfg.steps),
    };
    Ok(TrainResult {
        head,
        score,
        curve,
        selected_step,
    })
}

// ---------------------------------------------------------------------------
// Checkpoint and curve files
// ---------------------------------------------------------------------------

/// Magic bytes opening a head checkpoint.
pub const HEAD_MAGIC: &[u8; 4] = b"PRJ1";

/// Checkpoint layout: magic, u32 dim, u32 hidden, then little-endian f64
/// parameters in declaration order (w1, b1, w2, b2, row-major).
pub fn save_head(path: &Path, head: &ProjectionHead) -> Result<(), ContrastiveError> {
    let mut buf = Vec::with_capacity(12 + head.param_count() * 8);
    buf.extend_from_slice(HEAD_MAGIC);
    buf.extend_from_slice(&(head.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(head.hidden() as u32).to_le_bytes());
    for p in head.to_params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    write_atomic(path, &buf)?;
    Ok(())
}

pub fn load_head(path: &Path) -> Result<ProjectionHead, ContrastiveError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[..4] != HEAD_MAGIC {
        return Err(ContrastiveError::BadCheckpoint("missing magic".into()));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let hidden = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = dim * hidden + hidden + hidden * dim + dim;
    let body = &bytes[12..];
    if body.len() != expected * 8 {
        return Err(ContrastiveError::BadCheckpoint(format!(
            "expected {} parameter bytes, found {}",
            expected * 8,
            body.len()
        )));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(ContrastiveError::BadCheckpoint(
            "non-finite parameter".into(),
        ));
    }
    Ok(ProjectionHead::from_params(dim, hidden, &params))
}

/// Loss curve as CSV: step, train loss, and the validation loss when it was
/// evaluated that step.
pub fn save_curve(path: &Path, curve: &[CurvePoint]) -> Result<(), ContrastiveError> {
    let mut out = String::from("step,train_loss,val_loss\n");
    for point in curve {
        let val = point
            .val_loss
            .map(|v| v.to_string())
            .unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", point.step, point.train_loss, val));
    }
    write_atomic(path, out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    fn random_pairs(n: usize, dim: usize, seed: u64) -> PairSet {
        let mut rng = Pcg64::seed_from_u64(seed);
        let mut fill = || {
            let mut m = Array2::zeros((n, dim));
            for v in m.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            m
        };
        let raw = fill();
        let new = fill();
        PairSet::new(raw, new)
    }

    #[test]
    fn zero_steps_returns_identity_head() {
        let pairs = random_pairs(8, 4, 1);
        let cfg = LossConfig {
            steps: 0,
            batch_size: 4,
            ..LossConfig::default()
        };
        let result = train(&pairs, None, &cfg).unwrap();
        assert_eq!(result.head, ProjectionHead::zeros(4, cfg.hidden));
        assert!(result.curve.is_empty());
        assert_eq!(result.selected_step, 0);
    }

    #[test]
    fn equal_seeds_give_identical_curves() {
        let pairs = random_pairs(16, 4, 2);
        let cfg = LossConfig {
            steps: 20,
            batch_size: 8,
            hidden: 6,
            learning_rate: 0.05,
            ..LossConfig::default()
        };
        let a = train(&pairs, None, &cfg).unwrap();
        let b = train(&pairs, None, &cfg).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.head, b.head);
    }

    #[test]
    fn too_few_pairs_is_an_error() {
        let pairs = random_pairs(3, 4, 3);
        let cfg = LossConfig {
            batch_size: 8,
            ..LossConfig::default()
        };
        assert!(matches!(
            train(&pairs, None, &cfg),
            Err(ContrastiveError::InsufficientPairs {
                available: 3,
                needed: 8
            })
        ));
    }

    #[test]
    fn checkpoint_round_trips() {
        let pairs = random_pairs(8, 3, 4);
        let cfg = LossConfig {
            steps: 5,
            batch_size: 4,
            hidden: 2,
            learning_rate: 0.1,
            ..LossConfig::default()
        };
        let result = train(&pairs, None, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.prj");
        save_head(&path, &result.head).unwrap();
        let loaded = load_head(&path).unwrap();
        assert_eq!(loaded, result.head);
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[..4], HEAD_MAGIC);
    }

    #[test]
    fn validation_tracking_selects_a_step() {
        let pairs = random_pairs(16, 4, 5);
        let val = random_pairs(8, 4, 6);
        let cfg = LossConfig {
            steps: 30,
            batch_size: 8,
            hidden: 4,
            val_every: 10,
            learning_rate: 0.05,
            ..LossConfig::default()
        };
        let result = train(&pairs, Some(&val), &cfg).unwrap();
        assert!(result.selected_step >= 1 && result.selected_step <= 30);
        let evaluated: Vec<&CurvePoint> =
            result.curve.iter().filter(|p| p.val_loss.is_some()).collect();
        assert_eq!(evaluated.len(), 3);
    }
}
