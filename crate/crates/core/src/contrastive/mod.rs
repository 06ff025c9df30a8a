//! Debiasing projection head over frozen base embeddings, trained with a
//! manifold-preserving KL term plus a contrastive mutual-information bound.
//!
//! The head is residual and zero-initialized, so before any training step it
//! is exactly the identity: transformed embeddings equal the raw ones. All
//! gradients are derived by hand and checked against central finite
//! differences in the test suites.

mod train;

pub use train::{
    load_head, save_curve, save_head, train, CurvePoint, PairSet, TrainResult, HEAD_MAGIC,
};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Residual two-layer projection: y = x + tanh(x·W1 + b1)·W2 + b2.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Learnable non-negative pair score f(a, b) = softplus(w·cos(a, b) + c).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineScore {
    pub weight: f64,
    pub bias: f64,
}

impl Default for CosineScore {
    fn default() -> CosineScore {
        CosineScore {
            weight: 1.0,
            bias: 0.0,
        }
    }
}

/// Hyperparameters of the combined loss and the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the mutual-information term.
    pub lambda_mi: f64,
    /// Weight of the positive manifold term.
    pub lambda_pos: f64,
    /// Weight of the negative manifold term.
    pub lambda_neg: f64,
    pub softmax_temperature: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Hidden width of the projection head.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Evaluate validation loss every this many steps.
    #[serde(default = "default_val_every")]
    pub val_every: usize,
}

fn default_hidden() -> usize {
    64
}

fn default_val_every() -> usize {
    50
}

impl Default for LossConfig {
    fn default() -> LossConfig {
        LossConfig {
            lambda_mi: 1.0,
            lambda_pos: 1.0,
            lambda_neg: 1.0,
            softmax_temperature: 0.1,
            batch_size: 256,
            steps: 1000,
            learning_rate: 1e-3,
            seed: 0,
            hidden: default_hidden(),
            val_every: default_val_every(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ContrastiveError> {
        if self.batch_size < 2 {
            return Err(ContrastiveError::InvalidConfig(
                "batch_size must be at least 2".into(),
            ));
        }
        if self.softmax_temperature <= 0.0 {
            return Err(ContrastiveError::InvalidConfig(
                "softmax_temperature must be positive".into(),
            ));
        }
        if self.learning_rate <= 0.0 {
            return Err(ContrastiveError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if [self.lambda_mi, self.lambda_pos, self.lambda_neg]
            .iter()
            .any(|l| *l < 0.0 || !l.is_finite())
        {
            return Err(ContrastiveError::InvalidConfig(
                "loss weights must be non-negative".into(),
            ));
        }
        if self.hidden == 0 {
            return Err(ContrastiveError::InvalidConfig(
                "hidden width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Row-aligned raw/rewritten base embeddings of one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub h_raw: Array2<f64>,
    pub e_new: Array2<f64>,
}

#[derive(Debug, Error)]
pub enum ContrastiveError {
    #[error("row {0} has zero norm")]
    ZeroNormRow(usize),
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("need at least {needed} pairs, have {available}")]
    InsufficientPairs { available: usize, needed: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

// ---------------------------------------------------------------------------
// Projection head
// ---------------------------------------------------------------------------

impl ProjectionHead {
    /// Zero initialization: the residual path vanishes and the head is the
    /// identity map.
    pub fn zeros(dim: usize, hidden: usize) -> ProjectionHead {
        ProjectionHead {
            w1: Array2::zeros((dim, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, dim)),
            b2: Array1::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    /// Forward pass keeping the tanh activations for the backward pass.
    fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let z = (x.dot(&self.w1) + &self.b1).mapv(f64::tanh);
        let y = x + &z.dot(&self.w2) + &self.b2;
        (y, z)
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Flatten parameters in declaration order (w1, b1, w2, b2), row-major.
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out
    }

    pub fn from_params(dim: usize, hidden: usize, params: &[f64]) -> ProjectionHead {
        assert_eq!(params.len(), dim * hidden + hidden + hidden * dim + dim);
        let mut offset = 0;
        let mut take = |n: usize| {
            let slice = params[offset..offset + n].to_vec();
            offset += n;
            slice
        };
        ProjectionHead {
            w1: Array2::from_shape_vec((dim, hidden), take(dim * hidden)).unwrap(),
            b1: Array1::from_vec(take(hidden)),
            w2: Array2::from_shape_vec((hidden, dim), take(hidden * dim)).unwrap(),
            b2: Array1::from_vec(take(dim)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_params().iter().all(|p| p.is_finite())
    }
}

/// Gradient of the total loss with respect to every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub score_weight: f64,
    pub score_bias: f64,
}

impl Gradients {
    fn zeros(dim: usize, hidden: usize) -> Gradients {
        Gradients {
            w1: Array2::zeros((dim, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, dim)),
            b2: Array1::zeros(dim),
            score_weight: 0.0,
            score_bias: 0.0,
        }
    }

    /// Head parameters in declaration order, then the two score scalars.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out.push(self.score_weight);
        out.push(self.score_bias);
        out
    }
}

/// Project both sides of a batch through the head.
pub fn forward(head: &ProjectionHead, batch: &ContrastiveBatch) -> (Array2<f64>, Array2<f64>) {
    (head.apply(&batch.h_raw), head.apply(&batch.e_new))
}

// ---------------------------------------------------------------------------
// Similarity distributions and the manifold loss
// ---------------------------------------------------------------------------

fn normalize_rows(h: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>), ContrastiveError> {
    let norms: Vec<f64> = h
        .rows()
        .into_iter()
        .map(|row| row.dot(&row).sqrt())
        .collect();
    if let Some(row) = norms.iter().position(|&n| n == 0.0) {
        return Err(ContrastiveError::ZeroNormRow(row));
    }
    let mut unit = h.clone();
    for (mut row, &norm) in unit.rows_mut().into_iter().zip(&norms) {
        row.mapv_inplace(|v| v / norm);
    }
    Ok((unit, Array1::from_vec(norms)))
}

/// Cosine similarities, the off-diagonal row softmax over them, and the
/// pieces the backward pass needs.
struct SimCache {
    unit: Array2<f64>,
    norms: Array1<f64>,
    cosines: Array2<f64>,
    /// Row-stochastic over the off-diagonal; diagonal entries are zero.
    probs: Array2<f64>,
}

fn sim_cache(h: &Array2<f64>, temperature: f64) -> Result<SimCache, ContrastiveError> {
    let n = h.nrows();
    let (unit, norms) = normalize_rows(h)?;
    let cosines = unit.dot(&unit.t());
    let mut probs = Array2::zeros((n, n));
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            if j != i {
                max = max.max(cosines[[i, j]] / temperature);
            }
        }
        if !max.is_finite() {
            continue; // n == 1: no off-diagonal entries
        }
        let mut sum = 0.0;
        for j in 0..n {
            if j != i {
                let e = (cosines[[i, j]] / temperature - max).exp();
                probs[[i, j]] = e;
                sum += e;
            }
        }
        for j in 0..n {
            if j != i {
                probs[[i, j]] /= sum;
            }
        }
    }
    Ok(SimCache {
        unit,
        norms,
        cosines,
        probs,
    })
}

/// Within-batch similarity distribution: pairwise cosines, diagonal excluded,
/// row-wise softmax at `temperature`. Shape (N, N-1); each row sums to 1.
pub fn sim_distribution(
    h: &Array2<f64>,
    temperature: f64,
) -> Result<Array2<f64>, ContrastiveError> {
    let n = h.nrows();
    let cache = sim_cache(h, temperature)?;
    let mut out = Array2::zeros((n, n.saturating_sub(1)));
    for i in 0..n {
        let mut col = 0;
        for j in 0..n {
            if j != i {
                out[[i, col]] = cache.probs[[i, j]];
                col += 1;
            }
        }
    }
    Ok(out)
}

/// Mean over rows of the row-wise KL divergence sum_j p_ij ln(p_ij / q_ij).
/// Rows are compared position-by-position.
pub fn kl_divergence_rows(p: &Array2<f64>, q: &Array2<f64>) -> f64 {
    assert_eq!(p.dim(), q.dim(), "distribution shape mismatch");
    let n = p.nrows().max(1) as f64;
    p.iter()
        .zip(q.iter())
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 })
        .sum::<f64>()
        / n
}

/// KL(Sim(H) || Sim(H_raw)) averaged over rows, plus the gradient with
/// respect to H. The raw side is data, so no gradient flows into it.
fn manifold_term(
    h: &Array2<f64>,
    raw: &SimCache,
    temperature: f64,
) -> Result<(f64, Array2<f64>), ContrastiveError> {
    let n = h.nrows();
    let cache = sim_cache(h, temperature)?;
    let n_f = n as f64;

    let mut loss = 0.0;
    // d loss / d probs, zero on the diagonal
    let mut d_probs = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let p = cache.probs[[i, j]];
            let q = raw.probs[[i, j]];
            if p > 0.0 {
                let log_ratio = (p / q).ln();
                loss += p * log_ratio / n_f;
                d_probs[[i, j]] = (log_ratio + 1.0) / n_f;
            }
        }
    }

    // Softmax backward: dC_ij = p_ij (dP_ij - sum_j' dP_ij' p_ij') / temperature
    let mut d_cos = Array2::zeros((n, n));
    for i in 0..n {
        let mut row_dot = 0.0;
        for j in 0..n {
            row_dot += d_probs[[i, j]] * cache.probs[[i, j]];
        }
        for j in 0..n {
            if j != i {
                d_cos[[i, j]] =
                    cache.probs[[i, j]] * (d_probs[[i, j]] - row_dot) / temperature;
            }
        }
    }

    Ok((loss, cosine_backward_symmetric(&cache, &d_cos)))
}

/// Backward through a symmetric cosine matrix C = U·Uᵀ given dL/dC with a
/// zero diagonal. Returns dL/dH.
fn cosine_backward_symmetric(cache: &SimCache, d_cos: &Array2<f64>) -> Array2<f64> {
    let sym = d_cos + &d_cos.t();
    let weighted = (&sym * &cache.cosines).sum_axis(Axis(1));
    let mut grad = sym.dot(&cache.unit);
    for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
        let u_row = cache.unit.row(i);
        for (g, &u) in row.iter_mut().zip(u_row) {
            *g = (*g - weighted[i] * u) / cache.norms[i];
        }
    }
    grad
}

/// lambda_pos · KL(Sim(H_pos) || Sim(H_raw)) + lambda_neg · KL(Sim(H_neg) || Sim(H_raw)).
pub fn manifold_loss(
    h_pos: &Array2<f64>,
    h_neg: &Array2<f64>,
    h_raw: &Array2<f64>,
    cfg: &LossConfig,
) -> Result<f64, ContrastiveError> {
    if cfg.lambda_pos == 0.0 && cfg.lambda_neg == 0.0 {
        return Ok(0.0);
    }
    let raw = sim_cache(h_raw, cfg.softmax_temperature)?;
    let mut loss = 0.0;
    if cfg.lambda_pos > 0.0 {
        loss += cfg.lambda_pos * manifold_term(h_pos, &raw, cfg.softmax_temperature)?.0;
    }
    if cfg.lambda_neg > 0.0 {
        loss += cfg.lambda_neg * manifold_term(h_neg, &raw, cfg.softmax_temperature)?.0;
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// InfoNCE
// ---------------------------------------------------------------------------

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The InfoNCE estimate from a precomputed score matrix F_ij = f(pos_i, neg_j):
/// mean_i F_ii - mean_i log((1/N) sum_j e^{F_ij}), via log-sum-exp.
///
/// Never exceeds ln N, and equals 0 exactly for constant scores (and for
/// N = 1, where the two terms cancel).
pub fn info_nce_from_scores(scores: &Array2<f64>) -> f64 {
    let n = scores.nrows();
    assert_eq!(n, scores.ncols(), "score matrix must be square");
    if n == 0 {
        return 0.0;
    }
    let ln_n = (n as f64).ln();
    let mut total = 0.0;
    for i in 0..n {
        let row = scores.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        total += (scores[[i, i]] - max) - sum.ln() + ln_n;
    }
    total / n as f64
}

/// Score matrix F_ij = softplus(w·cos(pos_i, neg_j) + c) plus caches.
struct ScoreCache {
    unit_pos: Array2<f64>,
    norms_pos: Array1<f64>,
    unit_neg: Array2<f64>,
    norms_neg: Array1<f64>,
    cosines: Array2<f64>,
    scores: Array2<f64>,
}

fn score_cache(
    h_pos: &Array2<f64>,
    h_neg: &Array2<f64>,
    score: &CosineScore,
) -> Result<ScoreCache, ContrastiveError> {
    let (unit_pos, norms_pos) = normalize_rows(h_pos)?;
    let (unit_neg, norms_neg) = normalize_rows(h_neg)?;
    let cosines = unit_pos.dot(&unit_neg.t());
    let scores = cosines.mapv(|k| softplus(score.weight * k + score.bias));
    Ok(ScoreCache {
        unit_pos,
        norms_pos,
        unit_neg,
        norms_neg,
        cosines,
        scores,
    })
}

/// InfoNCE over projected pairs with the learnable cosine score.
pub fn info_nce(
    h_pos: &Array2<f64>,
    h_neg: &Array2<f64>,
    score: &CosineScore,
) -> Result<f64, ContrastiveError> {
    Ok(info_nce_from_scores(
        &score_cache(h_pos, h_neg, score)?.scores,
    ))
}

/// Gradient of L_MI = -I_NCE: returns (loss, dH_pos, dH_neg, dw, dc).
#[allow(clippy::type_complexity)]
fn mi_term(
    h_pos: &Array2<f64>,
    h_neg: &Array2<f64>,
    score: &CosineScore,
) -> Result<(f64, Array2<f64>, Array2<f64>, f64, f64), ContrastiveError> {
    let n = h_pos.nrows();
    let cache = score_cache(h_pos, h_neg, score)?;
    let loss = -info_nce_from_scores(&cache.scores);

    // dL/dF_ij = (T_ij - delta_ij) / N with T the row softmax of F.
    let n_f = n as f64;
    let mut d_scores = Array2::zeros((n, n));
    for i in 0..n {
        let row = cache.scores.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        for j in 0..n {
            let t = (cache.scores[[i, j]] - max).exp() / sum;
            d_scores[[i, j]] = (t - f64::from(i == j)) / n_f;
        }
    }

    // Through softplus(w·K + c).
    let mut d_cos = Array2::zeros((n, n));
    let mut d_weight = 0.0;
    let mut d_bias = 0.0;
    for i in 0..n {
        for j in 0..n {
            let slope = sigmoid(score.weight * cache.cosines[[i, j]] + score.bias);
            let upstream = d_scores[[i, j]] * slope;
            d_cos[[i, j]] = upstream * score.weight;
            d_weight += upstream * cache.cosines[[i, j]];
            d_bias += upstream;
        }
    }

    // Through the asymmetric cosine matrix K = A_hat · B_hatᵀ.
    let row_weight = (&d_cos * &cache.cosines).sum_axis(Axis(1));
    let mut d_pos = d_cos.dot(&cache.unit_neg);
    for (i, mut row) in d_pos.rows_mut().into_iter().enumerate() {
        let u = cache.unit_pos.row(i);
        for (g, &ui) in row.iter_mut().zip(u) {
            *g = (*g - row_weight[i] * ui) / cache.norms_pos[i];
        }
    }
    let col_weight = (&d_cos * &cache.cosines).sum_axis(Axis(0));
    let mut d_neg = d_cos.t().dot(&cache.unit_pos);
    for (j, mut row) in d_neg.rows_mut().into_iter().enumerate() {
        let u = cache.unit_neg.row(j);
        for (g, &uj) in row.iter_mut().zip(u) {
            *g = (*g - col_weight[j] * uj) / cache.norms_neg[j];
        }
    }

    Ok((loss, d_pos, d_neg, d_weight, d_bias))
}

// ---------------------------------------------------------------------------
// Total loss and gradient
// ---------------------------------------------------------------------------

/// Backward through the residual head given dL/dY at input `x` with cached
/// activations `z`. Accumulates into `grads`.
fn head_backward(
    head: &ProjectionHead,
    x: &Array2<f64>,
    z: &Array2<f64>,
    d_y: &Array2<f64>,
    grads: &mut Gradients,
) {
    grads.w2 = &grads.w2 + &z.t().dot(d_y);
    grads.b2 = &grads.b2 + &d_y.sum_axis(Axis(0));
    let d_pre = d_y.dot(&head.w2.t()) * z.mapv(|v| 1.0 - v * v);
    grads.w1 = &grads.w1 + &x.t().dot(&d_pre);
    grads.b1 = &grads.b1 + &d_pre.sum_axis(Axis(0));
}

/// L = lambda_pos·L_pos + lambda_neg·L_neg + lambda_mi·L_MI with its exact
/// analytic gradient for every head parameter and both score scalars.
pub fn total_loss(
    head: &ProjectionHead,
    score: &CosineScore,
    batch: &ContrastiveBatch,
    cfg: &LossConfig,
) -> Result<(f64, Gradients), ContrastiveError> {
    let (h_pos, z_pos) = head.forward_cached(&batch.h_raw);
    let (h_neg, z_neg) = head.forward_cached(&batch.e_new);
    let n = h_pos.nrows();
    let dim = head.dim();

    let mut loss = 0.0;
    let mut d_pos: Array2<f64> = Array2::zeros((n, dim));
    let mut d_neg: Array2<f64> = Array2::zeros((n, dim));
    let mut grads = Gradients::zeros(dim, head.hidden());

    if cfg.lambda_pos > 0.0 || cfg.lambda_neg > 0.0 {
        let raw = sim_cache(&batch.h_raw, cfg.softmax_temperature)?;
        if cfg.lambda_pos > 0.0 {
            let (l, g) = manifold_term(&h_pos, &raw, cfg.softmax_temperature)?;
            loss += cfg.lambda_pos * l;
            d_pos = d_pos + g.mapv(|v| v * cfg.lambda_pos);
        }
        if cfg.lambda_neg > 0.0 {
            let (l, g) = manifold_term(&h_neg, &raw, cfg.softmax_temperature)?;
            loss += cfg.lambda_neg * l;
            d_neg = d_neg + g.mapv(|v| v * cfg.lambda_neg);
        }
    }

    if cfg.lambda_mi > 0.0 {
        let (l, g_pos, g_neg, d_weight, d_bias) = mi_term(&h_pos, &h_neg, score)?;
        loss += cfg.lambda_mi * l;
        d_pos = d_pos + g_pos.mapv(|v| v * cfg.lambda_mi);
        d_neg = d_neg + g_neg.mapv(|v| v * cfg.lambda_mi);
        grads.score_weight += cfg.lambda_mi * d_weight;
        grads.score_bias += cfg.lambda_mi * d_bias;
    }

    if !loss.is_finite() {
        return Err(ContrastiveError::NonFiniteLoss { step: 0 });
    }

    head_backward(head, &batch.h_raw, &z_pos, &d_pos, &mut grads);
    head_backward(head, &batch.e_new, &z_neg, &d_neg, &mut grads);
    Ok((loss, grads))
}
