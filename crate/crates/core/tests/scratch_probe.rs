//! Temporary diagnostics (deleted before release).

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use shortcutlab::contrastive::{
    info_nce, manifold_loss, train, CosineScore, LossConfig, PairSet, ProjectionHead,
};

fn random_matrix(rng: &mut Pcg64, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for v in m.iter_mut() {
        *v = rng.random_range(-scale..scale);
    }
    m
}

#[test]
#[ignore]
fn probe_offset_training() {
    let (n, dim) = (64usize, 8usize);
    let mut rng = Pcg64::seed_from_u64(21);
    let raw = random_matrix(&mut rng, n, dim, 1.0);
    let mut new = raw.clone();
    for mut row in new.rows_mut() {
        row[0] += 3.0;
    }
    let pairs = PairSet::new(raw.clone(), new.clone());

    for (lr, steps, lmi, lpos, lneg, temp) in [
        (0.05, 3000, 1.0, 0.2, 0.2, 0.5),
        (0.05, 10000, 1.0, 0.2, 0.2, 0.5),
        (0.1, 3000, 1.0, 0.2, 0.2, 0.5),
        (0.1, 5000, 1.0, 1.0, 1.0, 0.5),
        (0.2, 5000, 1.0, 0.2, 0.2, 1.0),
    ] {
        let cfg = LossConfig {
            batch_size: 32,
            steps,
            learning_rate: lr,
            hidden: 8,
            seed: 3,
            lambda_mi: lmi,
            lambda_pos: lpos,
            lambda_neg: lneg,
            softmax_temperature: temp,
            ..LossConfig::default()
        };
        let result = train(&pairs, None, &cfg).unwrap();
        let mean_cos = |head: &ProjectionHead| -> f64 {
            let a = head.apply(&raw);
            let b = head.apply(&new);
            a.rows()
                .into_iter()
                .zip(b.rows())
                .map(|(ra, rb)| ra.dot(&rb) / (ra.dot(&ra).sqrt() * rb.dot(&rb).sqrt()))
                .sum::<f64>()
                / n as f64
        };
        let zero = ProjectionHead::zeros(dim, cfg.hidden);
        let h_pos = result.head.apply(&raw);
        let h_neg = result.head.apply(&new);
        let mi_end = info_nce(&h_pos, &h_neg, &result.score).unwrap();
        let mi_start = info_nce(&raw, &new, &CosineScore::default()).unwrap();
        let manifold = manifold_loss(&h_pos, &h_neg, &raw, &cfg).unwrap();
        println!(
            "lr={lr} steps={steps} lmi={lmi} lpos={lpos} temp={temp}: cos {:+.4} -> {:+.4}, I {:+.4} -> {:+.4}, w={:+.3} c={:+.3}, manifold={:.5}, train_loss {:.4} -> {:.4}",
            mean_cos(&zero),
            mean_cos(&result.head),
            mi_start,
            mi_end,
            result.score.weight,
            result.score.bias,
            manifold,
            result.curve.first().map(|p| p.train_loss).unwrap_or(0.0),
            result.curve.last().map(|p| p.train_loss).unwrap_or(0.0),
        );
    }
}
