//! Brute-force search for the minimum-imbalance raw/rewrite selection.

/// Exhaustively enumerate all feasible selection masks over a user's tweets
/// and return `(mask, score)` for the minimal polarity-imbalance score.
///
/// Polarities are encoded as +1 (pos), -1 (neg), 0 (neu). Bit i of a mask
/// substitutes tweet i with its rewrite; masks touching a tweet without a
/// rewrite polarity are infeasible and skipped. Enumeration runs mask = 0,
/// 1, ..., 2^k - 1 and only a strictly smaller score replaces the incumbent.
pub fn min_bias_selection(raw: &[i8], rewrite: &[Option<i8>]) -> (u32, f64) {
    let k = raw.len();
    assert_eq!(k, rewrite.len());
    assert!(k <= 20, "exhaustive search capped at k = 20");
    let mut best_mask = 0u32;
    let mut best_score = f64::INFINITY;
    for mask in 0u32..(1u32 << k) {
        let mut counts = [0u32; 3]; // pos, neg, neu
        let mut feasible = true;
        for i in 0..k {
            let polarity = if mask >> i & 1 == 1 {
                match rewrite[i] {
                    Some(p) => p,
                    None => {
                        feasible = false;
                        break;
                    }
                }
            } else {
                raw[i]
            };
            match polarity {
                1 => counts[0] += 1,
                -1 => counts[1] += 1,
                _ => counts[2] += 1,
            }
        }
        if !feasible {
            continue;
        }
        let kf = k as f64;
        let r_pos = counts[0] as f64 / kf;
        let r_neg = counts[1] as f64 / kf;
        let r_neu = counts[2] as f64 / kf;
        let score = (r_pos.exp() - r_neg.exp()).abs() / r_neu.exp();
        if score < best_score {
            best_score = score;
            best_mask = mask;
        }
    }
    (best_mask, best_score)
}
