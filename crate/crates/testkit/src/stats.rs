//! Small exact-statistics helpers for sizing test tolerances.

/// P(|X/n - 1/2| > delta) for X ~ Binomial(n, 1/2), by exact summation of the
/// probability mass function in log space.
pub fn binomial_two_sided_tail(n: u64, delta: f64) -> f64 {
    assert!(n > 0);
    let half = n as f64 / 2.0;
    let spread = delta * n as f64;
    // log pmf(k) via the recurrence pmf(k+1) = pmf(k) * (n - k) / (k + 1)
    let mut log_pmf = -(n as f64) * std::f64::consts::LN_2; // pmf(0) = 2^-n
    let mut tail = 0.0;
    for k in 0..=n {
        if (k as f64 - half).abs() > spread {
            tail += log_pmf.exp();
        }
        if k < n {
            log_pmf += ((n - k) as f64).ln() - ((k + 1) as f64).ln();
        }
    }
    tail.min(1.0)
}
