//! Full-matrix Levenshtein distance, the textbook O(n*m) formulation.

/// Edit distance between two token slices with unit costs, computed with the
/// complete DP matrix. Slower and more memory-hungry than a rolling-row
/// implementation, which is exactly why it serves as the reference.
pub fn levenshtein_ref<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let n = a.len();
    let m = b.len();
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let substitution = dp[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            dp[i][j] = substitution.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    dp[n][m]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_distances() {
        let a: Vec<&str> = "a b c".split_whitespace().collect();
        let b: Vec<&str> = "a x c".split_whitespace().collect();
        assert_eq!(levenshtein_ref(&a, &b), 1);
        assert_eq!(levenshtein_ref(&a, &a), 0);
        assert_eq!(levenshtein_ref(&a, &[]), 3);
        assert_eq!(levenshtein_ref::<&str>(&[], &b), 3);
    }
}
