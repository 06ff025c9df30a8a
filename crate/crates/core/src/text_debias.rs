//! Per-user bias minimization: an exponential imbalance score over polarity
//! proportions, and the exhaustive raw/rewrite selection minimizing it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AnnotatedTweet, FeatureDimension, Polarity, UserRecord};
use crate::util::write_atomic;

/// Proportions of positive, negative, and neutral expressions in a tweet set.
/// Always sums to 1 (within 1e-12).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasProportions {
    pub r_pos: f64,
    pub r_neg: f64,
    pub r_neu: f64,
}

impl BiasProportions {
    pub fn new(r_pos: f64, r_neg: f64, r_neu: f64) -> Result<BiasProportions, TextDebiasError> {
        let sum = r_pos + r_neg + r_neu;
        if (sum - 1.0).abs() > 1e-12 || [r_pos, r_neg, r_neu].iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(TextDebiasError::InvalidProportions {
                r_pos,
                r_neg,
                r_neu,
            });
        }
        Ok(BiasProportions {
            r_pos,
            r_neg,
            r_neu,
        })
    }
}

/// Which tweets of a user take the rewritten version (true = rewrite).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionVector {
    pub bits: Vec<bool>,
}

impl SelectionVector {
    pub fn all_raw(k: usize) -> SelectionVector {
        SelectionVector {
            bits: vec![false; k],
        }
    }

    fn from_mask(mask: u32, k: usize) -> SelectionVector {
        SelectionVector {
            bits: (0..k).map(|i| mask >> i & 1 == 1).collect(),
        }
    }
}

/// Result of the per-user search: the winning selection, the debiased tweet
/// list, and the scores before and after.
#[derive(Debug, Clone)]
pub struct DebiasOutcome {
    pub selection: SelectionVector,
    pub tweets: Vec<AnnotatedTweet>,
    pub score_before: f64,
    pub score_after: f64,
}

#[derive(Debug, Error)]
pub enum TextDebiasError {
    #[error("proportions ({r_pos}, {r_neg}, {r_neu}) do not form a distribution")]
    InvalidProportions { r_pos: f64, r_neg: f64, r_neu: f64 },
    #[error("selection has {selection_len} bits for {tweets_len} tweets")]
    LengthMismatch {
        selection_len: usize,
        tweets_len: usize,
    },
    #[error("selection bit {index} set but the tweet has no usable rewrite")]
    SelectionInfeasible { index: usize },
    #[error("tweet {index} lacks a polarity annotation for {dimension}")]
    MissingPolarity {
        index: usize,
        dimension: FeatureDimension,
    },
    #[error("k = {k} exceeds the exhaustive-search cap of {cap}")]
    KTooLarge { k: usize, cap: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Exhaustive search is 2^k; beyond this the caller must shrink k.
pub const MAX_EXHAUSTIVE_K: usize = 20;

/// The feature bias score |e^{r_pos} - e^{r_neg}| / e^{r_neu}.
///
/// Zero exactly when positive and negative proportions match; the
/// denominator e^{r_neu} >= 1 never vanishes.
pub fn bias_score(p: &BiasProportions) -> f64 {
    (p.r_pos.exp() - p.r_neg.exp()).abs() / p.r_neu.exp()
}

/// A tweet's rewrite is usable in a selection only when both the rewritten
/// text and its target polarity were recorded.
pub fn rewrite_usable(tweet: &AnnotatedTweet) -> bool {
    tweet.rewrite.is_some() && tweet.rewrite_target.is_some()
}

/// Polarity proportions of the selected variant of each tweet: raw tweets
/// contribute their annotation along `dimension`, rewritten ones their
/// recorded rewrite target.
pub fn proportions_of(
    tweets: &[AnnotatedTweet],
    dimension: FeatureDimension,
    selection: &SelectionVector,
) -> Result<BiasProportions, TextDebiasError> {
    if selection.bits.len() != tweets.len() {
        return Err(TextDebiasError::LengthMismatch {
            selection_len: selection.bits.len(),
            tweets_len: tweets.len(),
        });
    }
    let mut counts = [0usize; 3];
    for (index, (tweet, &take_rewrite)) in tweets.iter().zip(&selection.bits).enumerate() {
        if take_rewrite && !rewrite_usable(tweet) {
            return Err(TextDebiasError::SelectionInfeasible { index });
        }
        let polarity = tweet
            .polarity(dimension, take_rewrite)
            .ok_or(TextDebiasError::MissingPolarity { index, dimension })?;
        match polarity {
            Polarity::Pos => counts[0] += 1,
            Polarity::Neg => counts[1] += 1,
            Polarity::Neu => counts[2] += 1,
        }
    }
    let k = tweets.len() as f64;
    BiasProportions::new(
        counts[0] as f64 / k,
        counts[1] as f64 / k,
        counts[2] as f64 / k,
    )
}

/// Exhaustively minimize the bias score over all feasible raw/rewrite
/// selections of a user's tweets.
///
/// Enumeration runs the selection mask s = 0 .. 2^k - 1 with bit i of s
/// choosing tweet i's rewrite; masks that touch a tweet without a usable
/// rewrite are skipped; only a strictly smaller score displaces the
/// incumbent, so the lowest mask wins ties. Mask 0 (all raw) is always
/// feasible.
pub fn debias_user(
    user: &UserRecord,
    dimension: FeatureDimension,
) -> Result<DebiasOutcome, TextDebiasError> {
    let k = user.tweets.len();
    if k > MAX_EXHAUSTIVE_K {
        return Err(TextDebiasError::KTooLarge {
            k,
            cap: MAX_EXHAUSTIVE_K,
        });
    }
    let feasible_mask: u32 = user
        .tweets
        .iter()
        .enumerate()
        .filter(|(_, t)| rewrite_usable(t))
        .map(|(i, _)| 1u32 << i)
        .sum();

    let mut best_mask = 0u32;
    let mut best_score = f64::INFINITY;
    let mut score_before = f64::INFINITY;
    for mask in 0u32..(1u32 << k) {
        if mask & !feasible_mask != 0 {
            continue;
        }
        let selection = SelectionVector::from_mask(mask, k);
        let score = bias_score(&proportions_of(&user.tweets, dimension, &selection)?);
        if mask == 0 {
            score_before = score;
        }
        if score < best_score {
            best_score = score;
            best_mask = mask;
        }
    }

    let selection = SelectionVector::from_mask(best_mask, k);
    let tweets = apply_selection(&user.tweets, dimension, &selection);
    Ok(DebiasOutcome {
        selection,
        tweets,
        score_before,
        score_after: best_score,
    })
}

/// Materialize the debiased tweet list: selected tweets take the rewrite text
/// and their annotation along `dimension` becomes the rewrite target.
pub fn apply_selection(
    tweets: &[AnnotatedTweet],
    dimension: FeatureDimension,
    selection: &SelectionVector,
) -> Vec<AnnotatedTweet> {
    tweets
        .iter()
        .zip(&selection.bits)
        .map(|(tweet, &take_rewrite)| {
            if !take_rewrite {
                return tweet.clone();
            }
            let mut out = tweet.clone();
            out.text = tweet.rewrite.clone().expect("feasibility checked");
            let target = tweet.rewrite_target.expect("feasibility checked");
            out.annotations.insert(dimension, target);
            out
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Selection file (JSONL, one user per line)
// ---------------------------------------------------------------------------

/// One line of the selections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub user_id: String,
    pub selection: Vec<bool>,
    pub score_before: f64,
    pub score_after: f64,
}

pub fn save_selections(path: &Path, records: &[SelectionRecord]) -> Result<(), TextDebiasError> {
    let mut buf = Vec::new();
    for record in records {
        serde_json::to_writer(&mut buf, record).expect("selection record serializes");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)?;
    Ok(())
}

pub fn load_selections(path: &Path) -> Result<Vec<SelectionRecord>, TextDebiasError> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let record: SelectionRecord = serde_json::from_str(line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Label;
    use std::collections::BTreeMap;

    fn tweet_with(polarity: Polarity, rewrite_to: Option<Polarity>) -> AnnotatedTweet {
        let mut annotations = BTreeMap::new();
        for dimension in FeatureDimension::ALL {
            annotations.insert(dimension, Polarity::Neu);
        }
        annotations.insert(FeatureDimension::Sentiment, polarity);
        AnnotatedTweet {
            text: "original".into(),
            annotations,
            rewrite: rewrite_to.map(|_| "rewritten".into()),
            rewrite_target: rewrite_to,
        }
    }

    fn user_of(tweets: Vec<AnnotatedTweet>) -> UserRecord {
        let mut user_polarity = BTreeMap::new();
        for dimension in FeatureDimension::ALL {
            user_polarity.insert(dimension, Polarity::Neu);
        }
        UserRecord {
            user_id: "u".into(),
            label: Label::Bot,
            user_polarity,
            tweets,
        }
    }

    #[test]
    fn score_zero_on_symmetric_proportions() {
        let p = BiasProportions::new(0.4, 0.4, 0.2).unwrap();
        assert_eq!(bias_score(&p), 0.0);
    }

    #[test]
    fn score_of_pure_positive_set() {
        let p = BiasProportions::new(1.0, 0.0, 0.0).unwrap();
        let expected = std::f64::consts::E - 1.0;
        assert!((bias_score(&p) - expected).abs() < 1e-15);
    }

    #[test]
    fn proportions_count_selected_variants() {
        // 2 pos tweets with neg rewrites, selection (1,0) on k=2.
        let tweets = vec![
            tweet_with(Polarity::Pos, Some(Polarity::Neg)),
            tweet_with(Polarity::Pos, Some(Polarity::Neg)),
        ];
        let selection = SelectionVector {
            bits: vec![true, false],
        };
        let p = proportions_of(&tweets, FeatureDimension::Sentiment, &selection).unwrap();
        assert_eq!((p.r_pos, p.r_neg, p.r_neu), (0.5, 0.5, 0.0));
    }

    #[test]
    fn infeasible_selection_is_rejected() {
        let tweets = vec![tweet_with(Polarity::Pos, None)];
        let selection = SelectionVector { bits: vec![true] };
        assert!(matches!(
            proportions_of(&tweets, FeatureDimension::Sentiment, &selection),
            Err(TextDebiasError::SelectionInfeasible { index: 0 })
        ));
    }

    #[test]
    fn strict_improvement_keeps_lowest_mask() {
        // k=2, raw [pos,pos], rewrites to [neg,neg]: masks 1 and 2 both score
        // zero, the earlier one wins.
        let user = user_of(vec![
            tweet_with(Polarity::Pos, Some(Polarity::Neg)),
            tweet_with(Polarity::Pos, Some(Polarity::Neg)),
        ]);
        let outcome = debias_user(&user, FeatureDimension::Sentiment).unwrap();
        assert_eq!(outcome.selection.bits, vec![true, false]);
        assert_eq!(outcome.score_after, 0.0);
        assert!((outcome.score_before - (std::f64::consts::E - 1.0)).abs() < 1e-15);
        assert_eq!(outcome.tweets[0].text, "rewritten");
        assert_eq!(
            outcome.tweets[0].annotations[&FeatureDimension::Sentiment],
            Polarity::Neg
        );
        assert_eq!(outcome.tweets[1].text, "original");
    }

    #[test]
    fn no_rewrites_returns_raw_selection() {
        let user = user_of(vec![
            tweet_with(Polarity::Pos, None),
            tweet_with(Polarity::Neg, None),
        ]);
        let outcome = debias_user(&user, FeatureDimension::Sentiment).unwrap();
        assert_eq!(outcome.selection.bits, vec![false, false]);
        assert_eq!(outcome.tweets, user.tweets);
        assert_eq!(outcome.score_before, outcome.score_after);
    }

    #[test]
    fn balanced_user_keeps_all_false() {
        // (0.4, 0.4, 0.2) raw proportions already score zero.
        let user = user_of(vec![
            tweet_with(Polarity::Pos, Some(Polarity::Neg)),
            tweet_with(Polarity::Pos, Some(Polarity::Neg)),
            tweet_with(Polarity::Neg, None),
            tweet_with(Polarity::Neg, None),
            tweet_with(Polarity::Neu, None),
        ]);
        let outcome = debias_user(&user, FeatureDimension::Sentiment).unwrap();
        assert_eq!(outcome.selection.bits, vec![false; 5]);
        assert_eq!(outcome.score_after, 0.0);
    }

    #[test]
    fn oversized_k_is_rejected() {
        let user = user_of((0..21).map(|_| tweet_with(Polarity::Pos, None)).collect());
        assert!(matches!(
            debias_user(&user, FeatureDimension::Sentiment),
            Err(TextDebiasError::KTooLarge { k: 21, .. })
        ));
    }
}
