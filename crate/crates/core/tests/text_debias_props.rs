//! Score and selection-search checks against the independent oracles: the
//! exhaustive brute-force search and the arbitrary-precision score.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use shortcutlab::model::{AnnotatedTweet, FeatureDimension, Label, Polarity, UserRecord};
use shortcutlab::text_debias::{
    bias_score, debias_user, proportions_of, BiasProportions, SelectionVector,
};
use shortcutlab_testkit::{bias_score_oracle, min_bias_selection};

const DIM: FeatureDimension = FeatureDimension::Sentiment;

fn polarity_of(code: i8) -> Polarity {
    match code {
        1 => Polarity::Pos,
        -1 => Polarity::Neg,
        _ => Polarity::Neu,
    }
}

fn random_user(rng: &mut Pcg64, k: usize) -> (UserRecord, Vec<i8>, Vec<Option<i8>>) {
    let mut raw_codes = Vec::with_capacity(k);
    let mut rewrite_codes = Vec::with_capacity(k);
    let tweets: Vec<AnnotatedTweet> = (0..k)
        .map(|i| {
            let raw_code = [1i8, -1, 0][rng.random_range(0..3)];
            let rewrite_code = if rng.random_range(0.0..1.0) < 0.7 {
                Some([1i8, -1, 0][rng.random_range(0..3)])
            } else {
                None
            };
            raw_codes.push(raw_code);
            rewrite_codes.push(rewrite_code);
            let mut annotations = BTreeMap::new();
            for dimension in FeatureDimension::ALL {
                annotations.insert(dimension, Polarity::Neu);
            }
            annotations.insert(DIM, polarity_of(raw_code));
            AnnotatedTweet {
                text: format!("tweet {i}"),
                annotations,
                rewrite: rewrite_code.map(|_| format!("tweet {i} rewritten")),
                rewrite_target: rewrite_code.map(polarity_of),
            }
        })
        .collect();
    let mut user_polarity = BTreeMap::new();
    for dimension in FeatureDimension::ALL {
        user_polarity.insert(dimension, Polarity::Neu);
    }
    let user = UserRecord {
        user_id: "u".into(),
        label: Label::Bot,
        user_polarity,
        tweets,
    };
    (user, raw_codes, rewrite_codes)
}

#[test]
fn search_matches_brute_force_oracle_over_random_users() {
    let mut rng = Pcg64::seed_from_u64(42);
    for trial in 0..500 {
        let k = rng.random_range(1..=10usize);
        let (user, raw_codes, rewrite_codes) = random_user(&mut rng, k);
        let outcome = debias_user(&user, DIM).unwrap();
        let (_, oracle_score) = min_bias_selection(&raw_codes, &rewrite_codes);
        assert!(
            (outcome.score_after - oracle_score).abs() <= 1e-12,
            "trial {trial}: search {} vs oracle {}",
            outcome.score_after,
            oracle_score
        );
        // Monotone guard: never worse than leaving everything raw.
        assert!(outcome.score_after <= outcome.score_before + 1e-15);
    }
}

#[test]
fn score_matches_arbitrary_precision_oracle() {
    let mut rng = Pcg64::seed_from_u64(7);
    for _ in 0..500 {
        let k = rng.random_range(1..=10usize);
        let pos = rng.random_range(0..=k);
        let neg = rng.random_range(0..=(k - pos));
        let neu = k - pos - neg;
        let p = BiasProportions::new(
            pos as f64 / k as f64,
            neg as f64 / k as f64,
            neu as f64 / k as f64,
        )
        .unwrap();
        let ours = bias_score(&p);
        let oracle = bias_score_oracle(p.r_pos, p.r_neg, p.r_neu);
        assert!(
            (ours - oracle).abs() <= 1e-12,
            "({}, {}, {}): {} vs {}",
            p.r_pos,
            p.r_neg,
            p.r_neu,
            ours,
            oracle
        );
    }
}

#[test]
fn frozen_oracle_values() {
    // Computed with the arbitrary-precision oracle.
    let cases = [
        ((1.0, 0.0, 0.0), 1.718281828459045),
        ((0.6, 0.2, 0.2), 0.49182469764127035),
        ((0.4, 0.4, 0.2), 0.0),
    ];
    for ((pos, neg, neu), expected) in cases {
        let p = BiasProportions::new(pos, neg, neu).unwrap();
        assert!((bias_score(&p) - expected).abs() <= 1e-12);
        assert!((bias_score_oracle(pos, neg, neu) - expected).abs() <= 1e-12);
    }
}

#[test]
fn selected_tweets_reproduce_the_reported_score() {
    let mut rng = Pcg64::seed_from_u64(99);
    for _ in 0..100 {
        let k = rng.random_range(1..=8usize);
        let (user, _, _) = random_user(&mut rng, k);
        let outcome = debias_user(&user, DIM).unwrap();
        let recomputed = bias_score(
            &proportions_of(&user.tweets, DIM, &outcome.selection).unwrap(),
        );
        assert_eq!(recomputed, outcome.score_after);
        // The materialized list must agree with the selection bits.
        for (tweet, (&bit, original)) in outcome
            .tweets
            .iter()
            .zip(outcome.selection.bits.iter().zip(&user.tweets))
        {
            if bit {
                assert_eq!(Some(&tweet.text), original.rewrite.as_ref());
            } else {
                assert_eq!(tweet.text, original.text);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Zero exactly when the positive and negative proportions agree.
    #[test]
    fn zero_iff_symmetric(pos in 0usize..=10, neg in 0usize..=10, neu in 0usize..=10) {
        prop_assume!(pos + neg + neu > 0);
        let total = (pos + neg + neu) as f64;
        let p = BiasProportions::new(pos as f64 / total, neg as f64 / total, neu as f64 / total).unwrap();
        let score = bias_score(&p);
        if pos == neg {
            prop_assert_eq!(score, 0.0);
        } else {
            prop_assert!(score > 0.0);
        }
    }

    /// Swapping pos and neg leaves the score unchanged.
    #[test]
    fn swap_invariance(pos in 0usize..=10, neg in 0usize..=10, neu in 0usize..=10) {
        prop_assume!(pos + neg + neu > 0);
        let total = (pos + neg + neu) as f64;
        let a = BiasProportions::new(pos as f64 / total, neg as f64 / total, neu as f64 / total).unwrap();
        let b = BiasProportions::new(neg as f64 / total, pos as f64 / total, neu as f64 / total).unwrap();
        prop_assert_eq!(bias_score(&a), bias_score(&b));
    }
}

#[test]
fn all_false_selection_matches_raw_proportions() {
    let mut rng = Pcg64::seed_from_u64(5);
    let (user, raw_codes, _) = random_user(&mut rng, 5);
    let selection = SelectionVector::all_raw(5);
    let p = proportions_of(&user.tweets, DIM, &selection).unwrap();
    let pos = raw_codes.iter().filter(|&&c| c == 1).count() as f64 / 5.0;
    assert_eq!(p.r_pos, pos);
}
