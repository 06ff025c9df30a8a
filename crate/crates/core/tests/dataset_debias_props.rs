//! Class-rebalancing invariants over random classes with random
//! rewrite-validity masks.

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use shortcutlab::dataset_debias::{
    assignment_summary, debias_dataset, full_rewrite_set, load_assignments, save_assignments,
};
use shortcutlab::model::{AnnotatedTweet, FeatureDimension, Label, Polarity, UserRecord, Variant};

fn user(id: &str, label: Label, valid_rewrites: bool) -> UserRecord {
    let mut user_polarity = BTreeMap::new();
    let mut annotations = BTreeMap::new();
    for dimension in FeatureDimension::ALL {
        user_polarity.insert(dimension, Polarity::Neu);
        annotations.insert(dimension, Polarity::Pos);
    }
    UserRecord {
        user_id: id.into(),
        label,
        user_polarity,
        tweets: (0..3)
            .map(|i| AnnotatedTweet {
                text: format!("text {i}"),
                annotations: annotations.clone(),
                rewrite: valid_rewrites.then(|| format!("re {i}")),
                rewrite_target: valid_rewrites.then_some(Polarity::Neg),
            })
            .collect(),
    }
}

#[test]
fn invariants_hold_over_500_random_classes() {
    let start = std::time::Instant::now();
    let mut rng = Pcg64::seed_from_u64(99);
    for trial in 0..500u64 {
        let bots = rng.random_range(1..30usize);
        let humans = rng.random_range(1..30usize);
        let mut users: Vec<UserRecord> = Vec::new();
        for i in 0..bots {
            let valid = rng.random::<bool>();
            users.push(user(&format!("b{i}"), Label::Bot, valid));
        }
        for i in 0..humans {
            let valid = rng.random::<bool>();
            users.push(user(&format!("h{i}"), Label::Human, valid));
        }
        let refs: Vec<&UserRecord> = users.iter().collect();
        let mixed: BTreeSet<String> = users.iter().map(|u| u.user_id.clone()).collect();

        let a = debias_dataset(&refs, &mixed, trial).unwrap();
        let b = debias_dataset(&refs, &mixed, trial).unwrap();
        assert_eq!(a, b, "determinism under equal seed");

        // Coverage: every input exactly once, order preserved.
        assert_eq!(a.len(), users.len());
        for (assignment, user) in a.iter().zip(&users) {
            assert_eq!(assignment.user_id, user.user_id);
        }

        // Per class: |rewritten| == |raw| <= ceil(m/2), labels untouched.
        for label in Label::BOTH {
            let class: Vec<_> = a
                .iter()
                .zip(&users)
                .filter(|(_, u)| u.label == label)
                .collect();
            let m = class.len();
            let raw = class
                .iter()
                .filter(|(x, _)| x.variant == Variant::Raw)
                .count();
            let rewritten = class
                .iter()
                .filter(|(x, _)| x.variant == Variant::Rewritten)
                .count();
            assert_eq!(raw, rewritten, "trial {trial}, label {label}");
            assert!(rewritten <= m.div_ceil(2));
            // Rewritten users must actually carry full rewrite sets.
            for (x, u) in &class {
                if x.variant == Variant::Rewritten {
                    assert!(full_rewrite_set(u));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    println!("500 random classes in {elapsed:?}");
    assert!(elapsed.as_secs() < 5, "took {elapsed:?}, budget is 5s");
}

#[test]
fn summary_counts_the_documented_trace() {
    // Five bots; the rewrite pool ends up with three of them after the seeded
    // shuffle, two of which carry valid rewrites: expect 2 raw, 2 rewritten,
    // 1 mixed regardless of which users land where.
    let mut rng = Pcg64::seed_from_u64(1);
    for seed in 0..50u64 {
        let valid_count = 5usize;
        let users: Vec<UserRecord> = (0..valid_count)
            .map(|i| user(&format!("b{i}"), Label::Bot, true))
            .collect();
        let refs: Vec<&UserRecord> = users.iter().collect();
        let mixed: BTreeSet<String> = users.iter().map(|u| u.user_id.clone()).collect();
        let assignments = debias_dataset(&refs, &mixed, seed + rng.random_range(0..7)).unwrap();
        let users_by_id: BTreeMap<String, &UserRecord> =
            users.iter().map(|u| (u.user_id.clone(), u)).collect();
        let selections: BTreeMap<String, Vec<bool>> = users
            .iter()
            .map(|u| (u.user_id.clone(), vec![false; 3]))
            .collect();
        let summary = assignment_summary(
            &assignments,
            &users_by_id,
            FeatureDimension::Sentiment,
            &selections,
        );
        let bots = &summary["bot"];
        // All rewrites valid, m = 5, h = 2: rewrite pool of 3 all valid, but
        // only 2 partners exist in the original pool, so one is demoted.
        assert_eq!((bots.raw, bots.rewritten, bots.mixed), (2, 2, 1));
    }
}

#[test]
fn all_invalid_rewrites_fall_back_to_mixed() {
    let users: Vec<UserRecord> = (0..6)
        .map(|i| user(&format!("b{i}"), Label::Bot, false))
        .collect();
    let refs: Vec<&UserRecord> = users.iter().collect();
    let mixed: BTreeSet<String> = users.iter().map(|u| u.user_id.clone()).collect();
    let assignments = debias_dataset(&refs, &mixed, 4).unwrap();
    assert!(assignments.iter().all(|a| a.variant == Variant::Mixed));
}

#[test]
fn assignment_file_round_trips() {
    let users: Vec<UserRecord> = (0..4)
        .map(|i| user(&format!("u{i}"), Label::Human, i % 2 == 0))
        .collect();
    let refs: Vec<&UserRecord> = users.iter().collect();
    let mixed: BTreeSet<String> = users.iter().map(|u| u.user_id.clone()).collect();
    let assignments = debias_dataset(&refs, &mixed, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("assignments.jsonl");
    save_assignments(&path, &assignments).unwrap();
    assert_eq!(load_assignments(&path).unwrap(), assignments);
}
