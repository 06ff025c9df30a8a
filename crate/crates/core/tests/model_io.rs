//! Dataset and embedding file round trips plus the parse-time invariants.

use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use shortcutlab::model::{
    load_embeddings, save_embeddings, user_text_key, AnnotatedTweet, Dataset, EmbeddingFormat,
    EmbeddingMatrix, FeatureDimension, Label, ModelError, Polarity, UserRecord, Variant,
};

fn full_map(active: Polarity) -> BTreeMap<FeatureDimension, Polarity> {
    let mut map = BTreeMap::new();
    for dimension in FeatureDimension::ALL {
        map.insert(dimension, Polarity::Neu);
    }
    map.insert(FeatureDimension::Sentiment, active);
    map
}

fn user(id: &str, label: Label, polarity: Polarity, k: usize, with_rewrites: bool) -> UserRecord {
    UserRecord {
        user_id: id.to_string(),
        label,
        user_polarity: full_map(polarity),
        tweets: (0..k)
            .map(|i| AnnotatedTweet {
                text: format!("{id} says thing {i}"),
                annotations: full_map(polarity),
                rewrite: with_rewrites.then(|| format!("{id} says other thing {i}")),
                rewrite_target: with_rewrites.then(|| polarity.flipped()),
            })
            .collect(),
    }
}

fn toy_dataset(name: &str) -> Dataset {
    Dataset {
        name: name.to_string(),
        k: 3,
        users: vec![
            user("u1", Label::Bot, Polarity::Pos, 3, true),
            user("u2", Label::Human, Polarity::Neg, 3, false),
        ],
    }
}

#[test]
fn dataset_round_trips_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    let dataset = toy_dataset("corpus");
    dataset.save(&path).unwrap();
    let loaded = Dataset::load(&path).unwrap();
    assert_eq!(loaded, dataset);
}

#[test]
fn duplicate_user_is_rejected_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dup.jsonl");
    let u = user("u1", Label::Bot, Polarity::Pos, 1, false);
    let line = serde_json::to_string(&u).unwrap();
    std::fs::write(&path, format!("{line}\n{line}\n")).unwrap();
    match Dataset::load(&path) {
        Err(ModelError::DuplicateUser { user_id, line }) => {
            assert_eq!(user_id, "u1");
            assert_eq!(line, 2);
        }
        other => panic!("expected DuplicateUser, got {other:?}"),
    }
}

#[test]
fn missing_annotation_dimension_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing.jsonl");
    let mut u = user("u1", Label::Bot, Polarity::Pos, 1, false);
    u.tweets[0].annotations.remove(&FeatureDimension::Value);
    std::fs::write(&path, serde_json::to_string(&u).unwrap() + "\n").unwrap();
    match Dataset::load(&path) {
        Err(ModelError::MissingAnnotation { dimension, .. }) => {
            assert_eq!(dimension, FeatureDimension::Value);
        }
        other => panic!("expected MissingAnnotation, got {other:?}"),
    }
}

#[test]
fn mismatched_tweet_counts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kmismatch.jsonl");
    let a = user("u1", Label::Bot, Polarity::Pos, 3, false);
    let b = user("u2", Label::Human, Polarity::Neg, 2, false);
    std::fs::write(
        &path,
        format!(
            "{}\n{}\n",
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        ),
    )
    .unwrap();
    assert!(matches!(
        Dataset::load(&path),
        Err(ModelError::KMismatch {
            expected: 3,
            found: 2,
            ..
        })
    ));
}

#[test]
fn embeddings_round_trip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let mut matrix = EmbeddingMatrix::new(4, "emb");
    // Values chosen to be exactly representable in f32 so that the binary
    // format's f32 storage round-trips.
    matrix.insert("a".into(), vec![1.0, -2.5, 0.25, 8.0]).unwrap();
    matrix.insert("b".into(), vec![0.0, 4.5, -1.0, 0.125]).unwrap();
    matrix.insert("c".into(), vec![3.0, 2.0, 1.0, -0.5]).unwrap();

    let jsonl = dir.path().join("emb.jsonl");
    save_embeddings(&jsonl, &matrix, EmbeddingFormat::Jsonl).unwrap();
    assert_eq!(load_embeddings(&jsonl, 4).unwrap(), matrix);

    let binary = dir.path().join("emb.bin");
    save_embeddings(&binary, &matrix, EmbeddingFormat::Binary).unwrap();
    let loaded = load_embeddings(&binary, 4).unwrap();
    assert_eq!(loaded.len(), 3);
    assert_eq!(loaded.get("a").unwrap(), matrix.get("a").unwrap());
    let raw = std::fs::read(&binary).unwrap();
    assert_eq!(&raw[..4], b"EMB1");
}

#[test]
fn embedding_dimension_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut matrix = EmbeddingMatrix::new(4, "emb");
    matrix.insert("a".into(), vec![0.0; 4]).unwrap();
    let path = dir.path().join("emb.bin");
    save_embeddings(&path, &matrix, EmbeddingFormat::Binary).unwrap();
    assert!(matches!(
        load_embeddings(&path, 768),
        Err(ModelError::DimMismatch {
            expected: 768,
            found: 4
        })
    ));
}

#[test]
fn non_finite_jsonl_embedding_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"key\":\"a\",\"vec\":[1.0,\"NaN\",2.0]}\n").unwrap();
    // serde_json won't parse the string "NaN" into f64, so this surfaces as a
    // malformed line; a literal infinity coming from a binary file is the
    // NonFiniteEmbedding path.
    assert!(Dataset::load(&path).is_err());
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"EMB1");
    bytes.extend_from_slice(&2u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes());
    bytes.push(b'a');
    bytes.extend_from_slice(&f32::NAN.to_le_bytes());
    bytes.extend_from_slice(&1.0f32.to_le_bytes());
    let binary = dir.path().join("bad.bin");
    std::fs::write(&binary, bytes).unwrap();
    assert!(matches!(
        load_embeddings(&binary, 2),
        Err(ModelError::NonFiniteEmbedding { .. })
    ));
}

#[test]
fn text_keys_are_unique_across_a_dataset() {
    let dataset = toy_dataset("corpus");
    let mut seen = HashSet::new();
    for user in &dataset.users {
        for index in 0..user.tweets.len() {
            for variant in [Variant::Raw, Variant::Mixed] {
                let key = user_text_key(user, variant, index).unwrap();
                assert!(seen.insert(key.clone()), "duplicate key {key}");
            }
            if user.tweets[index].rewrite.is_some() {
                let key = user_text_key(user, Variant::Rewritten, index).unwrap();
                assert!(seen.insert(key.clone()), "duplicate key {key}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Round trip over randomized small datasets.
    #[test]
    fn random_datasets_round_trip(
        seedset in proptest::collection::vec((0u8..3, 0u8..2, proptest::bool::ANY), 1..12),
        k in 1usize..4,
    ) {
        let users: Vec<UserRecord> = seedset
            .iter()
            .enumerate()
            .map(|(i, &(pol, label, rewrites))| {
                let polarity = [Polarity::Pos, Polarity::Neg, Polarity::Neu][pol as usize];
                let label = if label == 0 { Label::Human } else { Label::Bot };
                user(&format!("user-{i}"), label, polarity, k, rewrites && polarity != Polarity::Neu)
            })
            .collect();
        let dataset = Dataset { name: "prop".into(), k, users };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prop.jsonl");
        dataset.save(&path).unwrap();
        let loaded = Dataset::load(&path).unwrap();
        prop_assert_eq!(loaded, dataset);
    }
}
