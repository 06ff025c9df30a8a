//! Shared data model and file formats: users, tweets, annotations, labels,
//! and embedding matrices.
//!
//! Datasets live on disk as JSONL, one user per line. Embeddings come either
//! as JSONL rows `{"key", "vec"}` or as a compact binary format (magic
//! `EMB1`); the loader sniffs the magic to tell them apart.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::write_atomic;

/// Magic bytes opening a binary embedding file.
pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

/// The four shallow text attributes a shortcut can be built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureDimension {
    Sentiment,
    Topic,
    Emotion,
    Value,
}

impl FeatureDimension {
    pub const ALL: [FeatureDimension; 4] = [
        FeatureDimension::Sentiment,
        FeatureDimension::Topic,
        FeatureDimension::Emotion,
        FeatureDimension::Value,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureDimension::Sentiment => "sentiment",
            FeatureDimension::Topic => "topic",
            FeatureDimension::Emotion => "emotion",
            FeatureDimension::Value => "value",
        }
    }
}

impl fmt::Display for FeatureDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureDimension {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "sentiment" => Ok(FeatureDimension::Sentiment),
            "topic" => Ok(FeatureDimension::Topic),
            "emotion" => Ok(FeatureDimension::Emotion),
            "value" => Ok(FeatureDimension::Value),
            other => Err(ModelError::UnknownDimension(other.to_string())),
        }
    }
}

/// Polarity of a shallow attribute expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Pos,
    Neg,
    Neu,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Pos => "pos",
            Polarity::Neg => "neg",
            Polarity::Neu => "neu",
        }
    }

    /// pos <-> neg; neu maps to itself.
    pub fn flipped(self) -> Polarity {
        match self {
            Polarity::Pos => Polarity::Neg,
            Polarity::Neg => Polarity::Pos,
            Polarity::Neu => Polarity::Neu,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Account label: 0 = human, 1 = bot. Serialized as the bare integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Human,
    Bot,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::Human, Label::Bot];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Human => "human",
            Label::Bot => "bot",
        }
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        match label {
            Label::Human => 0,
            Label::Bot => 1,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Label, String> {
        match v {
            0 => Ok(Label::Human),
            1 => Ok(Label::Bot),
            other => Err(format!("label must be 0 (human) or 1 (bot), got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which version of a user's tweets an operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// The original tweets.
    Raw,
    /// Every tweet replaced by its rewrite.
    Rewritten,
    /// The per-user minimum-bias mixture of raw and rewritten tweets.
    Mixed,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Rewritten => "rewritten",
            Variant::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One tweet with its per-dimension polarity annotations and an optional
/// counterfactual rewrite targeting the active dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTweet {
    pub text: String,
    pub annotations: BTreeMap<FeatureDimension, Polarity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite_target: Option<Polarity>,
}

impl AnnotatedTweet {
    /// Polarity of the selected variant along `dimension`: the annotation for
    /// a raw tweet, the recorded rewrite target for a rewritten one.
    pub fn polarity(&self, dimension: FeatureDimension, use_rewrite: bool) -> Option<Polarity> {
        if use_rewrite {
            self.rewrite_target
        } else {
            self.annotations.get(&dimension).copied()
        }
    }
}

/// One labeled account with its k annotated tweets and the user-level
/// polarity assignment used for partitioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub label: Label,
    pub user_polarity: BTreeMap<FeatureDimension, Polarity>,
    pub tweets: Vec<AnnotatedTweet>,
}

impl UserRecord {
    /// User-level polarity along `dimension`. Load-time validation guarantees
    /// the entry exists.
    pub fn polarity(&self, dimension: FeatureDimension) -> Polarity {
        self.user_polarity[&dimension]
    }
}

/// A named corpus of users all carrying the same tweet count k.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub k: usize,
    pub users: Vec<UserRecord>,
}

/// Row-per-text dense vectors from a frozen embedding provider.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub provider_id: String,
    rows: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("duplicate user_id {user_id:?} at line {line}")]
    DuplicateUser { user_id: String, line: usize },
    #[error("user {user_id:?} tweet {tweet_index} is missing the {dimension} annotation")]
    MissingAnnotation {
        user_id: String,
        tweet_index: usize,
        dimension: FeatureDimension,
    },
    #[error("user {user_id:?} is missing the user-level {dimension} polarity")]
    MissingUserPolarity {
        user_id: String,
        dimension: FeatureDimension,
    },
    #[error("user {user_id:?} has {found} tweets, dataset k is {expected}")]
    KMismatch {
        user_id: String,
        expected: usize,
        found: usize,
    },
    #[error("user {user_id:?} tweet {tweet_index} has empty text")]
    EmptyText { user_id: String, tweet_index: usize },
    #[error("user {user_id:?} tweet {tweet_index} has an invalid rewrite (empty or equal to the original)")]
    InvalidRewrite { user_id: String, tweet_index: usize },
    #[error("dataset file contains no users")]
    EmptyDataset,
    #[error("unknown feature dimension {0:?}")]
    UnknownDimension(String),
    #[error("embedding dimension mismatch: expected {expected}, file has {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("non-finite embedding value for key {key:?}")]
    NonFiniteEmbedding { key: String },
    #[error("embedding key {key:?} not found")]
    MissingEmbedding { key: String },
    #[error("tweet index {index} out of range for k = {k}")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("user {user_id:?} tweet {index} has no rewrite")]
    MissingRewrite { user_id: String, index: usize },
    #[error("bad embedding file: {0}")]
    BadEmbeddingFile(String),
}

// ---------------------------------------------------------------------------
// Dataset loading and saving
// ---------------------------------------------------------------------------

impl Dataset {
    /// Load a JSONL dataset, enforcing every record-level invariant:
    /// unique user ids, all four annotation dimensions per tweet, all four
    /// user-level polarities, uniform tweet count k, and well-formed rewrites.
    pub fn load(path: &Path) -> Result<Dataset, ModelError> {
        let file = fs::File::open(path)?;
        let reader = BufReader::new(file);
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string());

        let mut users: Vec<UserRecord> = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        let mut k: Option<usize> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let user: UserRecord =
                serde_json::from_str(&line).map_err(|e| ModelError::MalformedLine {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if !seen.insert(user.user_id.clone()) {
                return Err(ModelError::DuplicateUser {
                    user_id: user.user_id,
                    line: line_no,
                });
            }
            let expected_k = *k.get_or_insert(user.tweets.len());
            validate_user(&user, expected_k)?;
            users.push(user);
        }
        let k = k.ok_or(ModelError::EmptyDataset)?;
        Ok(Dataset { name, k, users })
    }

    /// Write the dataset as JSONL, atomically.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut buf = Vec::new();
        for user in &self.users {
            serde_json::to_writer(&mut buf, user).expect("user record serializes");
            buf.push(b'\n');
        }
        write_atomic(path, &buf)?;
        Ok(())
    }

    pub fn user(&self, user_id: &str) -> Option<&UserRecord> {
        self.users.iter().find(|u| u.user_id == user_id)
    }
}

fn validate_user(user: &UserRecord, k: usize) -> Result<(), ModelError> {
    if user.tweets.len() != k {
        return Err(ModelError::KMismatch {
            user_id: user.user_id.clone(),
            expected: k,
            found: user.tweets.len(),
        });
    }
    for dimension in FeatureDimension::ALL {
        if !user.user_polarity.contains_key(&dimension) {
            return Err(ModelError::MissingUserPolarity {
                user_id: user.user_id.clone(),
                dimension,
            });
        }
    }
    for (tweet_index, tweet) in user.tweets.iter().enumerate() {
        if tweet.text.is_empty() {
            return Err(ModelError::EmptyText {
                user_id: user.user_id.clone(),
                tweet_index,
            });
        }
        for dimension in FeatureDimension::ALL {
            if !tweet.annotations.contains_key(&dimension) {
                return Err(ModelError::MissingAnnotation {
                    user_id: user.user_id.clone(),
                    tweet_index,
                    dimension,
                });
            }
        }
        if let Some(rewrite) = &tweet.rewrite {
            if rewrite.is_empty() || rewrite == &tweet.text {
                return Err(ModelError::InvalidRewrite {
                    user_id: user.user_id.clone(),
                    tweet_index,
                });
            }
        }
    }
    Ok(())
}

/// Deterministic join key between dataset texts and embedding rows:
/// `user_id/variant/index`.
pub fn user_text_key(
    user: &UserRecord,
    variant: Variant,
    index: usize,
) -> Result<String, ModelError> {
    if index >= user.tweets.len() {
        return Err(ModelError::IndexOutOfRange {
            index,
            k: user.tweets.len(),
        });
    }
    if variant == Variant::Rewritten && user.tweets[index].rewrite.is_none() {
        return Err(ModelError::MissingRewrite {
            user_id: user.user_id.clone(),
            index,
        });
    }
    Ok(format!("{}/{}/{}", user.user_id, variant, index))
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct EmbeddingRow {
    key: String,
    vec: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, provider_id: impl Into<String>) -> EmbeddingMatrix {
        EmbeddingMatrix {
            dim,
            provider_id: provider_id.into(),
            rows: BTreeMap::new(),
        }
    }

    /// Insert one row, validating length and finiteness.
    pub fn insert(&mut self, key: String, vec: Vec<f64>) -> Result<(), ModelError> {
        if vec.len() != self.dim {
            return Err(ModelError::DimMismatch {
                expected: self.dim,
                found: vec.len(),
            });
        }
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteEmbedding { key });
        }
        self.rows.insert(key, vec);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&[f64], ModelError> {
        self.rows
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| ModelError::MissingEmbedding {
                key: key.to_string(),
            })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.rows.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.rows.iter()
    }
}

/// Load an embedding file, auto-detecting the binary format by its magic and
/// falling back to JSONL rows otherwise. `provider_id` is recorded from the
/// file stem.
pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<EmbeddingMatrix, ModelError> {
    let bytes = fs::read(path)?;
    let provider = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "embeddings".to_string());
    if bytes.len() >= 4 && &bytes[..4] == EMBEDDING_MAGIC {
        parse_binary_embeddings(&bytes, expected_dim, provider)
    } else {
        parse_jsonl_embeddings(&bytes, expected_dim, provider)
    }
}

fn parse_jsonl_embeddings(
    bytes: &[u8],
    expected_dim: usize,
    provider: String,
) -> Result<EmbeddingMatrix, ModelError> {
    let mut matrix = EmbeddingMatrix::new(expected_dim, provider);
    for (idx, line) in bytes.split(|&b| b == b'\n').enumerate() {
        if line.iter().all(|b| b.is_ascii_whitespace()) {
            continue;
        }
        let row: EmbeddingRow =
            serde_json::from_slice(line).map_err(|e| ModelError::MalformedLine {
                line: idx + 1,
                message: e.to_string(),
            })?;
        matrix.insert(row.key, row.vec)?;
    }
    Ok(matrix)
}

fn parse_binary_embeddings(
    bytes: &[u8],
    expected_dim: usize,
    provider: String,
) -> Result<EmbeddingMatrix, ModelError> {
    let mut cursor = &bytes[4..];
    let mut u32_buf = [0u8; 4];
    cursor
        .read_exact(&mut u32_buf)
        .map_err(|_| ModelError::BadEmbeddingFile("truncated dimension field".into()))?;
    let dim = u32::from_le_bytes(u32_buf) as usize;
    if dim != expected_dim {
        return Err(ModelError::DimMismatch {
            expected: expected_dim,
            found: dim,
        });
    }
    let mut matrix = EmbeddingMatrix::new(dim, provider);
    let mut u16_buf = [0u8; 2];
    loop {
        match cursor.read_exact(&mut u16_buf) {
            Ok(()) => {}
            Err(_) if cursor.is_empty() => break,
            Err(_) => return Err(ModelError::BadEmbeddingFile("truncated key length".into())),
        }
        let key_len = u16::from_le_bytes(u16_buf) as usize;
        let mut key_bytes = vec![0u8; key_len];
        cursor
            .read_exact(&mut key_bytes)
            .map_err(|_| ModelError::BadEmbeddingFile("truncated key".into()))?;
        let key = String::from_utf8(key_bytes)
            .map_err(|_| ModelError::BadEmbeddingFile("key is not utf-8".into()))?;
        let mut vec = Vec::with_capacity(dim);
        let mut f32_buf = [0u8; 4];
        for _ in 0..dim {
            cursor
                .read_exact(&mut f32_buf)
                .map_err(|_| ModelError::BadEmbeddingFile("truncated vector".into()))?;
            vec.push(f32::from_le_bytes(f32_buf) as f64);
        }
        matrix.insert(key, vec)?;
    }
    Ok(matrix)
}

/// On-disk representation choices for [`save_embeddings`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Jsonl,
    Binary,
}

/// Write an embedding matrix atomically in the chosen format. Binary rows
/// store f32 components.
pub fn save_embeddings(
    path: &Path,
    matrix: &EmbeddingMatrix,
    format: EmbeddingFormat,
) -> Result<(), ModelError> {
    let mut buf: Vec<u8> = Vec::new();
    match format {
        EmbeddingFormat::Jsonl => {
            for (key, vec) in matrix.iter() {
                let row = EmbeddingRow {
                    key: key.clone(),
                    vec: vec.clone(),
                };
                serde_json::to_writer(&mut buf, &row).expect("embedding row serializes");
                buf.push(b'\n');
            }
        }
        EmbeddingFormat::Binary => {
            buf.extend_from_slice(EMBEDDING_MAGIC);
            buf.extend_from_slice(&(matrix.dim as u32).to_le_bytes());
            for (key, vec) in matrix.iter() {
                let key_bytes = key.as_bytes();
                assert!(key_bytes.len() <= u16::MAX as usize, "key too long");
                buf.extend_from_slice(&(key_bytes.len() as u16).to_le_bytes());
                buf.extend_from_slice(key_bytes);
                for &v in vec {
                    buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }
    write_atomic(path, &buf)?;
    Ok(())
}
