//! Counterfactual rewriting through an external chat-completion endpoint:
//! prompt construction, response caching, and semantic-consistency checks.

mod cache;
mod client;
mod prompt;

pub use cache::RewriteCache;
pub use client::{ChatRequest, HttpTransport, RewriteClient, RewriteClientConfig, Transport};
pub use prompt::{cache_key, render_prompt, TEMPLATE_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::FeatureDimension;

/// One rewriting job: the text plus the words substituted into the template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteRequest {
    pub text: String,
    /// "human" or "bot".
    pub label_word: String,
    pub dimension: FeatureDimension,
    /// The attribute expression to move away from, e.g. "positive".
    pub source_polarity_word: String,
    /// The attribute family, e.g. "sentiment" or "topics".
    pub attribute_word: String,
}

impl RewriteRequest {
    pub fn validate(&self) -> Result<(), RewriteError> {
        for (field, value) in [
            ("text", &self.text),
            ("label_word", &self.label_word),
            ("source_polarity_word", &self.source_polarity_word),
            ("attribute_word", &self.attribute_word),
        ] {
            if value.is_empty() {
                return Err(RewriteError::EmptyField { field });
            }
        }
        Ok(())
    }
}

/// A raw/rewritten text pair with its validation evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewritePair {
    pub raw: String,
    pub rewritten: String,
    pub edit_similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cosine_similarity: Option<f64>,
    pub accepted: bool,
}

/// Reasons a pair failed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationFlag {
    LowEditSimilarity,
    LowCosineSimilarity,
}

/// Outcome of [`validate_pair`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validation {
    pub accepted: bool,
    pub flags: Vec<ValidationFlag>,
}

/// Acceptance thresholds. The defaults sit below the corpus-level report
/// targets ([`REPORT_THRESHOLD_EDIT`], [`REPORT_THRESHOLD_COSINE`]) because
/// those describe distribution averages, not cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub edit: f64,
    pub cosine: f64,
}

impl Default for Thresholds {
    fn default() -> Thresholds {
        Thresholds {
            edit: 0.5,
            cosine: 0.85,
        }
    }
}

/// Corpus-level reporting target for token-level edit similarity.
pub const REPORT_THRESHOLD_EDIT: f64 = 0.7;
/// Corpus-level reporting target for embedding cosine similarity.
pub const REPORT_THRESHOLD_COSINE: f64 = 0.9;

/// The attribute-family word substituted into the template.
pub fn attribute_word(dimension: FeatureDimension) -> &'static str {
    match dimension {
        FeatureDimension::Sentiment => "sentiment",
        FeatureDimension::Topic => "topics",
        FeatureDimension::Emotion => "emotions",
        FeatureDimension::Value => "values",
    }
}

/// The attribute-expression word for a (dimension, polarity) pair.
pub fn polarity_word(dimension: FeatureDimension, polarity: crate::model::Polarity) -> &'static str {
    use crate::model::Polarity;
    match (dimension, polarity) {
        (_, Polarity::Neu) => "neutral",
        (FeatureDimension::Sentiment, Polarity::Pos) => "positive",
        (FeatureDimension::Sentiment, Polarity::Neg) => "negative",
        (FeatureDimension::Topic, Polarity::Pos) => "daily life",
        (FeatureDimension::Topic, Polarity::Neg) => "pop culture, sports",
        (FeatureDimension::Emotion, Polarity::Pos) => "anticipation, optimism",
        (FeatureDimension::Emotion, Polarity::Neg) => "joy",
        (FeatureDimension::Value, Polarity::Pos) => "supportive",
        (FeatureDimension::Value, Polarity::Neg) => "oppositional",
    }
}

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error("field {field:?} must not be empty")]
    EmptyField { field: &'static str },
    #[error("raw text has no tokens")]
    EmptyRawText,
    #[error("completion was empty after post-processing")]
    EmptyCompletion,
    #[error("offline mode and no cached pair for this request")]
    CacheMissInOfflineMode,
    #[error("transport failed after {attempts} attempts: {source}")]
    Transport {
        attempts: u32,
        source: TransportError,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt cache file {path}: {message}")]
    CacheCorrupt { path: String, message: String },
    #[error("REWRITE_API_KEY is not set")]
    MissingApiKey,
}

/// A single failed round trip to the endpoint.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed response: {0}")]
    Protocol(String),
}

// ---------------------------------------------------------------------------
// Edit similarity
// ---------------------------------------------------------------------------

/// Word-level Levenshtein distance between whitespace token sequences,
/// rolling two-row dynamic programming.
pub fn word_edit_distance(a: &str, b: &str) -> usize {
    let a_tokens: Vec<&str> = a.split_whitespace().collect();
    let b_tokens: Vec<&str> = b.split_whitespace().collect();
    if a_tokens.is_empty() {
        return b_tokens.len();
    }
    if b_tokens.is_empty() {
        return a_tokens.len();
    }
    let mut current: Vec<usize> = (0..=b_tokens.len()).collect();
    for (i, token_a) in a_tokens.iter().enumerate() {
        let mut previous_diagonal = current[0];
        current[0] = i + 1;
        for (j, token_b) in b_tokens.iter().enumerate() {
            let previous = current[j + 1];
            current[j + 1] = (previous + 1)
                .min(current[j] + 1)
                .min(previous_diagonal + usize::from(token_a != token_b));
            previous_diagonal = previous;
        }
    }
    current[b_tokens.len()]
}

/// 1 - D(w_raw, w_new) / |w_raw|, clamped at 0. Errors when the raw text has
/// no tokens.
pub fn edit_similarity(raw: &str, rewritten: &str) -> Result<f64, RewriteError> {
    let raw_words = raw.split_whitespace().count();
    if raw_words == 0 {
        return Err(RewriteError::EmptyRawText);
    }
    let distance = word_edit_distance(raw, rewritten);
    Ok((1.0 - distance as f64 / raw_words as f64).max(0.0))
}

/// Cosine similarity between two equal-length vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "vector length mismatch");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm_a: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    dot / (norm_a * norm_b)
}

/// Accept a pair when edit similarity clears the threshold and the cosine,
/// if present, does too.
pub fn validate_pair(pair: &RewritePair, thresholds: &Thresholds) -> Validation {
    let mut flags = Vec::new();
    if pair.edit_similarity < thresholds.edit {
        flags.push(ValidationFlag::LowEditSimilarity);
    }
    if let Some(cosine) = pair.cosine_similarity {
        if cosine < thresholds.cosine {
            flags.push(ValidationFlag::LowCosineSimilarity);
        }
    }
    Validation {
        accepted: flags.is_empty(),
        flags,
    }
}

/// Corpus-level statistics over a batch of pairs, tracking the report
/// thresholds separately from the acceptance thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub pairs: usize,
    pub accepted: usize,
    pub mean_edit_similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_cosine_similarity: Option<f64>,
    pub frac_edit_above_report_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frac_cosine_above_report_threshold: Option<f64>,
}

pub fn pair_stats(pairs: &[RewritePair]) -> PairStats {
    let n = pairs.len().max(1) as f64;
    let mean_edit = pairs.iter().map(|p| p.edit_similarity).sum::<f64>() / n;
    let frac_edit = pairs
        .iter()
        .filter(|p| p.edit_similarity >= REPORT_THRESHOLD_EDIT)
        .count() as f64
        / n;
    let cosines: Vec<f64> = pairs.iter().filter_map(|p| p.cosine_similarity).collect();
    let (mean_cos, frac_cos) = if cosines.is_empty() {
        (None, None)
    } else {
        let c = cosines.len() as f64;
        (
            Some(cosines.iter().sum::<f64>() / c),
            Some(cosines.iter().filter(|&&x| x >= REPORT_THRESHOLD_COSINE).count() as f64 / c),
        )
    };
    PairStats {
        pairs: pairs.len(),
        accepted: pairs.iter().filter(|p| p.accepted).count(),
        mean_edit_similarity: mean_edit,
        mean_cosine_similarity: mean_cos,
        frac_edit_above_report_threshold: frac_edit,
        frac_cosine_above_report_threshold: frac_cos,
    }
}
