//! Prompt template instantiation. The wording is frozen; changing it must
//! bump [`TEMPLATE_VERSION`] so cached completions are not reused across
//! template revisions.

use sha2::{Digest, Sha256};

use super::{RewriteError, RewriteRequest};

/// Version tag mixed into every cache key.
pub const TEMPLATE_VERSION: &str = "v1";

/// Render the (system, user) message pair for a rewrite request, byte-exact
/// and deterministic.
pub fn render_prompt(request: &RewriteRequest) -> Result<(String, String), RewriteError> {
    request.validate()?;
    let system = format!(
        "You are an expert in social network analysis, focusing on the detection of social bots. \
         You are particularly interested in addressing distribution biases in shallow textual \
         features in {attribute} between bots and human users. Your goal is to modify or augment \
         the text to mitigate this bias while preserving the original semantics.",
        attribute = request.attribute_word
    );
    let user = format!(
        "This tweet shows {attribute} {polarity} and the user is a {label}. \
         Please change as few words as possible to rewrite it to different {attribute} \
         and do not change the sentence structure to keep the {label} feature. \
         Your answer just contain output without any extra content.\n\nInput: ['{text}']\n\nOutput:,",
        attribute = request.attribute_word,
        polarity = request.source_polarity_word,
        label = request.label_word,
        text = request.text
    );
    Ok((system, user))
}

/// Content address of a request: SHA-256 over (template version, dimension,
/// label, text), hex encoded.
pub fn cache_key(request: &RewriteRequest) -> String {
    let mut hasher = Sha256::new();
    for part in [
        TEMPLATE_VERSION,
        request.dimension.as_str(),
        &request.label_word,
        &request.text,
    ] {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeatureDimension;

    fn request() -> RewriteRequest {
        RewriteRequest {
            text: "hello".into(),
            label_word: "human".into(),
            dimension: FeatureDimension::Sentiment,
            source_polarity_word: "positive".into(),
            attribute_word: "sentiment".into(),
        }
    }

    #[test]
    fn user_message_embeds_the_bracketed_text() {
        let (_, user) = render_prompt(&request()).unwrap();
        assert!(user.contains("Input: ['hello']"), "{user}");
        assert!(user.contains("change as few words as possible"));
        assert!(user.ends_with("Output:,"));
    }

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(
            render_prompt(&request()).unwrap(),
            render_prompt(&request()).unwrap()
        );
    }

    #[test]
    fn empty_attribute_is_rejected() {
        let mut bad = request();
        bad.attribute_word.clear();
        assert!(matches!(
            render_prompt(&bad),
            Err(RewriteError::EmptyField {
                field: "attribute_word"
            })
        ));
    }

    #[test]
    fn cache_key_ignores_polarity_but_not_text() {
        let base = cache_key(&request());
        let mut other_polarity = request();
        other_polarity.source_polarity_word = "negative".into();
        assert_eq!(base, cache_key(&other_polarity));
        let mut other_text = request();
        other_text.text = "goodbye".into();
        assert_ne!(base, cache_key(&other_text));
    }
}
