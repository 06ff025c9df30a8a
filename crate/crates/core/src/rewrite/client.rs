//! Chat-completion client: retrying transport wrapper with token-bucket rate
//! limiting and bounded in-flight concurrency.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    cache_key, edit_similarity, render_prompt, validate_pair, RewriteCache, RewriteError,
    RewritePair, RewriteRequest, Thresholds, TransportError,
};

/// One chat round trip, already rendered.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
}

/// A synchronous chat-completion backend. Implementations return the raw
/// assistant reply; retries and rate limiting live above this trait.
pub trait Transport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteClientConfig {
    pub model: String,
    pub temperature: f64,
    /// Retries after the first attempt, with exponential backoff.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    /// Maximum in-flight requests for `rewrite_many`.
    pub concurrency: usize,
    /// Token-bucket refill rate; bucket capacity equals `concurrency`.
    pub requests_per_second: f64,
    pub thresholds: Thresholds,
}

impl Default for RewriteClientConfig {
    fn default() -> RewriteClientConfig {
        RewriteClientConfig {
            model: "deepseek-chat".into(),
            temperature: 0.7,
            max_retries: 5,
            initial_backoff_ms: 200,
            concurrency: 4,
            requests_per_second: 4.0,
            thresholds: Thresholds::default(),
        }
    }
}

struct TokenBucket {
    state: Mutex<(f64, Instant)>,
    capacity: f64,
    rate: f64,
}

impl TokenBucket {
    fn new(capacity: f64, rate: f64) -> TokenBucket {
        TokenBucket {
            state: Mutex::new((capacity, Instant::now())),
            capacity,
            rate,
        }
    }

    fn take(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("bucket lock");
                let now = Instant::now();
                let elapsed = now.duration_since(state.1).as_secs_f64();
                state.0 = (state.0 + elapsed * self.rate).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                (1.0 - state.0) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait.min(1.0)));
        }
    }
}

/// Cache-first rewriting client. Without a transport it runs in offline mode
/// and only serves cache hits.
pub struct RewriteClient<'a> {
    transport: Option<&'a dyn Transport>,
    cache: &'a RewriteCache,
    config: RewriteClientConfig,
    bucket: TokenBucket,
}

impl<'a> RewriteClient<'a> {
    pub fn new(
        transport: Option<&'a dyn Transport>,
        cache: &'a RewriteCache,
        config: RewriteClientConfig,
    ) -> RewriteClient<'a> {
        let bucket = TokenBucket::new(
            config.concurrency.max(1) as f64,
            config.requests_per_second.max(1e-6),
        );
        RewriteClient {
            transport,
            cache,
            config,
            bucket,
        }
    }

    /// Rewrite one text: serve from cache when possible, otherwise make one
    /// rate-limited chat request (with retries), post-process, validate, and
    /// store the pair.
    pub fn rewrite(&self, request: &RewriteRequest) -> Result<RewritePair, RewriteError> {
        request.validate()?;
        let key = cache_key(request);
        if let Some(pair) = self.cache.get(request.dimension, &key) {
            return Ok(pair);
        }
        let Some(transport) = self.transport else {
            return Err(RewriteError::CacheMissInOfflineMode);
        };

        let (system, user) = render_prompt(request)?;
        let chat = ChatRequest {
            model: self.config.model.clone(),
            system,
            user,
            temperature: self.config.temperature,
        };
        let reply = self.complete_with_retry(transport, &chat)?;
        let rewritten = strip_completion(&reply);
        if rewritten.is_empty() {
            return Err(RewriteError::EmptyCompletion);
        }
        let similarity = edit_similarity(&request.text, &rewritten)?;
        let mut pair = RewritePair {
            raw: request.text.clone(),
            rewritten,
            edit_similarity: similarity,
            cosine_similarity: None,
            accepted: false,
        };
        pair.accepted = validate_pair(&pair, &self.config.thresholds).accepted;
        self.cache.put(request.dimension, &key, pair)
    }

    /// Rewrite a batch with at most `concurrency` requests in flight.
    pub fn rewrite_many(
        &self,
        requests: &[RewriteRequest],
    ) -> Vec<Result<RewritePair, RewriteError>> {
        let workers = self.config.concurrency.max(1).min(requests.len().max(1));
        let next = std::sync::atomic::AtomicUsize::new(0);
        let mut results: Vec<Option<Result<RewritePair, RewriteError>>> =
            (0..requests.len()).map(|_| None).collect();
        let slots = Mutex::new(&mut results);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let index = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if index >= requests.len() {
                        break;
                    }
                    let outcome = self.rewrite(&requests[index]);
                    slots.lock().expect("result lock")[index] = Some(outcome);
                });
            }
        });
        results
            .into_iter()
            .map(|slot| slot.expect("every slot filled"))
            .collect()
    }

    fn complete_with_retry(
        &self,
        transport: &dyn Transport,
        chat: &ChatRequest,
    ) -> Result<String, RewriteError> {
        let mut attempts = 0u32;
        loop {
            self.bucket.take();
            attempts += 1;
            match transport.complete(chat) {
                Ok(reply) => return Ok(reply),
                Err(source) => {
                    if attempts > self.config.max_retries {
                        return Err(RewriteError::Transport { attempts, source });
                    }
                    let backoff = self.config.initial_backoff_ms << (attempts - 1).min(8);
                    std::thread::sleep(Duration::from_millis(backoff));
                }
            }
        }
    }
}

/// Trim whitespace and strip one layer of matching quotes or brackets;
/// everything else is kept verbatim.
pub fn strip_completion(reply: &str) -> String {
    let trimmed = reply.trim();
    let mut chars = trimmed.chars();
    let stripped = match (chars.next(), chars.next_back()) {
        (Some('"'), Some('"'))
        | (Some('\''), Some('\''))
        | (Some('['), Some(']'))
        | (Some('('), Some(')')) => {
            if trimmed.chars().count() >= 2 {
                chars.as_str()
            } else {
                trimmed
            }
        }
        _ => trimmed,
    };
    stripped.trim().to_string()
}

// ---------------------------------------------------------------------------
// HTTP transport
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReplyMessage,
}

#[derive(Deserialize)]
struct WireReplyMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

/// Blocking HTTP POST transport speaking the usual chat-completions schema,
/// with a bearer token taken from the `REWRITE_API_KEY` environment variable.
pub struct HttpTransport {
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "REWRITE_API_KEY";

impl HttpTransport {
    pub fn from_env(endpoint: &str) -> Result<HttpTransport, RewriteError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| RewriteError::MissingApiKey)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| RewriteError::Transport {
                attempts: 0,
                source: TransportError::Network(e.to_string()),
            })?;
        Ok(HttpTransport {
            endpoint: endpoint.to_string(),
            api_key,
            client,
        })
    }
}

impl Transport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let body = WireRequest {
            model: &request.model,
            messages: vec![
                WireMessage {
                    role: "system",
                    content: &request.system,
                },
                WireMessage {
                    role: "user",
                    content: &request.user,
                },
            ],
            temperature: request.temperature,
        };
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(TransportError::Http {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: WireResponse = response
            .json()
            .map_err(|e| TransportError::Protocol(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|choice| choice.message.content)
            .ok_or_else(|| TransportError::Protocol("no choices in response".into()))
    }
}
