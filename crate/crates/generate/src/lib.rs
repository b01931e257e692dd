//! Client for a hosted image-generation HTTP API that fills the canonical
//! image layout of an experiment.

mod config;

use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine;
use futures::stream::{self, StreamExt};
use serde_json::Value;
use thiserror::Error;

use scs_core::dataset::{ExperimentManifest, GenerationParams};

pub use config::{render_request, GenerationConfig, ResponseMapping, RetryPolicy};

const EXCERPT_LEN: usize = 512;
const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("generation API returned HTTP {status}: {body_excerpt}")]
    Status { status: u16, body_excerpt: String },
    #[error("generation gave up after {attempts} attempts: {last_error}")]
    Timeout { attempts: u32, last_error: String },
    #[error("unusable generation response: {0}")]
    Response(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Image bytes plus the number of HTTP attempts it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetched {
    pub bytes: Vec<u8>,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreOutcome {
    /// The file was already present; nothing was requested.
    Existing,
    Written { attempts: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationFailure {
    pub model_id: String,
    pub prompt_id: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenerateSummary {
    pub written: usize,
    pub existing: usize,
    /// Sorted by (model, prompt, seed).
    pub failures: Vec<GenerationFailure>,
}

impl GenerateSummary {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

enum AttemptError {
    Retryable(String),
    Fatal(GenerationError),
}

fn excerpt(body: &[u8]) -> String {
    let text = String::from_utf8_lossy(body);
    let mut s: String = text.chars().take(EXCERPT_LEN).collect();
    if text.chars().count() > EXCERPT_LEN {
        s.push_str("...");
    }
    s
}

fn retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

/// Stores PNG bytes as given; anything else the image decoder understands is
/// re-encoded as PNG so the canonical `.png` path holds a PNG.
fn ensure_png(bytes: Vec<u8>) -> Result<Vec<u8>, GenerationError> {
    if bytes.starts_with(PNG_MAGIC) {
        return Ok(bytes);
    }
    let img = image::load_from_memory(&bytes).map_err(|e| {
        GenerationError::Response(format!("body is not a decodable image ({e}): {}", excerpt(&bytes)))
    })?;
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| GenerationError::Response(format!("re-encoding as PNG: {e}")))?;
    Ok(out.into_inner())
}

fn pointer<'a>(json: &'a Value, ptr: &str) -> Result<&'a str, GenerationError> {
    json.pointer(ptr)
        .and_then(Value::as_str)
        .ok_or_else(|| GenerationError::Response(format!("no string at JSON pointer `{ptr}`")))
}

pub struct GenerationClient {
    http: reqwest::Client,
    config: GenerationConfig,
    api_key: Option<String>,
}

impl GenerationClient {
    /// Reads the API key from the configured environment variable.
    pub fn new(config: GenerationConfig) -> Result<Self, GenerationError> {
        let api_key = match &config.api_key_env {
            None => None,
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GenerationError::Config(format!("environment variable `{var}` is not set"))
            })?),
        };
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(
        config: GenerationConfig,
        api_key: Option<String>,
    ) -> Result<Self, GenerationError> {
        if config.retry.max_attempts == 0 {
            return Err(GenerationError::Config("retry.max_attempts must be at least 1".into()));
        }
        if config.concurrency == 0 {
            return Err(GenerationError::Config("concurrency must be at least 1".into()));
        }
        reqwest::Url::parse(&config.endpoint)
            .map_err(|e| GenerationError::Config(format!("endpoint `{}`: {e}", config.endpoint)))?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GenerationError::Config(e.to_string()))?;
        Ok(Self {
            http,
            config,
            api_key,
        })
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    async fn send(&self, req: reqwest::RequestBuilder) -> Result<Vec<u8>, AttemptError> {
        let resp = req
            .send()
            .await
            .map_err(|e| AttemptError::Retryable(format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        let body = resp
            .bytes()
            .await
            .map_err(|e| AttemptError::Retryable(format!("reading body: {e}")))?;
        if resp_ok(status) {
            Ok(body.to_vec())
        } else if retryable_status(status) {
            Err(AttemptError::Retryable(format!("HTTP {status}: {}", excerpt(&body))))
        } else {
            Err(AttemptError::Fatal(GenerationError::Status {
                status,
                body_excerpt: excerpt(&body),
            }))
        }
    }

    async fn attempt(&self, body: &Value) -> Result<Vec<u8>, AttemptError> {
        let mut req = self
            .http
            .post(&self.config.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(key) = &self.api_key {
            let value = if self.config.auth_scheme.is_empty() {
                key.clone()
            } else {
                format!("{} {key}", self.config.auth_scheme)
            };
            req = req.header(self.config.auth_header.as_str(), value);
        }
        let raw = self.send(req).await?;
        let fatal = AttemptError::Fatal;
        match &self.config.response {
            ResponseMapping::Raw => Ok(raw),
            ResponseMapping::Base64 { pointer: ptr } => {
                let json: Value = serde_json::from_slice(&raw)
                    .map_err(|e| fatal(GenerationError::Response(format!("not JSON: {e}"))))?;
                let s = pointer(&json, ptr).map_err(fatal)?;
                let data = match s.split_once(";base64,") {
                    Some((prefix, data)) if prefix.starts_with("data:") => data,
                    _ => s,
                };
                base64::engine::general_purpose::STANDARD
                    .decode(data.trim())
                    .map_err(|e| fatal(GenerationError::Response(format!("bad base64: {e}"))))
            }
            ResponseMapping::Url { pointer: ptr } => {
                let json: Value = serde_json::from_slice(&raw)
                    .map_err(|e| fatal(GenerationError::Response(format!("not JSON: {e}"))))?;
                let url = pointer(&json, ptr).map_err(fatal)?;
                let url = reqwest::Url::parse(&self.config.endpoint)
                    .and_then(|base| base.join(url))
                    .map_err(|e| fatal(GenerationError::Response(format!("image URL `{url}`: {e}"))))?;
                self.send(self.http.get(url)).await
            }
        }
    }

    /// Image bytes for exactly this (prompt, seed, params), retrying transient
    /// failures (transport errors, 408, 429, 5xx) with exponential backoff.
    pub async fn fetch_generation(
        &self,
        prompt_text: &str,
        seed: u64,
        params: &GenerationParams,
    ) -> Result<Fetched, GenerationError> {
        let body = render_request(&self.config.request_template, prompt_text, seed, params)
            .map_err(GenerationError::Config)?;
        let policy = &self.config.retry;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body).await {
                Ok(bytes) => {
                    return Ok(Fetched {
                        bytes: ensure_png(bytes)?,
                        attempts,
                    })
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(reason)) => {
                    if attempts >= policy.max_attempts {
                        return Err(GenerationError::Timeout {
                            attempts,
                            last_error: reason,
                        });
                    }
                    let delay = policy.backoff(attempts);
                    log::warn!("seed {seed}: {reason}; retrying in {delay:?}");
                    tokio::time::sleep(delay).await;
                }
            }
        }
    }

    /// Fetches into `path` unless it already exists. The file appears
    /// atomically, so an interrupted run never leaves a truncated image.
    pub async fn store_generation(
        &self,
        path: &Path,
        prompt_text: &str,
        seed: u64,
        params: &GenerationParams,
    ) -> Result<StoreOutcome, GenerationError> {
        if path.is_file() {
            return Ok(StoreOutcome::Existing);
        }
        let fetched = self.fetch_generation(prompt_text, seed, params).await?;
        let io = |source| GenerationError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent() {
            tokio::fs::create_dir_all(parent).await.map_err(io)?;
        }
        let tmp = path.with_extension("png.partial");
        tokio::fs::write(&tmp, &fetched.bytes).await.map_err(io)?;
        tokio::fs::rename(&tmp, path).await.map_err(io)?;
        Ok(StoreOutcome::Written {
            attempts: fetched.attempts,
        })
    }

    /// Fills every missing image of the given models (all models when empty),
    /// with at most `config.concurrency` requests in flight.
    pub async fn generate_layout(
        &self,
        manifest: &ExperimentManifest,
        model_ids: &[&str],
    ) -> Result<GenerateSummary, GenerationError> {
        for m in model_ids {
            if manifest.model(m).is_none() {
                return Err(GenerationError::Config(format!("unknown model `{m}`")));
            }
        }
        let layout = manifest.layout();
        let mut jobs = Vec::new();
        for model in &manifest.models {
            if !model_ids.is_empty() && !model_ids.contains(&model.model_id.as_str()) {
                continue;
            }
            for prompt in &manifest.prompts {
                let text = manifest
                    .prompt_text(&model.model_id, &prompt.prompt_id)
                    .expect("ids come from the manifest");
                for &seed in &manifest.seeds {
                    let path = layout.image_path(&model.model_id, &prompt.prompt_id, seed);
                    jobs.push((model, prompt.prompt_id.as_str(), text.clone(), seed, path));
                }
            }
        }
        let results: Vec<_> = stream::iter(jobs)
            .map(|(model, prompt_id, text, seed, path)| async move {
                let r = self
                    .store_generation(&path, &text, seed, &model.generation)
                    .await;
                match &r {
                    Ok(StoreOutcome::Written { attempts }) => log::info!(
                        "{}/{prompt_id}/{seed}: written after {attempts} attempt(s)",
                        model.model_id
                    ),
                    Ok(StoreOutcome::Existing) => {}
                    Err(e) => log::error!("{}/{prompt_id}/{seed}: {e}", model.model_id),
                }
                (model.model_id.as_str(), prompt_id, seed, r)
            })
            .buffer_unordered(self.config.concurrency)
            .collect()
            .await;

        let mut summary = GenerateSummary::default();
        for (model_id, prompt_id, seed, r) in results {
            match r {
                Ok(StoreOutcome::Existing) => summary.existing += 1,
                Ok(StoreOutcome::Written { .. }) => summary.written += 1,
                Err(e) => summary.failures.push(GenerationFailure {
                    model_id: model_id.into(),
                    prompt_id: prompt_id.into(),
                    seed,
                    error: e.to_string(),
                }),
            }
        }
        summary.failures.sort_by(|a, b| {
            (&a.model_id, &a.prompt_id, a.seed).cmp(&(&b.model_id, &b.prompt_id, b.seed))
        });
        Ok(summary)
    }
}

fn resp_ok(status: u16) -> bool {
    (200..300).contains(&status)
}
