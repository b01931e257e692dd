use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use scs_core::dataset::GenerationParams;

/// How a hosted generation API is called. Vendors differ, so the request
/// body is a JSON template and the response location is configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub endpoint: String,
    /// Environment variable holding the API key. No auth header when unset.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    /// Prefix before the key in the auth header, e.g. `Bearer`. Empty sends
    /// the bare key.
    #[serde(default = "default_auth_scheme")]
    pub auth_scheme: String,
    /// JSON body with `{{prompt}}`, `{{seed}}`, `{{width}}`, `{{height}}`,
    /// `{{guidance_scale}}`, `{{num_inference_steps}}` and `{{scheduler}}`
    /// placeholders. A string that is exactly one placeholder is replaced by
    /// a typed value; placeholders inside longer strings are spliced as text.
    pub request_template: Value,
    #[serde(default)]
    pub response: ResponseMapping,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Concurrent requests in flight.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_auth_header() -> String {
    "Authorization".into()
}

fn default_auth_scheme() -> String {
    "Bearer".into()
}

fn default_concurrency() -> usize {
    4
}

fn default_timeout_secs() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResponseMapping {
    /// The response body is the image.
    #[default]
    Raw,
    /// Base64 image (optionally a `data:` URL) at a JSON pointer.
    Base64 { pointer: String },
    /// Image URL at a JSON pointer, fetched with a follow-up GET.
    Url { pointer: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total attempts including the first.
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_backoff_ms: 1000,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, doubling from the initial value.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(
            self.initial_backoff_ms
                .saturating_mul(factor)
                .min(self.max_backoff_ms),
        )
    }
}

fn placeholder_value(name: &str, prompt: &str, seed: u64, p: &GenerationParams) -> Option<Value> {
    Some(match name {
        "prompt" => Value::from(prompt),
        "seed" => Value::from(seed),
        "width" => Value::from(p.width),
        "height" => Value::from(p.height),
        "guidance_scale" => Value::from(p.guidance_scale),
        "num_inference_steps" => Value::from(p.num_inference_steps),
        "scheduler" => Value::from(p.scheduler.as_str()),
        _ => return None,
    })
}

fn splice(s: &str, prompt: &str, seed: u64, p: &GenerationParams) -> Result<Value, String> {
    if let Some(name) = s.strip_prefix("{{").and_then(|r| r.strip_suffix("}}")) {
        if !name.contains("{{") {
            return placeholder_value(name.trim(), prompt, seed, p)
                .ok_or_else(|| format!("unknown placeholder `{{{{{name}}}}}`"));
        }
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| format!("unterminated placeholder in `{s}`"))?;
        let name = after[..end].trim();
        match placeholder_value(name, prompt, seed, p) {
            Some(Value::String(v)) => out.push_str(&v),
            Some(v) => out.push_str(&v.to_string()),
            None => return Err(format!("unknown placeholder `{{{{{name}}}}}`")),
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(Value::String(out))
}

/// Fills the request template for one generation.
pub fn render_request(
    template: &Value,
    prompt: &str,
    seed: u64,
    params: &GenerationParams,
) -> Result<Value, String> {
    Ok(match template {
        Value::String(s) => splice(s, prompt, seed, params)?,
        Value::Array(items) => Value::Array(
            items
                .iter()
                .map(|v| render_request(v, prompt, seed, params))
                .collect::<Result<_, _>>()?,
        ),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| Ok((k.clone(), render_request(v, prompt, seed, params)?)))
                .collect::<Result<_, String>>()?,
        ),
        other => other.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn params() -> GenerationParams {
        GenerationParams {
            width: 1024,
            height: 768,
            scheduler: "K_EULER".into(),
            guidance_scale: 7.5,
            num_inference_steps: 50,
        }
    }

    #[test]
    fn typed_and_spliced_placeholders() {
        let t = json!({
            "input": {
                "prompt": "{{prompt}}",
                "seed": "{{seed}}",
                "size": "{{width}}x{{height}}",
                "cfg": "{{ guidance_scale }}",
                "steps": ["{{num_inference_steps}}"],
                "fixed": true
            }
        });
        let r = render_request(&t, "a \"red\" fox", 42, &params()).unwrap();
        assert_eq!(
            r,
            json!({
                "input": {
                    "prompt": "a \"red\" fox",
                    "seed": 42,
                    "size": "1024x768",
                    "cfg": 7.5,
                    "steps": [50],
                    "fixed": true
                }
            })
        );
    }

    #[test]
    fn unknown_placeholder_is_an_error() {
        assert!(render_request(&json!("{{nope}}"), "p", 1, &params()).is_err());
        assert!(render_request(&json!("x {{seed"), "p", 1, &params()).is_err());
    }

    #[test]
    fn backoff_doubles_up_to_cap() {
        let p = RetryPolicy {
            max_attempts: 10,
            initial_backoff_ms: 100,
            max_backoff_ms: 500,
        };
        let ms: Vec<u128> = (1..6).map(|a| p.backoff(a).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 400, 500, 500]);
    }

    #[test]
    fn config_defaults() {
        let c: GenerationConfig = serde_json::from_value(json!({
            "endpoint": "https://example.invalid/v1/generate",
            "request_template": {"prompt": "{{prompt}}"}
        }))
        .unwrap();
        assert_eq!(c.response, ResponseMapping::Raw);
        assert_eq!(c.auth_header, "Authorization");
        assert_eq!(c.retry.max_attempts, 5);
        let b: ResponseMapping =
            serde_json::from_value(json!({"kind": "base64", "pointer": "/images/0"})).unwrap();
        assert_eq!(b, ResponseMapping::Base64 { pointer: "/images/0".into() });
    }
}
