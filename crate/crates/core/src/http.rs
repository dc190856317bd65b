//! HTTP clients for hosted models.
//!
//! * [`HttpGenerator`] speaks the completions API (`POST <endpoint>` with
//!   `{"model", "prompt", "max_tokens", "temperature"}`, reading
//!   `choices[0].text` or `choices[0].message.content`).
//! * [`HttpDetector`] posts to `<endpoint>/detect`.
//! * [`HttpEmbedder`] posts to `<endpoint>/embed/text` and `<endpoint>/embed/image`.
//!
//! Images travel as `{"width", "height", "channels", "pixels"}` with the raw
//! row-major bytes base64-encoded. Detections come back as
//! `{"detections": [{"box": [x, y, w, h], "confidence": c, "phrase": p}]}`;
//! box coordinates may be fractional or overhang the image and are clamped.
//! Embeddings come back as `{"embedding": [..]}`.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::encoder::EmbedderBackend;
use crate::error::{Error, Result};
use crate::grounding::{clamp_signed_box, Detection, DetectorBackend};
use crate::prompt_bank::PromptGeneratorBackend;
use crate::types::ImageBuffer;

/// Environment variable holding the bearer token for the text endpoint.
pub const API_KEY_ENV: &str = "ZSAD_API_KEY";

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into()
}

fn post_json(agent: &ureq::Agent, url: &str, token: Option<&str>, body: &Value) -> Result<Value> {
    let mut request = agent.post(url);
    if let Some(token) = token {
        request = request.header("Authorization", &format!("Bearer {token}"));
    }
    let mut response = request
        .send_json(body)
        .map_err(|e| Error::BackendUnavailable(format!("{url}: {e}")))?;
    response
        .body_mut()
        .read_json::<Value>()
        .map_err(|e| Error::BackendUnavailable(format!("{url}: bad response body: {e}")))
}

fn image_payload(image: &ImageBuffer) -> Value {
    json!({
        "width": image.width(),
        "height": image.height(),
        "channels": image.channels(),
        "pixels": base64::engine::general_purpose::STANDARD.encode(image.data()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSettings {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/completions".into(),
            model: "gpt-3.5-turbo-instruct".into(),
            timeout_secs: 60,
            max_retries: 2,
        }
    }
}

pub struct HttpGenerator {
    settings: GeneratorSettings,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpGenerator {
    pub fn new(settings: GeneratorSettings, token: Option<String>) -> Self {
        let agent = agent(Duration::from_secs(settings.timeout_secs));
        Self { settings, token, agent }
    }

    /// Reads the token from [`API_KEY_ENV`].
    pub fn from_env(settings: GeneratorSettings) -> Self {
        Self::new(settings, std::env::var(API_KEY_ENV).ok())
    }
}

fn completion_text(body: &Value) -> Option<String> {
    let choice = body.get("choices")?.get(0)?;
    choice
        .get("text")
        .or_else(|| choice.get("message").and_then(|m| m.get("content")))
        .and_then(Value::as_str)
        .map(str::to_owned)
}

impl PromptGeneratorBackend for HttpGenerator {
    fn complete(&self, instruction: &str) -> Result<String> {
        let body = json!({
            "model": self.settings.model,
            "prompt": instruction,
            "max_tokens": 512,
            "temperature": 0.0,
        });
        let mut last = None;
        for attempt in 0..=self.settings.max_retries {
            match post_json(&self.agent, &self.settings.endpoint, self.token.as_deref(), &body) {
                Ok(v) => {
                    return completion_text(&v)
                        .ok_or_else(|| Error::BackendUnavailable(format!("no completion text in {v}")))
                }
                Err(e) => {
                    log::warn!("completion attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSettings {
    pub endpoint: String,
    pub device: String,
    /// Append "." to the query, as grounded detectors expect.
    pub query_dot: bool,
    pub timeout_secs: u64,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8601".into(),
            device: "cpu".into(),
            query_dot: true,
            timeout_secs: 60,
        }
    }
}

pub struct HttpDetector {
    settings: DetectorSettings,
    agent: ureq::Agent,
}

impl HttpDetector {
    pub fn new(settings: DetectorSettings) -> Self {
        let agent = agent(Duration::from_secs(settings.timeout_secs));
        Self { settings, agent }
    }
}

#[derive(Deserialize)]
struct WireDetection {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    confidence: f64,
    #[serde(default)]
    phrase: String,
}

#[derive(Deserialize)]
struct WireDetections {
    detections: Vec<WireDetection>,
}

impl DetectorBackend for HttpDetector {
    fn detect(&self, image: &ImageBuffer, query: &str) -> Result<Vec<Detection>> {
        let query = if self.settings.query_dot && !query.ends_with('.') {
            format!("{query}.")
        } else {
            query.to_owned()
        };
        let mut body = image_payload(image);
        body["query"] = json!(query);
        body["device"] = json!(self.settings.device);
        let url = format!("{}/detect", self.settings.endpoint.trim_end_matches('/'));
        let reply: WireDetections = serde_json::from_value(post_json(&self.agent, &url, None, &body)?)
            .map_err(|e| Error::BackendUnavailable(format!("{url}: {e}")))?;
        Ok(reply
            .detections
            .into_iter()
            .filter_map(|d| {
                let [x, y, w, h] = d.bbox.map(|v| v.round() as i64);
                clamp_signed_box(x, y, w, h, image.width(), image.height())
                    .map(|b| Detection::new(b, d.confidence, d.phrase))
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSettings {
    pub endpoint: String,
    /// Model name plus weights hash; cache entries are scoped by it.
    pub identity: String,
    pub dim: usize,
    pub timeout_secs: u64,
    pub cache_enabled: bool,
    pub cache_path: String,
}

impl Default for EmbedderSettings {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8602".into(),
            identity: "clip-vit-b-32".into(),
            dim: 512,
            timeout_secs: 60,
            cache_enabled: true,
            cache_path: ".zsad-cache/embeddings.bin".into(),
        }
    }
}

pub struct HttpEmbedder {
    settings: EmbedderSettings,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(settings: EmbedderSettings) -> Self {
        let agent = agent(Duration::from_secs(settings.timeout_secs));
        Self { settings, agent }
    }

    fn embedding(&self, route: &str, body: &Value) -> Result<Vec<f64>> {
        let url = format!("{}/{route}", self.settings.endpoint.trim_end_matches('/'));
        let reply = post_json(&self.agent, &url, None, body)?;
        reply
            .get("embedding")
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
            .ok_or_else(|| Error::BackendUnavailable(format!("{url}: no numeric embedding in reply")))
    }
}

impl EmbedderBackend for HttpEmbedder {
    fn embed_text(&self, prompt: &str) -> Result<Vec<f64>> {
        self.embedding("embed/text", &json!({ "text": prompt }))
    }

    fn embed_image(&self, image: &ImageBuffer) -> Result<Vec<f64>> {
        self.embedding("embed/image", &image_payload(image))
    }

    fn dim(&self) -> usize {
        self.settings.dim
    }

    fn identity(&self) -> String {
        self.settings.identity.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_text_accepts_both_shapes() {
        assert_eq!(completion_text(&json!({"choices": [{"text": "a"}]})).as_deref(), Some("a"));
        assert_eq!(
            completion_text(&json!({"choices": [{"message": {"content": "b"}}]})).as_deref(),
            Some("b")
        );
        assert_eq!(completion_text(&json!({"choices": []})), None);
    }

    #[test]
    fn image_payload_is_base64_of_raw_bytes() {
        let img = ImageBuffer::new(1, 2, 1, vec![0, 255]).unwrap();
        let p = image_payload(&img);
        assert_eq!(p["pixels"], "AP8=");
        assert_eq!(p["width"], 2);
    }

    #[test]
    fn unreachable_endpoint_is_backend_unavailable() {
        let settings = GeneratorSettings {
            endpoint: "http://127.0.0.1:9/v1/completions".into(),
            timeout_secs: 2,
            max_retries: 0,
            ..GeneratorSettings::default()
        };
        let g = HttpGenerator::new(settings, None);
        assert!(matches!(g.complete("x"), Err(Error::BackendUnavailable(_))));
    }
}
