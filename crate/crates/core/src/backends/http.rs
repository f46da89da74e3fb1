//! Blocking client for a remote backend speaking the wire protocol.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{self, DetectRequest, DetectResponse, EmbedImageRequest, EmbedResponse, EmbedTextRequest};
pub use super::wire::ImageTransport;
use super::{BackendError, Detector, GenerateRequest, Generator, ImageEmbedder, TextEmbedder};
use crate::grounding::Detection;
use crate::types::{Embedding, ImageRef};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub base_url: String,
    pub generate_timeout: Duration,
    pub timeout: Duration,
    pub image_transport: ImageTransport,
    pub max_in_flight: usize,
    /// Extra attempts after a transport failure.
    pub retries: u32,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            generate_timeout: Duration::from_secs(120),
            timeout: Duration::from_secs(30),
            image_transport: ImageTransport::Base64,
            max_in_flight: 4,
            retries: 1,
        }
    }
}

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate { slots: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
            while *slots == 0 {
                slots = self.freed.wait(slots).unwrap_or_else(|e| e.into_inner());
            }
            *slots -= 1;
        }
        let out = f();
        *self.slots.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.freed.notify_one();
        out
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::AgentBuilder::new().build();
        let gate = Gate::new(config.max_in_flight);
        HttpBackend { config, agent, gate }
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B, timeout: Duration) -> Result<R, BackendError> {
        let url = format!("{}{}", self.config.base_url, path);
        let payload = serde_json::to_string(body).map_err(|e| BackendError::InvalidInput(e.to_string()))?;
        let mut attempt = 0;
        loop {
            let result = self.gate.run(|| {
                self.agent
                    .post(&url)
                    .timeout(timeout)
                    .set("Content-Type", "application/json")
                    .send_string(&payload)
                    .map_err(Box::new)
            });
            match result.map_err(|e| *e) {
                Ok(resp) => {
                    let text = resp.into_string().map_err(|e| BackendError::Transport(e.to_string()))?;
                    return serde_json::from_str(&text)
                        .map_err(|e| BackendError::Backend(format!("{path}: malformed response: {e}")));
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let text = resp.into_string().unwrap_or_default();
                    let message = serde_json::from_str::<wire::ErrorResponse>(&text)
                        .map(|e| e.error)
                        .unwrap_or(text);
                    return Err(if code == 413 {
                        BackendError::ContextOverflow(message)
                    } else {
                        BackendError::Backend(format!("{path} returned {code}: {message}"))
                    });
                }
                Err(ureq::Error::Transport(t)) => {
                    if attempt >= self.config.retries {
                        return Err(BackendError::Transport(format!("{url}: {t}")));
                    }
                    attempt += 1;
                    log::warn!("retrying {url} after transport error: {t}");
                }
            }
        }
    }

    fn embedding(resp: EmbedResponse) -> Result<Embedding, BackendError> {
        if resp.dim != resp.vector.len() {
            return Err(BackendError::Backend(format!(
                "dim {} disagrees with vector length {}",
                resp.dim,
                resp.vector.len()
            )));
        }
        Embedding::new(resp.vector).map_err(|e| BackendError::Backend(e.to_string()))
    }
}

impl TextEmbedder for HttpBackend {
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        let resp = self.post(wire::EMBED_TEXT, &EmbedTextRequest { text: text.to_string() }, self.config.timeout)?;
        Self::embedding(resp)
    }
}

impl ImageEmbedder for HttpBackend {
    fn embed_image(&self, image: &ImageRef) -> Result<Embedding, BackendError> {
        let body = EmbedImageRequest { image: wire::image_payload(image, self.config.image_transport)? };
        Self::embedding(self.post(wire::EMBED_IMAGE, &body, self.config.timeout)?)
    }
}

impl Detector for HttpBackend {
    fn detect(&self, image: &ImageRef, condition_text: &str) -> Result<Vec<Detection>, BackendError> {
        let body = DetectRequest {
            image: wire::image_payload(image, self.config.image_transport)?,
            query: condition_text.to_string(),
        };
        let resp: DetectResponse = self.post(wire::DETECT, &body, self.config.timeout)?;
        resp.detections.into_iter().map(Detection::try_from).collect()
    }
}

impl Generator for HttpBackend {
    fn generate(&self, request: &GenerateRequest) -> Result<String, BackendError> {
        let body = wire::GenerateBody {
            segments: wire::encode_segments(&request.segments, self.config.image_transport)?,
            max_new_tokens: request.max_new_tokens,
            seed: request.seed,
        };
        let resp: wire::GenerateResponse = self.post(wire::GENERATE, &body, self.config.generate_timeout)?;
        Ok(resp.text)
    }
}
