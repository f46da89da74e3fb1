//! Model capabilities (embed text, embed image, detect, generate) behind
//! traits, with a deterministic in-process mock and a JSON-over-HTTP client.

pub mod conformance;
pub mod http;
pub mod mock;
pub mod server;
pub mod wire;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounding::Detection;
use crate::prompt::PromptSequence;
use crate::types::{Embedding, ImageRef};

pub use http::{HttpBackend, HttpConfig, ImageTransport};
pub use mock::{MockBackend, MockConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("prompt exceeds the model context ({0})")]
    ContextOverflow(String),
    #[error("invalid backend input: {0}")]
    InvalidInput(String),
    #[error("no {0} configured")]
    MissingCapability(&'static str),
    #[error("reading image {path}: {message}")]
    Io { path: String, message: String },
}

pub trait TextEmbedder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError>;
}

pub trait ImageEmbedder: Send + Sync {
    fn embed_image(&self, image: &ImageRef) -> Result<Embedding, BackendError>;
}

pub trait Detector: Send + Sync {
    fn detect(&self, image: &ImageRef, condition_text: &str) -> Result<Vec<Detection>, BackendError>;
}

pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerateRequest) -> Result<String, BackendError>;
}

pub const DEFAULT_MAX_NEW_TOKENS: u32 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub segments: PromptSequence,
    pub max_new_tokens: u32,
    pub seed: Option<u64>,
}

impl GenerateRequest {
    pub fn new(segments: PromptSequence) -> Self {
        GenerateRequest { segments, max_new_tokens: DEFAULT_MAX_NEW_TOKENS, seed: None }
    }
}

/// The four capability handles a run draws on. Any may be absent; runs that
/// need a missing one fail with [`BackendError::MissingCapability`].
#[derive(Clone, Default)]
pub struct BackendSet {
    pub text_embedder: Option<Arc<dyn TextEmbedder>>,
    pub image_embedder: Option<Arc<dyn ImageEmbedder>>,
    pub detector: Option<Arc<dyn Detector>>,
    pub generator: Option<Arc<dyn Generator>>,
}

impl std::fmt::Debug for BackendSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendSet")
            .field("text_embedder", &self.text_embedder.is_some())
            .field("image_embedder", &self.image_embedder.is_some())
            .field("detector", &self.detector.is_some())
            .field("generator", &self.generator.is_some())
            .finish()
    }
}

impl BackendSet {
    pub fn mock(config: MockConfig) -> Self {
        Self::uniform(Arc::new(MockBackend::new(config)))
    }

    pub fn http(config: HttpConfig) -> Self {
        Self::uniform(Arc::new(HttpBackend::new(config)))
    }

    fn uniform<B>(b: Arc<B>) -> Self
    where
        B: TextEmbedder + ImageEmbedder + Detector + Generator + 'static,
    {
        BackendSet {
            text_embedder: Some(b.clone()),
            image_embedder: Some(b.clone()),
            detector: Some(b.clone()),
            generator: Some(b),
        }
    }

    pub fn without_detector(mut self) -> Self {
        self.detector = None;
        self
    }

    pub fn text_embedder(&self) -> Result<&dyn TextEmbedder, BackendError> {
        self.text_embedder.as_deref().ok_or(BackendError::MissingCapability("text embedder"))
    }

    pub fn image_embedder(&self) -> Result<&dyn ImageEmbedder, BackendError> {
        self.image_embedder.as_deref().ok_or(BackendError::MissingCapability("image embedder"))
    }

    pub fn detector(&self) -> Result<&dyn Detector, BackendError> {
        self.detector.as_deref().ok_or(BackendError::MissingCapability("detector"))
    }

    pub fn generator(&self) -> Result<&dyn Generator, BackendError> {
        self.generator.as_deref().ok_or(BackendError::MissingCapability("generator"))
    }
}

pub(crate) fn read_image_bytes(image: &ImageRef) -> Result<Vec<u8>, BackendError> {
    std::fs::read(image.as_path())
        .map_err(|e| BackendError::Io { path: image.to_string(), message: e.to_string() })
}
