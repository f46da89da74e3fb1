//! JSON bodies of the backend HTTP protocol.
//!
//! ```text
//! POST /v1/embed/text   {"text": s}                          -> {"vector": [f], "dim": n}
//! POST /v1/embed/image  {"image_b64": s} | {"path": s}       -> {"vector": [f], "dim": n}
//! POST /v1/detect       {"image_b64"|"path": s, "query": s}  -> {"detections": [{"box": [x0,y0,x1,y1], "score": f}]}
//! POST /v1/generate     {"segments": [...], "max_new_tokens": n, "seed": n?} -> {"text": s}
//! errors: non-2xx with {"error": s}
//! ```

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{read_image_bytes, BackendError};
use crate::grounding::{BBox, Detection};
use crate::prompt::{PromptSegment, PromptSequence};
use crate::types::ImageRef;

pub const EMBED_TEXT: &str = "/v1/embed/text";
pub const EMBED_IMAGE: &str = "/v1/embed/image";
pub const DETECT: &str = "/v1/detect";
pub const GENERATE: &str = "/v1/generate";
pub const HEALTHZ: &str = "/healthz";

pub fn b64_encode(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn b64_decode(s: &str) -> Result<Vec<u8>, BackendError> {
    base64::engine::general_purpose::STANDARD
        .decode(s)
        .map_err(|e| BackendError::InvalidInput(format!("invalid base64 image: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedTextRequest {
    pub text: String,
}

/// Exactly one of the two fields must be set.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImagePayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

pub enum ImageSource<'a> {
    Inline(&'a str),
    Path(&'a str),
}

impl ImagePayload {
    pub fn inline(bytes: &[u8]) -> Self {
        ImagePayload { image_b64: Some(b64_encode(bytes)), path: None }
    }

    pub fn path(path: impl Into<String>) -> Self {
        ImagePayload { image_b64: None, path: Some(path.into()) }
    }

    pub fn source(&self) -> Result<ImageSource<'_>, BackendError> {
        match (&self.image_b64, &self.path) {
            (Some(b), None) => Ok(ImageSource::Inline(b)),
            (None, Some(p)) => Ok(ImageSource::Path(p)),
            (Some(_), Some(_)) => Err(BackendError::InvalidInput("give either image_b64 or path, not both".into())),
            (None, None) => Err(BackendError::InvalidInput("missing image_b64 or path".into())),
        }
    }

    /// Resolve to raw bytes (reading the file for path payloads).
    pub fn bytes(&self) -> Result<Vec<u8>, BackendError> {
        match self.source()? {
            ImageSource::Inline(b) => b64_decode(b),
            ImageSource::Path(p) => read_image_bytes(&ImageRef::new(p)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedImageRequest {
    #[serde(flatten)]
    pub image: ImagePayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectRequest {
    #[serde(flatten)]
    pub image: ImagePayload,
    pub query: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    #[serde(rename = "box")]
    pub bbox: [i64; 4],
    pub score: f64,
}

impl From<&Detection> for WireDetection {
    fn from(d: &Detection) -> Self {
        WireDetection { bbox: d.bbox.as_array(), score: d.score }
    }
}

impl TryFrom<WireDetection> for Detection {
    type Error = BackendError;

    fn try_from(w: WireDetection) -> Result<Self, Self::Error> {
        let [x0, y0, x1, y1] = w.bbox;
        let bbox = BBox::new(x0, y0, x1, y1).map_err(|e| BackendError::Backend(e.to_string()))?;
        Detection::new(bbox, w.score).map_err(|e| BackendError::Backend(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<WireDetection>,
}

/// `{"type": "text", "text": s}` or `{"type": "image", "image_b64"|"path": s}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum WireSegment {
    Text { text: String },
    Image(ImagePayload),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateBody {
    pub segments: Vec<WireSegment>,
    pub max_new_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerateBody {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            WireSegment::Text { text } => Some(text.as_str()),
            WireSegment::Image(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

/// How images leave the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageTransport {
    /// Inline base64 of the file bytes.
    #[default]
    Base64,
    /// The locator itself; the server must be able to resolve it.
    Path,
}

pub fn image_payload(image: &ImageRef, transport: ImageTransport) -> Result<ImagePayload, BackendError> {
    Ok(match transport {
        ImageTransport::Base64 => ImagePayload::inline(&read_image_bytes(image)?),
        ImageTransport::Path => ImagePayload::path(image.as_str()),
    })
}

pub fn encode_segments(seq: &PromptSequence, transport: ImageTransport) -> Result<Vec<WireSegment>, BackendError> {
    seq.segments
        .iter()
        .map(|s| match s {
            PromptSegment::Text { text } => Ok(WireSegment::Text { text: text.clone() }),
            PromptSegment::Image { image } => image_payload(image, transport).map(WireSegment::Image),
        })
        .collect()
}

/// Inverse of [`encode_segments`] for path-transported prompts.
pub fn decode_segments(segments: &[WireSegment]) -> Result<Vec<PromptSegment>, BackendError> {
    segments
        .iter()
        .map(|s| match s {
            WireSegment::Text { text } => Ok(PromptSegment::Text { text: text.clone() }),
            WireSegment::Image(p) => match p.source()? {
                ImageSource::Path(path) => Ok(PromptSegment::Image { image: ImageRef::new(path) }),
                ImageSource::Inline(_) => Err(BackendError::InvalidInput("inline image has no locator".into())),
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn segment_shapes() {
        let t = serde_json::to_value(WireSegment::Text { text: "hi".into() }).unwrap();
        assert_eq!(t, serde_json::json!({"type": "text", "text": "hi"}));
        let i = serde_json::to_value(WireSegment::Image(ImagePayload::path("a.png"))).unwrap();
        assert_eq!(i, serde_json::json!({"type": "image", "path": "a.png"}));
        let d: DetectResponse =
            serde_json::from_str(r#"{"detections":[{"box":[1,2,3,4],"score":0.5}]}"#).unwrap();
        assert_eq!(d.detections[0].bbox, [1, 2, 3, 4]);
        // box coordinates are integers on the wire
        assert!(serde_json::from_str::<DetectResponse>(r#"{"detections":[{"box":[1.5,2,3,4],"score":0.5}]}"#).is_err());
        let body = serde_json::to_value(DetectRequest { image: ImagePayload::inline(b"xy"), query: "Edema".into() }).unwrap();
        assert_eq!(body, serde_json::json!({"image_b64": "eHk=", "query": "Edema"}));
    }

    #[test]
    fn payload_requires_exactly_one_source() {
        assert!(ImagePayload::default().source().is_err());
        let both = ImagePayload { image_b64: Some("eA==".into()), path: Some("p".into()) };
        assert!(both.source().is_err());
        assert_eq!(ImagePayload::inline(b"x").bytes().unwrap(), b"x");
    }

    fn segment() -> impl Strategy<Value = PromptSegment> {
        prop_oneof![
            ".{1,40}".prop_map(|text| PromptSegment::Text { text }),
            "[a-z/]{1,20}\\.png".prop_map(|p| PromptSegment::Image { image: ImageRef::new(p) }),
        ]
    }

    proptest! {
        #[test]
        fn generate_body_round_trip(segs in prop::collection::vec(segment(), 1..12), tokens in 1u32..512, seed in prop::option::of(any::<u64>())) {
            let seq = PromptSequence { segments: segs.clone(), shot_count: 1 };
            let body = GenerateBody { segments: encode_segments(&seq, ImageTransport::Path).unwrap(), max_new_tokens: tokens, seed };
            let json = serde_json::to_string(&body).unwrap();
            let back: GenerateBody = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(&back, &body);
            prop_assert_eq!(decode_segments(&back.segments).unwrap(), segs);
        }
    }
}
