//! Similarity-ordered few-shot prompting for chest X-ray diagnosis.
//!
//! For each query the pipeline grounds the image on the condition, embeds
//! image and lab text, keeps the candidate shots whose fused cosine similarity
//! clears a threshold, orders them so the closest shot sits next to the query,
//! assembles an interleaved image/text prompt and scores the generated answer.
//! Model capabilities sit behind [`backends`] traits with a deterministic mock
//! and an HTTP client.

pub mod backends;
pub mod dataset;
pub mod dps;
pub mod eval;
pub mod grounding;
pub mod prompt;
pub mod similarity;
pub mod types;

pub use backends::{BackendError, BackendSet, GenerateRequest};
pub use dps::{dps_select, retention_curve, DpsConfig, DpsError, PromptOrder, RetentionPoint, ScoredCandidate};
pub use grounding::{select_region, BBox, Detection, GroundingConfig, GroundingError, GroundingOutcome};
pub use prompt::{assemble_prompt, parse_answer, PromptError, PromptSegment, PromptSequence, TemplateKind};
pub use similarity::{cosine, fused_score, SimilarityError, SimilarityScore};
pub use types::{
    Candidate, Condition, EmbeddedSample, Embedding, ImageRef, LabFeature, Modality, Prediction, QuerySample, Record,
    TypeError, Verdict,
};
