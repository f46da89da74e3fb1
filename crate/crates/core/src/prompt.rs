//! Question templates, interleaved few-shot prompt assembly and answer parsing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::serialize_features;
use crate::types::{Candidate, Condition, ImageRef, LabFeature, Prediction, QuerySample, Verdict};

pub const DEFAULT_MAX_PROMPT_CHARS: usize = 8000;

pub const POSITIVE_ANSWER: &str = "yes";
pub const NEGATIVE_ANSWER: &str = "no";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error(transparent)]
    UnknownLabel(#[from] crate::types::TypeError),
    #[error("at least one shot is required; zero-shot prompting is not supported")]
    ZeroShots,
    #[error("image-bearing template needs an image for {0}")]
    MissingImage(String),
    #[error("prompt is {chars} characters, over the {budget}-character budget")]
    ContextOverflow { chars: usize, budget: usize },
}

/// Which inputs a prompt interleaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    /// Images and questions, no lab results.
    ImageText,
    /// Questions with lab results, no images.
    EhrText,
    #[default]
    ImageEhrText,
}

impl TemplateKind {
    pub fn has_images(self) -> bool {
        !matches!(self, TemplateKind::EhrText)
    }

    pub fn has_ehr(self) -> bool {
        !matches!(self, TemplateKind::ImageText)
    }

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::ImageText => "image-text",
            TemplateKind::EhrText => "ehr-text",
            TemplateKind::ImageEhrText => "image-ehr-text",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemplateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "image-text" => Ok(TemplateKind::ImageText),
            "ehr-text" => Ok(TemplateKind::EhrText),
            "image-ehr-text" => Ok(TemplateKind::ImageEhrText),
            other => Err(format!("unknown template {other:?} (expected image-text, ehr-text or image-ehr-text)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PromptSegment {
    Image { image: ImageRef },
    Text { text: String },
}

impl PromptSegment {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            PromptSegment::Text { text } => Some(text),
            PromptSegment::Image { .. } => None,
        }
    }
}

/// Interleaved prompt: one block per shot (image, question, answer) followed
/// by the query block (image, question) with no answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSequence {
    pub segments: Vec<PromptSegment>,
    pub shot_count: usize,
}

impl PromptSequence {
    pub fn image_slots(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, PromptSegment::Image { .. })).count()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(PromptSegment::as_text)
    }

    pub fn text_chars(&self) -> usize {
        self.texts().map(|t| t.chars().count()).sum()
    }

    /// Flat rendering with `<image>` placeholders, for logs and traces.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                PromptSegment::Image { .. } => out.push_str("<image>"),
                PromptSegment::Text { text } => {
                    out.push_str(text);
                    out.push('\n');
                }
            }
        }
        out
    }
}

/// Render the question for one record. The image-only template never carries
/// lab results; the EHR templates fall back to that wording when there is
/// nothing to serialize.
pub fn render_question(label: Condition, features: &[LabFeature], kind: TemplateKind) -> String {
    let serialized = if kind.has_ehr() { serialize_features(features) } else { String::new() };
    if serialized.is_empty() {
        format!("Question: Is the patient likely to have {label}?")
    } else {
        format!("Question: Is the patient likely to have {label}, given the following laboratory test results: {serialized}?")
    }
}

/// [`render_question`] for a label given by name.
pub fn render_question_named(label_name: &str, features: &[LabFeature], kind: TemplateKind) -> Result<String, PromptError> {
    Ok(render_question(label_name.parse()?, features, kind))
}

pub fn answer_text(label: u8) -> &'static str {
    if label == 1 {
        POSITIVE_ANSWER
    } else {
        NEGATIVE_ANSWER
    }
}

fn image_segment(image: &ImageRef, whose: &str) -> Result<PromptSegment, PromptError> {
    if image.as_str().is_empty() {
        return Err(PromptError::MissingImage(whose.to_string()));
    }
    Ok(PromptSegment::Image { image: image.clone() })
}

/// Build the interleaved prompt. `shots` must already be in prompt order
/// (most similar last); `query_image` is the (possibly grounded) query image.
/// The query label is never read.
pub fn assemble_prompt(
    shots: &[Candidate],
    query: &QuerySample,
    query_image: &ImageRef,
    kind: TemplateKind,
    max_chars: usize,
) -> Result<PromptSequence, PromptError> {
    if shots.is_empty() {
        return Err(PromptError::ZeroShots);
    }
    let view = query.prompt_view();
    let mut segments = Vec::with_capacity(shots.len() * 3 + 2);
    for shot in shots {
        let r = &shot.record;
        if kind.has_images() {
            segments.push(image_segment(&r.image_ref, &r.id)?);
        }
        segments.push(PromptSegment::Text { text: render_question(r.label_name, &r.features, kind) });
        segments.push(PromptSegment::Text { text: answer_text(r.label).to_string() });
    }
    if kind.has_images() {
        segments.push(image_segment(query_image, view.id)?);
    }
    segments.push(PromptSegment::Text { text: render_question(view.label_name, view.features, kind) });

    let seq = PromptSequence { segments, shot_count: shots.len() };
    let chars = seq.text_chars();
    if chars > max_chars {
        return Err(PromptError::ContextOverflow { chars, budget: max_chars });
    }
    Ok(seq)
}

/// Map a generation to a verdict by looking for a standalone "yes" or "no"
/// in its first sentence (case-insensitive). Neither or both is unparseable.
pub fn parse_answer(generation: &str) -> Prediction {
    let first_line = generation.trim_start().lines().next().unwrap_or("");
    let sentence = first_line.split(['.', '!', '?']).next().unwrap_or("");
    let mut yes = false;
    let mut no = false;
    for word in sentence.split(|c: char| !c.is_alphanumeric()) {
        if word.eq_ignore_ascii_case("yes") {
            yes = true;
        } else if word.eq_ignore_ascii_case("no") {
            no = true;
        }
    }
    let verdict = match (yes, no) {
        (true, false) => Verdict::Positive,
        (false, true) => Verdict::Negative,
        _ => Verdict::Unparseable,
    };
    Prediction { verdict, raw_text: generation.to_string() }
}
