//! Domain types shared across the pipeline. Nothing here talks to a model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypeError {
    #[error("unknown condition label {0:?}")]
    UnknownLabel(String),
    #[error("lab feature label must be non-empty")]
    EmptyFeatureLabel,
    #[error("lab feature {label:?}: low {low} exceeds high {high}")]
    InvertedRange { label: String, low: f64, high: f64 },
    #[error("binary label must be 0 or 1, got {0}")]
    NonBinaryLabel(u8),
    #[error("record id must be non-empty")]
    EmptyId,
    #[error("embedding must have at least one dimension")]
    EmptyEmbedding,
    #[error("embedding entry {index} is not finite ({value})")]
    NonFiniteEmbedding { index: usize, value: f64 },
}

/// The closed vocabulary of chest X-ray findings a record can be labelled with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Atelectasis,
    Cardiomegaly,
    Consolidation,
    Edema,
    EnlargedCardiomediastinum,
    Fracture,
    LungLesion,
    LungOpacity,
    PleuralEffusion,
    PleuralOther,
    Pneumonia,
    Pneumothorax,
}

impl Condition {
    pub const ALL: [Condition; 12] = [
        Condition::Atelectasis,
        Condition::Cardiomegaly,
        Condition::Consolidation,
        Condition::Edema,
        Condition::EnlargedCardiomediastinum,
        Condition::Fracture,
        Condition::LungLesion,
        Condition::LungOpacity,
        Condition::PleuralEffusion,
        Condition::PleuralOther,
        Condition::Pneumonia,
        Condition::Pneumothorax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Atelectasis => "Atelectasis",
            Condition::Cardiomegaly => "Cardiomegaly",
            Condition::Consolidation => "Consolidation",
            Condition::Edema => "Edema",
            Condition::EnlargedCardiomediastinum => "Enlarged Cardiomediastinum",
            Condition::Fracture => "Fracture",
            Condition::LungLesion => "Lung Lesion",
            Condition::LungOpacity => "Lung Opacity",
            Condition::PleuralEffusion => "Pleural Effusion",
            Condition::PleuralOther => "Pleural Other",
            Condition::Pneumonia => "Pneumonia",
            Condition::Pneumothorax => "Pneumothorax",
        }
    }

    /// Position in [`Condition::ALL`].
    pub fn index(self) -> usize {
        Condition::ALL.iter().position(|c| *c == self).unwrap_or(0)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| TypeError::UnknownLabel(s.to_string()))
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Opaque image locator. The engine never decodes pixels through this type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn new(locator: impl Into<String>) -> Self {
        ImageRef(locator.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_path(&self) -> &std::path::Path {
        std::path::Path::new(&self.0)
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One lab test result. `low`/`high` are frequently absent in real charts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LabFeatureRepr")]
pub struct LabFeature {
    pub label: String,
    pub value: f64,
    pub unit: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub high: Option<f64>,
}

#[derive(Deserialize)]
struct LabFeatureRepr {
    label: String,
    value: f64,
    #[serde(default)]
    unit: String,
    #[serde(default)]
    low: Option<f64>,
    #[serde(default)]
    high: Option<f64>,
}

impl TryFrom<LabFeatureRepr> for LabFeature {
    type Error = TypeError;

    fn try_from(r: LabFeatureRepr) -> Result<Self, Self::Error> {
        LabFeature::new(r.label, r.value, r.unit, r.low, r.high)
    }
}

impl LabFeature {
    pub fn new(
        label: impl Into<String>,
        value: f64,
        unit: impl Into<String>,
        low: Option<f64>,
        high: Option<f64>,
    ) -> Result<Self, TypeError> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(TypeError::EmptyFeatureLabel);
        }
        if let (Some(lo), Some(hi)) = (low, high) {
            if lo > hi {
                return Err(TypeError::InvertedRange { label, low: lo, high: hi });
            }
        }
        Ok(LabFeature { label, value, unit: unit.into(), low, high })
    }

    /// Shorthand for a feature without reference range.
    pub fn simple(label: impl Into<String>, value: f64, unit: impl Into<String>) -> Result<Self, TypeError> {
        LabFeature::new(label, value, unit, None, None)
    }
}

/// One (patient, condition) pair with its lab features and binary label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecordRepr")]
pub struct Record {
    pub id: String,
    pub image_ref: ImageRef,
    pub features: Vec<LabFeature>,
    pub label_name: Condition,
    pub label: u8,
}

#[derive(Deserialize)]
struct RecordRepr {
    id: String,
    image_ref: ImageRef,
    #[serde(default)]
    features: Vec<LabFeature>,
    label_name: Condition,
    label: u8,
}

impl TryFrom<RecordRepr> for Record {
    type Error = TypeError;

    fn try_from(r: RecordRepr) -> Result<Self, Self::Error> {
        Record::new(r.id, r.image_ref, r.features, r.label_name, r.label)
    }
}

impl Record {
    pub fn new(
        id: impl Into<String>,
        image_ref: ImageRef,
        features: Vec<LabFeature>,
        label_name: Condition,
        label: u8,
    ) -> Result<Self, TypeError> {
        let id = id.into();
        if id.is_empty() {
            return Err(TypeError::EmptyId);
        }
        if label > 1 {
            return Err(TypeError::NonBinaryLabel(label));
        }
        Ok(Record { id, image_ref, features, label_name, label })
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }

    pub fn with_image(&self, image_ref: ImageRef) -> Record {
        Record { image_ref, ..self.clone() }
    }
}

/// A record offered as a potential few-shot demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub record: Record,
}

impl Candidate {
    pub fn new(record: Record) -> Self {
        Candidate { record }
    }
}

/// The record being diagnosed. Its label is only for scoring; prompt assembly
/// reads it through [`QuerySample::prompt_view`], which hides it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySample {
    record: Record,
}

/// Label-free projection of a query, the only view prompt assembly gets.
#[derive(Debug, Clone, Copy)]
pub struct QueryView<'a> {
    pub id: &'a str,
    pub image_ref: &'a ImageRef,
    pub features: &'a [LabFeature],
    pub label_name: Condition,
}

impl QuerySample {
    pub fn new(record: Record) -> Self {
        QuerySample { record }
    }

    pub fn prompt_view(&self) -> QueryView<'_> {
        QueryView {
            id: &self.record.id,
            image_ref: &self.record.image_ref,
            features: &self.record.features,
            label_name: self.record.label_name,
        }
    }

    pub fn gold_label(&self) -> u8 {
        self.record.label
    }

    pub fn record(&self) -> &Record {
        &self.record
    }
}

/// Non-empty vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, TypeError> {
        if values.is_empty() {
            return Err(TypeError::EmptyEmbedding);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TypeError::NonFiniteEmbedding { index, value });
        }
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = TypeError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::new(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// Image (G) and text (T) embeddings of one sample. A channel may be absent
/// when the active modality never reads it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddedSample {
    pub image: Option<Embedding>,
    pub text: Option<Embedding>,
}

impl EmbeddedSample {
    pub fn new(image: Embedding, text: Embedding) -> Self {
        EmbeddedSample { image: Some(image), text: Some(text) }
    }

    pub fn image_only(image: Embedding) -> Self {
        EmbeddedSample { image: Some(image), text: None }
    }

    pub fn text_only(text: Embedding) -> Self {
        EmbeddedSample { image: None, text: Some(text) }
    }
}

/// Which similarity channels feed the shot score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
    #[default]
    Multimodal,
}

impl Modality {
    pub fn uses_image(self) -> bool {
        matches!(self, Modality::Image | Modality::Multimodal)
    }

    pub fn uses_text(self) -> bool {
        matches!(self, Modality::Text | Modality::Multimodal)
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Multimodal => "multimodal",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            "multimodal" => Ok(Modality::Multimodal),
            other => Err(format!("unknown modality {other:?} (expected text, image or multimodal)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Positive,
    Negative,
    Unparseable,
}

/// A parsed model generation; the raw text is always kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub verdict: Verdict,
    pub raw_text: String,
}
