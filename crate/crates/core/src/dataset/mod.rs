//! Building binary VQA datasets from chart events: ingestion, Pearson feature
//! selection, text serialization, candidate/query splitting, plus a seeded
//! synthetic data generator.

mod build;
mod ingest;
mod io;
mod select;
pub mod synth;

use std::path::Path;

use thiserror::Error;

use crate::types::{Condition, LabFeature, TypeError};

pub use build::{build_dataset, BuildConfig, DatasetRecord, LabelSummary, Manifest, Split, VqaDataset, BUILDER_VERSION};
pub use ingest::{
    ingest_chartevents, read_chartevents, read_chartevents_file, ChartEventRow, FeatureMatrix, Ingested, MalformedRow,
    Observation,
};
pub use io::{manifest_path, read_dataset, read_image_index, read_labels, write_dataset, ImageIndex, LabelTable};
pub use select::{pearson, pearson_pairwise, select_features, Correlation, FeatureSelection, RankedFeature, SkippedFeature};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{path}:{line}: {message}")]
    BadLine { path: String, line: usize, message: String },
    #[error("lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 complete pairs, have {pairs}")]
    InsufficientData { pairs: usize },
    #[error("label values must be 0 or 1, got {0}")]
    NonBinaryLabel(u8),
    #[error("{0}: candidate pool needs at least one positive and one negative record")]
    InsufficientClassExamples(Condition),
    #[error("{condition}: {records} records cannot fill a pool of {pool_size} and leave queries")]
    PoolTooLarge { condition: Condition, records: usize, pool_size: usize },
    #[error("patient {0} has no image reference")]
    MissingImage(String),
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Type(#[from] TypeError),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        DatasetError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

/// Shortest decimal that round-trips, never in exponent form; `-0` prints as `0`.
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

/// Render lab features as `"{value} {unit} {label}"` clauses joined by `", "`.
/// Empty units drop out along with their space; non-finite values are skipped.
pub fn serialize_features(features: &[LabFeature]) -> String {
    features
        .iter()
        .filter(|f| f.value.is_finite())
        .map(|f| {
            let unit = f.unit.trim();
            let label = f.label.trim();
            if unit.is_empty() {
                format!("{} {label}", format_value(f.value))
            } else {
                format!("{} {unit} {label}", format_value(f.value))
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serialization_examples() {
        let qtc = LabFeature::simple("QTc", 0.52, "sec").unwrap();
        assert_eq!(serialize_features(std::slice::from_ref(&qtc)), "0.52 sec QTc");
        let mv = LabFeature::new("Minute Volume", 9.0, "L/min", None, Some(12.0)).unwrap();
        assert_eq!(serialize_features(&[qtc, mv]), "0.52 sec QTc, 9 L/min Minute Volume");
        assert_eq!(serialize_features(&[]), "");
    }

    #[test]
    fn serialization_edge_cases() {
        let no_unit = LabFeature::simple("pH", 7.4, "").unwrap();
        assert_eq!(serialize_features(&[no_unit]), "7.4 pH");
        let missing = LabFeature::simple("HDL", f64::NAN, "mg/dL").unwrap();
        let ok = LabFeature::simple("LDL", 120.50, "mg/dL").unwrap();
        assert_eq!(serialize_features(&[missing.clone(), ok]), "120.5 mg/dL LDL");
        assert_eq!(serialize_features(&[missing]), "");
        assert_eq!(format_value(-0.0), "0");
        assert_eq!(format_value(1e21), "1000000000000000000000");
        assert_eq!(format_value(0.1 + 0.2), "0.30000000000000004");
    }
}
