use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{ImageIndex, LabelTable};
use super::{select_features, DatasetError, FeatureMatrix, RankedFeature};
use crate::types::{Condition, Record};

pub const BUILDER_VERSION: &str = "dxprompt-dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Candidate,
    Query,
}

/// One JSONL line: the record plus its split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(flatten)]
    pub record: Record,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub features: Vec<RankedFeature>,
    pub records: usize,
    pub positives: usize,
    pub negatives: usize,
    pub candidates: usize,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub builder_version: String,
    pub seed: u64,
    pub source: String,
    pub k: usize,
    pub pool_size: usize,
    pub labels: BTreeMap<Condition, LabelSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqaDataset {
    pub records: Vec<DatasetRecord>,
    pub manifest: Manifest,
}

impl VqaDataset {
    pub fn conditions(&self) -> Vec<Condition> {
        let set: BTreeSet<Condition> = self.records.iter().map(|r| r.record.label_name).collect();
        set.into_iter().collect()
    }

    fn of(&self, condition: Condition, split: Split) -> Vec<&Record> {
        self.records
            .iter()
            .filter(|r| r.record.label_name == condition && r.split == split)
            .map(|r| &r.record)
            .collect()
    }

    pub fn candidates(&self, condition: Condition) -> Vec<&Record> {
        self.of(condition, Split::Candidate)
    }

    pub fn queries(&self, condition: Condition) -> Vec<&Record> {
        self.of(condition, Split::Query)
    }

    /// Check the structural invariants: unique ids, per-label feature cap,
    /// both classes in every pool and query features covered by the pool.
    pub fn validate(&self, k: usize) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.record.id.as_str()) {
                return Err(DatasetError::DuplicateId(r.record.id.clone()));
            }
        }
        for c in self.conditions() {
            let pool = self.candidates(c);
            if !pool.iter().any(|r| r.is_positive()) || !pool.iter().any(|r| !r.is_positive()) {
                return Err(DatasetError::InsufficientClassExamples(c));
            }
            let names: BTreeSet<&str> = self
                .records
                .iter()
                .filter(|r| r.record.label_name == c)
                .flat_map(|r| r.record.features.iter().map(|f| f.label.as_str()))
                .collect();
            if names.len() > k {
                return Err(DatasetError::Schema(format!("{c}: {} distinct features exceed the cap of {k}", names.len())));
            }
            let covered: BTreeSet<&str> = pool.iter().flat_map(|r| r.features.iter().map(|f| f.label.as_str())).collect();
            for q in self.queries(c) {
                if let Some(f) = q.features.iter().find(|f| !covered.contains(f.label.as_str())) {
                    return Err(DatasetError::Schema(format!(
                        "query {} uses feature {:?} that no candidate for {c} has",
                        q.id, f.label
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildConfig {
    /// Feature cap per label.
    pub k: usize,
    /// Candidate pool size per label.
    pub pool_size: usize,
    pub seed: u64,
    pub source: String,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig { k: 10, pool_size: 6, seed: 0, source: String::new() }
    }
}

fn split_rng(seed: u64, condition: Condition) -> ChaCha8Rng {
    let salt = (condition.index() as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

/// Pool indices: the first positive and first negative in shuffled order,
/// then the next shuffled records up to `pool_size`.
fn draw_pool(labels: &[u8], pool_size: usize, rng: &mut ChaCha8Rng) -> Option<BTreeSet<usize>> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let pos = *order.iter().find(|&&i| labels[i] == 1)?;
    let neg = *order.iter().find(|&&i| labels[i] == 0)?;
    let mut pool = BTreeSet::from([pos, neg]);
    for i in order {
        if pool.len() >= pool_size {
            break;
        }
        pool.insert(i);
    }
    Some(pool)
}

pub fn build_dataset(
    matrix: &FeatureMatrix,
    labels: &LabelTable,
    images: &ImageIndex,
    config: &BuildConfig,
) -> Result<VqaDataset, DatasetError> {
    if config.k == 0 {
        return Err(DatasetError::InvalidParams("feature cap k must be at least 1".into()));
    }
    if config.pool_size < 2 {
        return Err(DatasetError::InvalidParams("pool size must be at least 2".into()));
    }
    let mut records = Vec::new();
    let mut summaries = BTreeMap::new();

    for (&condition, by_patient) in labels {
        for patient in by_patient.keys() {
            if !images.contains_key(patient) {
                return Err(DatasetError::MissingImage(patient.clone()));
            }
        }
        let label_column: Vec<Option<u8>> = matrix.patients().map(|p| by_patient.get(p).copied()).collect();
        let selection = select_features(matrix, &label_column, config.k)?;
        for s in &selection.skipped {
            log::debug!("{condition}: skipped feature {:?}: {}", s.name, s.reason);
        }

        let mut recs: Vec<Record> = Vec::with_capacity(by_patient.len());
        for (patient, &label) in by_patient {
            let features = selection
                .ranked
                .iter()
                .filter_map(|f| matrix.get(patient, &f.name).map(|o| o.to_feature(&f.name)))
                .collect::<Result<Vec<_>, _>>()?;
            let id = format!("{patient}:{condition}");
            recs.push(Record::new(id, images[patient].clone(), features, condition, label)?);
        }

        let label_bits: Vec<u8> = recs.iter().map(|r| r.label).collect();
        if recs.len() <= config.pool_size {
            return Err(DatasetError::PoolTooLarge { condition, records: recs.len(), pool_size: config.pool_size });
        }
        let pool = draw_pool(&label_bits, config.pool_size, &mut split_rng(config.seed, condition))
            .ok_or(DatasetError::InsufficientClassExamples(condition))?;

        let covered: BTreeSet<String> = pool
            .iter()
            .flat_map(|&i| recs[i].features.iter().map(|f| f.label.clone()))
            .collect();
        let positives = label_bits.iter().filter(|&&l| l == 1).count();
        summaries.insert(
            condition,
            LabelSummary {
                features: selection.ranked.clone(),
                records: recs.len(),
                positives,
                negatives: recs.len() - positives,
                candidates: pool.len(),
                queries: recs.len() - pool.len(),
            },
        );
        for (i, mut record) in recs.into_iter().enumerate() {
            let split = if pool.contains(&i) {
                Split::Candidate
            } else {
                record.features.retain(|f| covered.contains(&f.label));
                Split::Query
            };
            records.push(DatasetRecord { record, split });
        }
    }

    Ok(VqaDataset {
        records,
        manifest: Manifest {
            builder_version: BUILDER_VERSION.to_string(),
            seed: config.seed,
            source: config.source.clone(),
            k: config.k,
            pool_size: config.pool_size,
            labels: summaries,
        },
    })
}
