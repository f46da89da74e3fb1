use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{metrics, ConfusionMatrix, Metrics, UnparseablePolicy};
use super::EvalError;
use crate::backends::{BackendSet, GenerateRequest, DEFAULT_MAX_NEW_TOKENS};
use crate::dataset::VqaDataset;
use crate::dps::{dps_select, DpsConfig};
use crate::grounding::{ground, GroundingConfig, GroundingOutcome, GroundingQuery};
use crate::prompt::{assemble_prompt, parse_answer, render_question, PromptSequence, TemplateKind, DEFAULT_MAX_PROMPT_CHARS};
use crate::types::{Candidate, Condition, EmbeddedSample, ImageRef, Modality, QuerySample, Record, Verdict};

fn default_true() -> bool {
    true
}
fn default_threshold() -> f64 {
    0.7
}
fn default_shots() -> usize {
    6
}
fn default_min_keep() -> usize {
    1
}
fn default_max_new_tokens() -> u32 {
    DEFAULT_MAX_NEW_TOKENS
}
fn default_max_prompt_chars() -> usize {
    DEFAULT_MAX_PROMPT_CHARS
}

/// One experiment. Every field has a default, so a config file only needs
/// the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_true")]
    pub dps_enabled: bool,
    #[serde(default = "default_true")]
    pub vg_enabled: bool,
    #[serde(default)]
    pub modality: Modality,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Candidates drawn from the label's pool per query, before DPS filtering.
    #[serde(default = "default_shots")]
    pub shots: usize,
    #[serde(default)]
    pub template: TemplateKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub unparseable_policy: UnparseablePolicy,
    #[serde(default = "default_min_keep")]
    pub min_keep: usize,
    #[serde(default)]
    pub padding_px: u32,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default = "default_max_prompt_chars")]
    pub max_prompt_chars: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dps_enabled: true,
            vg_enabled: true,
            modality: Modality::default(),
            threshold: default_threshold(),
            shots: default_shots(),
            template: TemplateKind::default(),
            seed: 0,
            unparseable_policy: UnparseablePolicy::default(),
            min_keep: default_min_keep(),
            padding_px: 0,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            max_prompt_chars: DEFAULT_MAX_PROMPT_CHARS,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidConfig(m));
        if self.shots == 0 {
            return bad("shots must be at least 1".into());
        }
        if !self.threshold.is_finite() || !(-1.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must lie in [-1, 1], got {}", self.threshold));
        }
        if self.min_keep == 0 || self.min_keep > self.shots {
            return bad(format!("min_keep must lie in [1, shots={}], got {}", self.shots, self.min_keep));
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be at least 1".into());
        }
        Ok(())
    }

    pub fn dps(&self) -> DpsConfig {
        DpsConfig { threshold: self.threshold, modality: self.modality, min_keep: self.min_keep }
    }

    /// Grounding only matters when the prompt carries images.
    fn grounds(&self) -> bool {
        self.vg_enabled && self.template.has_images()
    }
}

/// Where a run may write and how wide it may fan out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunContext {
    pub crop_dir: PathBuf,
    /// Records and queries processed at once; keep at or below the backend's
    /// in-flight bound.
    pub concurrency: usize,
}

impl RunContext {
    pub fn new(crop_dir: impl Into<PathBuf>) -> Self {
        RunContext { crop_dir: crop_dir.into(), concurrency: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryError {
    pub query_id: String,
    pub label_name: Condition,
    /// "prepare", "select", "prompt" or "generate".
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotTrace {
    pub id: String,
    pub label: u8,
    /// Fused similarity to the query; absent when DPS is off.
    pub score: Option<f64>,
    /// The (possibly grounded) image placed in the prompt.
    pub image_ref: ImageRef,
}

/// Everything that went into and came out of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub query_id: String,
    pub label_name: Condition,
    pub gold: u8,
    /// In prompt order; the last shot sits next to the query.
    pub shots: Vec<ShotTrace>,
    pub prompt: PromptSequence,
    pub verdict: Verdict,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub confusion: ConfusionMatrix,
    pub metrics: Option<Metrics>,
    pub queries: u64,
    pub errors: u64,
}

/// Outcome of one experiment. Contains no timestamps or timings, so equal
/// inputs give byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub confusion: ConfusionMatrix,
    /// Absent when no query produced a scored prediction.
    pub metrics: Option<Metrics>,
    pub per_label: BTreeMap<Condition, LabelReport>,
    /// Shots in the prompt -> number of queries.
    pub retained_histogram: BTreeMap<usize, u64>,
    pub mean_retained: f64,
    pub grounding_misses: u64,
    pub queries: u64,
    pub errors: Vec<QueryError>,
}

struct Prepared {
    image: ImageRef,
    embedded: EmbeddedSample,
    miss: bool,
}

fn prepare(record: &Record, config: &ExperimentConfig, backends: &BackendSet, grounding: &GroundingConfig) -> Result<Prepared, String> {
    let outcome = if config.grounds() {
        let query = GroundingQuery::new(record.label_name.name()).map_err(|e| e.to_string())?;
        let detector = backends.detector().map_err(|e| e.to_string())?;
        ground(&record.image_ref, &query, detector, grounding).map_err(|e| e.to_string())?
    } else {
        GroundingOutcome::Passthrough(record.image_ref.clone())
    };
    let image = outcome.image_ref().clone();
    let mut embedded = EmbeddedSample::default();
    if config.dps_enabled {
        if config.modality.uses_image() {
            let e = backends.image_embedder().and_then(|b| b.embed_image(&image)).map_err(|e| e.to_string())?;
            embedded.image = Some(e);
        }
        if config.modality.uses_text() {
            let text = render_question(record.label_name, &record.features, TemplateKind::EhrText);
            let e = backends.text_embedder().and_then(|b| b.embed_text(&text)).map_err(|e| e.to_string())?;
            embedded.text = Some(e);
        }
    }
    Ok(Prepared { image, embedded, miss: outcome.is_miss() })
}

fn query_rng(seed: u64, query_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(query_id.as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(key)
}

/// Draw `shots` pool indices, keeping at least one of each class when
/// `shots >= 2` and the pool has both. Returned in pool order.
pub fn draw_shots(pool_labels: &[u8], shots: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool_labels.len()).collect();
    order.shuffle(rng);
    let mut picked = Vec::with_capacity(shots);
    if shots >= 2 {
        for class in [1u8, 0] {
            if let Some(&i) = order.iter().find(|&&i| pool_labels[i] == class) {
                picked.push(i);
            }
        }
    }
    for &i in &order {
        if picked.len() >= shots {
            break;
        }
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    picked.sort_unstable();
    picked
}

fn run_query(
    query: &Record,
    prepared: &Prepared,
    pool: &[&Record],
    pool_prepared: &[Prepared],
    config: &ExperimentConfig,
    backends: &BackendSet,
) -> Result<QueryTrace, QueryError> {
    let fail = |stage: &str, message: String| {
        Err(QueryError { query_id: query.id.clone(), label_name: query.label_name, stage: stage.into(), message })
    };
    let mut rng = query_rng(config.seed, &query.id);
    let labels: Vec<u8> = pool.iter().map(|r| r.label).collect();
    let drawn = draw_shots(&labels, config.shots, &mut rng);

    // (pool index, score) in prompt order
    let ordered: Vec<(usize, Option<f64>)> = if config.dps_enabled {
        let offered: Vec<(Candidate, EmbeddedSample)> = drawn
            .iter()
            .map(|&i| (Candidate::new(pool[i].with_image(pool_prepared[i].image.clone())), pool_prepared[i].embedded.clone()))
            .collect();
        match dps_select(&offered, &prepared.embedded, &config.dps()) {
            Ok(order) => order.shots().iter().map(|s| (drawn[s.original_index], Some(s.score.value()))).collect(),
            Err(e) => return fail("select", e.to_string()),
        }
    } else {
        let mut shuffled = drawn;
        shuffled.shuffle(&mut rng);
        shuffled.into_iter().map(|i| (i, None)).collect()
    };

    let shots: Vec<Candidate> =
        ordered.iter().map(|&(i, _)| Candidate::new(pool[i].with_image(pool_prepared[i].image.clone()))).collect();
    let sample = QuerySample::new(query.clone());
    let prompt = match assemble_prompt(&shots, &sample, &prepared.image, config.template, config.max_prompt_chars) {
        Ok(p) => p,
        Err(e) => return fail("prompt", e.to_string()),
    };
    let request = GenerateRequest { segments: prompt.clone(), max_new_tokens: config.max_new_tokens, seed: Some(config.seed) };
    let text = match backends.generator().and_then(|g| g.generate(&request)) {
        Ok(t) => t,
        Err(e) => return fail("generate", e.to_string()),
    };
    let prediction = parse_answer(&text);
    let shot_traces = ordered
        .iter()
        .zip(&shots)
        .map(|(&(_, score), c)| ShotTrace { id: c.record.id.clone(), label: c.record.label, score, image_ref: c.record.image_ref.clone() })
        .collect();
    Ok(QueryTrace {
        query_id: query.id.clone(),
        label_name: query.label_name,
        gold: query.label,
        shots: shot_traces,
        prompt,
        verdict: prediction.verdict,
        raw_text: prediction.raw_text,
    })
}

struct LabelRun {
    traces: Vec<Result<QueryTrace, QueryError>>,
    misses: u64,
}

fn run_label(
    condition: Condition,
    dataset: &VqaDataset,
    config: &ExperimentConfig,
    backends: &BackendSet,
    grounding: &GroundingConfig,
) -> Result<LabelRun, EvalError> {
    let pool = dataset.candidates(condition);
    let queries = dataset.queries(condition);
    if pool.len() < config.shots {
        return Err(EvalError::PoolTooSmall { condition, pool: pool.len(), shots: config.shots });
    }
    let pool_prepared: Vec<Result<Prepared, String>> = pool.par_iter().map(|r| prepare(r, config, backends, grounding)).collect();
    let query_prepared: Vec<Result<Prepared, String>> =
        queries.par_iter().map(|r| prepare(r, config, backends, grounding)).collect();
    let misses = pool_prepared.iter().chain(&query_prepared).filter(|p| matches!(p, Ok(p) if p.miss)).count() as u64;

    let failure = |q: &Record, message: String| {
        Err(QueryError { query_id: q.id.clone(), label_name: condition, stage: "prepare".into(), message })
    };
    // a broken candidate poisons every prompt of the label
    let pool_prepared: Result<Vec<Prepared>, String> =
        pool.iter().zip(pool_prepared).map(|(r, p)| p.map_err(|e| format!("candidate {}: {e}", r.id))).collect();
    let pool_prepared = match pool_prepared {
        Ok(p) => p,
        Err(message) => {
            let traces = queries.iter().map(|q| failure(q, message.clone())).collect();
            return Ok(LabelRun { traces, misses });
        }
    };

    let traces = queries
        .par_iter()
        .zip(query_prepared.par_iter())
        .map(|(q, p)| match p {
            Ok(p) => run_query(q, p, &pool, &pool_prepared, config, backends),
            Err(e) => failure(q, e.clone()),
        })
        .collect();
    Ok(LabelRun { traces, misses })
}

/// Run one experiment and keep the per-query traces.
pub fn run_experiment_traced(
    config: &ExperimentConfig,
    dataset: &VqaDataset,
    backends: &BackendSet,
    ctx: &RunContext,
) -> Result<(Report, Vec<QueryTrace>), EvalError> {
    config.validate()?;
    let conditions = dataset.conditions();
    if conditions.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let grounding = GroundingConfig { enabled: config.grounds(), padding_px: config.padding_px, crop_dir: ctx.crop_dir.clone() };
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.concurrency.max(1))
        .build()
        .map_err(|e| EvalError::InvalidConfig(format!("worker pool: {e}")))?;

    let mut confusion = ConfusionMatrix::default();
    let mut per_label = BTreeMap::new();
    let mut histogram: BTreeMap<usize, u64> = BTreeMap::new();
    let mut errors = Vec::new();
    let mut traces = Vec::new();
    let mut misses = 0;
    let mut queries = 0;

    for condition in conditions {
        let run = threads.install(|| run_label(condition, dataset, config, backends, &grounding))?;
        misses += run.misses;
        let mut label_cm = ConfusionMatrix::default();
        let mut label_errors = 0;
        for t in run.traces {
            queries += 1;
            match t {
                Ok(trace) => {
                    label_cm.record(trace.verdict, trace.gold, config.unparseable_policy);
                    *histogram.entry(trace.shots.len()).or_default() += 1;
                    traces.push(trace);
                }
                Err(e) => {
                    log::warn!("query {} failed at {}: {}", e.query_id, e.stage, e.message);
                    label_errors += 1;
                    errors.push(e);
                }
            }
        }
        confusion.merge(&label_cm);
        per_label.insert(
            condition,
            LabelReport {
                confusion: label_cm,
                metrics: metrics(&label_cm).ok(),
                queries: label_cm.queries() + label_errors,
                errors: label_errors,
            },
        );
    }

    let assembled: u64 = histogram.values().sum();
    let mean_retained = if assembled == 0 {
        0.0
    } else {
        histogram.iter().map(|(k, n)| *k as f64 * *n as f64).sum::<f64>() / assembled as f64
    };
    let report = Report {
        config: config.clone(),
        confusion,
        metrics: metrics(&confusion).ok(),
        per_label,
        retained_histogram: histogram,
        mean_retained,
        grounding_misses: misses,
        queries,
        errors,
    };
    Ok((report, traces))
}

pub fn run_experiment(
    config: &ExperimentConfig,
    dataset: &VqaDataset,
    backends: &BackendSet,
    ctx: &RunContext,
) -> Result<Report, EvalError> {
    run_experiment_traced(config, dataset, backends, ctx).map(|(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!((c.threshold, c.shots, c.min_keep), (0.7, 6, 1));
        assert!(c.dps_enabled && c.vg_enabled);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"shot": 4}"#).is_err());
        for bad in [
            ExperimentConfig { shots: 0, ..Default::default() },
            ExperimentConfig { threshold: 1.5, ..Default::default() },
            ExperimentConfig { min_keep: 7, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(EvalError::InvalidConfig(_))));
        }
    }

    #[test]
    fn draw_is_stratified_and_seeded() {
        let labels = [0, 0, 0, 0, 0, 1];
        for seed in 0..50 {
            let d = draw_shots(&labels, 2, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(d.len(), 2);
            assert!(d.contains(&5));
            assert!(d.windows(2).all(|w| w[0] < w[1]));
        }
        let a = draw_shots(&labels, 4, &mut query_rng(3, "q"));
        assert_eq!(a, draw_shots(&labels, 4, &mut query_rng(3, "q")));
        assert_eq!(draw_shots(&labels, 6, &mut query_rng(3, "q")), [0, 1, 2, 3, 4, 5]);
        assert_eq!(draw_shots(&labels, 1, &mut query_rng(1, "q")).len(), 1);
    }
}
