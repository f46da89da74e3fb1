//! Dynamic proximity selection: score every candidate shot against the query,
//! drop those under the threshold, and order the rest so the closest shot
//! ends up directly in front of the query.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::{fused_score, SimilarityError, SimilarityScore};
use crate::types::{Candidate, EmbeddedSample, Modality};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DpsError {
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("threshold {0} outside [-1, 1]")]
    InvalidThreshold(f64),
    #[error("thresholds must be sorted ascending")]
    UnsortedThresholds,
    #[error("min_keep must be between 1 and the pool size ({pool}), got {min_keep}")]
    InvalidMinKeep { min_keep: usize, pool: usize },
    #[error("scoring candidate {index}: {source}")]
    Similarity { index: usize, source: SimilarityError },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpsConfig {
    pub threshold: f64,
    pub modality: Modality,
    pub min_keep: usize,
}

impl Default for DpsConfig {
    fn default() -> Self {
        DpsConfig { threshold: 0.7, modality: Modality::Multimodal, min_keep: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    pub embedded: EmbeddedSample,
    pub score: SimilarityScore,
    /// Position in the input pool; breaks score ties.
    pub original_index: usize,
}

/// Retained shots, ascending by score. The last shot is the most similar.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptOrder {
    shots: Vec<ScoredCandidate>,
}

impl PromptOrder {
    pub fn shots(&self) -> &[ScoredCandidate] {
        &self.shots
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        self.shots.iter().map(|s| s.candidate.clone()).collect()
    }

    pub fn nearest(&self) -> Option<&ScoredCandidate> {
        self.shots.last()
    }

    pub fn into_shots(self) -> Vec<ScoredCandidate> {
        self.shots
    }
}

fn check_threshold(th: f64) -> Result<(), DpsError> {
    if th.is_finite() && (-1.0..=1.0).contains(&th) {
        Ok(())
    } else {
        Err(DpsError::InvalidThreshold(th))
    }
}

fn score_all(
    pool: &[(Candidate, EmbeddedSample)],
    query: &EmbeddedSample,
    modality: Modality,
) -> Result<Vec<SimilarityScore>, DpsError> {
    if pool.is_empty() {
        return Err(DpsError::EmptyPool);
    }
    pool.iter()
        .enumerate()
        .map(|(index, (_, emb))| {
            fused_score(query, emb, modality).map_err(|source| DpsError::Similarity { index, source })
        })
        .collect()
}

/// Ascending by score, ties by ascending pool index.
fn ascending(scores: &[SimilarityScore], keep: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| keep(i)).collect();
    idx.sort_by(|&a, &b| scores[a].value().total_cmp(&scores[b].value()).then(a.cmp(&b)));
    idx
}

/// Indices of the `n` best-scoring candidates (ties by lower pool index).
fn top_n(scores: &[SimilarityScore], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].value().total_cmp(&scores[a].value()).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

fn retained_indices(scores: &[SimilarityScore], threshold: f64, min_keep: usize) -> Vec<usize> {
    let kept = ascending(scores, |i| scores[i].value() >= threshold);
    if kept.len() >= min_keep {
        return kept;
    }
    let floor = top_n(scores, min_keep);
    ascending(scores, |i| floor.contains(&i))
}

/// Select and order few-shot candidates for one query.
pub fn dps_select(
    pool: &[(Candidate, EmbeddedSample)],
    query: &EmbeddedSample,
    config: &DpsConfig,
) -> Result<PromptOrder, DpsError> {
    check_threshold(config.threshold)?;
    if pool.is_empty() {
        return Err(DpsError::EmptyPool);
    }
    if config.min_keep == 0 || config.min_keep > pool.len() {
        return Err(DpsError::InvalidMinKeep { min_keep: config.min_keep, pool: pool.len() });
    }
    let scores = score_all(pool, query, config.modality)?;
    let shots = retained_indices(&scores, config.threshold, config.min_keep)
        .into_iter()
        .map(|i| ScoredCandidate {
            candidate: pool[i].0.clone(),
            embedded: pool[i].1.clone(),
            score: scores[i],
            original_index: i,
        })
        .collect();
    Ok(PromptOrder { shots })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetentionPoint {
    pub threshold: f64,
    /// Shots retained after the one-shot floor.
    pub kept: usize,
    /// Candidates at or above the threshold, before the floor.
    pub raw_kept: usize,
}

/// Retained-shot counts across a threshold sweep (ascending thresholds).
pub fn retention_curve(
    pool: &[(Candidate, EmbeddedSample)],
    query: &EmbeddedSample,
    thresholds: &[f64],
    modality: Modality,
) -> Result<Vec<RetentionPoint>, DpsError> {
    for &th in thresholds {
        check_threshold(th)?;
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(DpsError::UnsortedThresholds);
    }
    let scores = score_all(pool, query, modality)?;
    Ok(thresholds
        .iter()
        .map(|&threshold| {
            let raw_kept = scores.iter().filter(|s| s.value() >= threshold).count();
            RetentionPoint { threshold, kept: raw_kept.max(1), raw_kept }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Condition, Embedding, ImageRef, Record};

    fn cand(id: &str) -> Candidate {
        Candidate::new(Record::new(id, ImageRef::new(format!("{id}.png")), vec![], Condition::Edema, 0).unwrap())
    }

    /// Unit 2-d text embedding whose cosine with [1, 0] is exactly `s`-ish.
    fn at(s: f64) -> EmbeddedSample {
        EmbeddedSample::text_only(Embedding::new(vec![s, (1.0 - s * s).sqrt()]).unwrap())
    }

    fn query() -> EmbeddedSample {
        EmbeddedSample::text_only(Embedding::new(vec![1.0, 0.0]).unwrap())
    }

    fn cfg(th: f64) -> DpsConfig {
        DpsConfig { threshold: th, modality: Modality::Text, min_keep: 1 }
    }

    fn ids(order: &PromptOrder) -> Vec<String> {
        order.shots().iter().map(|s| s.candidate.record.id.clone()).collect()
    }

    #[test]
    fn filters_and_orders_most_similar_last() {
        let pool = vec![(cand("c1"), at(0.9)), (cand("c2"), at(0.7)), (cand("c3"), at(0.5))];
        // the 0.7 candidate sits exactly on the threshold; nudge threshold to the
        // computed score so the inclusive comparison is what is tested
        let s2 = fused_score(&query(), &pool[1].1, Modality::Text).unwrap().value();
        let out = dps_select(&pool, &query(), &cfg(s2)).unwrap();
        assert_eq!(ids(&out), ["c2", "c1"]);
        assert_eq!(out.nearest().unwrap().candidate.record.id, "c1");
        let out = dps_select(&pool, &query(), &cfg(0.7)).unwrap();
        assert_eq!(ids(&out), ["c2", "c1"]);
    }

    #[test]
    fn floor_keeps_best_when_everything_filtered() {
        let pool = vec![(cand("c1"), at(0.4)), (cand("c2"), at(0.3))];
        let out = dps_select(&pool, &query(), &cfg(0.7)).unwrap();
        assert_eq!(ids(&out), ["c1"]);
        let two = DpsConfig { min_keep: 2, ..cfg(0.7) };
        assert_eq!(ids(&dps_select(&pool, &query(), &two).unwrap()), ["c2", "c1"]);
    }

    #[test]
    fn ties_broken_by_pool_index() {
        let pool = vec![(cand("a"), at(0.8)), (cand("b"), at(0.8)), (cand("c"), at(0.9))];
        let out = dps_select(&pool, &query(), &cfg(-1.0)).unwrap();
        assert_eq!(ids(&out), ["a", "b", "c"]);
        let floor = DpsConfig { min_keep: 1, ..cfg(0.95) };
        let pool = vec![(cand("a"), at(0.8)), (cand("b"), at(0.8))];
        assert_eq!(ids(&dps_select(&pool, &query(), &floor).unwrap()), ["a"]);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(dps_select(&[], &query(), &cfg(0.7)), Err(DpsError::EmptyPool));
        let pool = vec![(cand("a"), at(0.8))];
        assert_eq!(dps_select(&pool, &query(), &cfg(1.0 + 1e-9)), Err(DpsError::InvalidThreshold(1.0 + 1e-9)));
        let bad = DpsConfig { min_keep: 2, ..cfg(0.5) };
        assert!(matches!(dps_select(&pool, &query(), &bad), Err(DpsError::InvalidMinKeep { .. })));
        let mismatched = vec![(cand("a"), EmbeddedSample::text_only(Embedding::new(vec![1.0; 3]).unwrap()))];
        assert!(matches!(
            dps_select(&mismatched, &query(), &cfg(0.5)),
            Err(DpsError::Similarity { index: 0, .. })
        ));
    }

    #[test]
    fn retention_examples() {
        let pool = vec![(cand("c1"), at(0.9)), (cand("c2"), at(0.7)), (cand("c3"), at(0.5))];
        let curve = retention_curve(&pool, &query(), &[-1.0], Modality::Text).unwrap();
        assert_eq!(curve[0].kept, 3);
        let curve = retention_curve(&pool, &query(), &[0.6, 0.8], Modality::Text).unwrap();
        let pairs: Vec<(f64, usize)> = curve.iter().map(|p| (p.threshold, p.kept)).collect();
        assert_eq!(pairs, [(0.6, 2), (0.8, 1)]);
        let curve = retention_curve(&pool, &query(), &[0.95], Modality::Text).unwrap();
        assert_eq!((curve[0].raw_kept, curve[0].kept), (0, 1));
        assert!(matches!(
            retention_curve(&pool, &query(), &[1.0 + f64::EPSILON * 4.0], Modality::Text),
            Err(DpsError::InvalidThreshold(_))
        ));
        assert_eq!(
            retention_curve(&pool, &query(), &[0.8, 0.6], Modality::Text),
            Err(DpsError::UnsortedThresholds)
        );
    }
}
