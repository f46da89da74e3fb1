//! Deterministic stand-ins for the model capabilities.
//!
//! Every output is a pure function of `(input, seed)`:
//! - text embeddings sum a seeded pseudo-random vector per token (feature hashing),
//! - image embeddings project a coarse intensity grid through a seeded random
//!   matrix, so images with similar layouts land close together,
//! - the detector proposes the brightest cells of a 4x4 grid,
//! - the generator echoes the answer of the shot right before the query.
//!
//! All embeddings are L2-normalized.

use image::DynamicImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_image_bytes, BackendError, Detector, GenerateRequest, Generator, ImageEmbedder, TextEmbedder};
use crate::grounding::{BBox, Detection};
use crate::prompt::{NEGATIVE_ANSWER, POSITIVE_ANSWER};
use crate::types::{Embedding, ImageRef};

const EMBED_GRID: u32 = 8;
const DETECT_GRID: u32 = 4;
const MAX_DETECTIONS: usize = 3;
/// Cells scoring below this fraction of the best cell are not proposed.
const DETECT_RELATIVE_FLOOR: f64 = 0.6;
pub const UNSURE_ANSWER: &str = "I cannot determine the answer from the given examples.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockConfig {
    pub seed: u64,
    pub embedding_dim: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig { seed: 0, embedding_dim: 64 }
    }
}

impl MockConfig {
    pub fn new(seed: u64) -> Self {
        MockConfig { seed, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    config: MockConfig,
    /// Row-major `embedding_dim x (EMBED_GRID^2 + 1)`.
    projection: Vec<f64>,
}

fn keyed_rng(seed: u64, tag: &str, content: &[u8]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(content);
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

fn normalized(mut v: Vec<f64>) -> Result<Embedding, BackendError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(BackendError::Backend("mock produced a degenerate embedding".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Embedding::new(v).map_err(|e| BackendError::Backend(e.to_string()))
}

/// Mean luma per cell of a `grid x grid` partition, in `[0, 1]`. Every cell
/// covers at least one pixel, so images smaller than the grid still work.
fn cell_means(img: &DynamicImage, grid: u32) -> Vec<f64> {
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    let span = |c: u32, n: u32| {
        let start = (c * n / grid).min(n - 1);
        let end = ((c + 1) * n / grid).max(start + 1);
        (start, end)
    };
    let mut out = Vec::with_capacity((grid * grid) as usize);
    for gy in 0..grid {
        let (y0, y1) = span(gy, h);
        for gx in 0..grid {
            let (x0, x1) = span(gx, w);
            let mut sum = 0u64;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += u64::from(luma.get_pixel(x, y).0[0]);
                }
            }
            let n = u64::from((y1 - y0) * (x1 - x0));
            out.push(sum as f64 / n as f64 / 255.0);
        }
    }
    out
}

impl MockBackend {
    pub fn new(config: MockConfig) -> Self {
        let features = (EMBED_GRID * EMBED_GRID + 1) as usize;
        let mut rng = keyed_rng(config.seed, "image-projection", &[]);
        let projection = (0..config.embedding_dim * features).map(|_| rng.gen_range(-1.0..1.0)).collect();
        MockBackend { config, projection }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    fn check_dim(&self) -> Result<(), BackendError> {
        if self.config.embedding_dim < 2 {
            return Err(BackendError::InvalidInput(format!(
                "embedding_dim must be at least 2, got {}",
                self.config.embedding_dim
            )));
        }
        Ok(())
    }

    fn hashed_vector(&self, tag: &str, content: &[u8]) -> Vec<f64> {
        let mut rng = keyed_rng(self.config.seed, tag, content);
        (0..self.config.embedding_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    pub fn embed_text_str(&self, text: &str) -> Result<Embedding, BackendError> {
        self.check_dim()?;
        let tokens: Vec<String> = text
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect();
        if tokens.is_empty() {
            return Err(BackendError::InvalidInput("text to embed is empty".into()));
        }
        let mut acc = vec![0.0; self.config.embedding_dim];
        for t in &tokens {
            for (a, v) in acc.iter_mut().zip(self.hashed_vector("text-token", t.as_bytes())) {
                *a += v;
            }
        }
        normalized(acc)
    }

    /// Embed encoded image bytes. Undecodable bytes are hashed instead.
    pub fn embed_image_bytes(&self, bytes: &[u8]) -> Result<Embedding, BackendError> {
        self.check_dim()?;
        if bytes.is_empty() {
            return Err(BackendError::InvalidInput("image payload is empty".into()));
        }
        let Ok(img) = image::load_from_memory(bytes) else {
            return normalized(self.hashed_vector("image-bytes", bytes));
        };
        let mut features: Vec<f64> = cell_means(&img, EMBED_GRID).into_iter().map(|m| m - 0.5).collect();
        features.push(0.25);
        let cols = features.len();
        let v = self
            .projection
            .chunks(cols)
            .map(|row| row.iter().zip(&features).map(|(r, f)| r * f).sum())
            .collect();
        normalized(v)
    }

    pub fn detect_bytes(&self, bytes: &[u8], condition_text: &str) -> Result<Vec<Detection>, BackendError> {
        if condition_text.trim().is_empty() {
            return Err(BackendError::InvalidInput("detection query is empty".into()));
        }
        let img = image::load_from_memory(bytes)
            .map_err(|e| BackendError::Backend(format!("cannot decode image: {e}")))?;
        let (w, h) = (i64::from(img.width()), i64::from(img.height()));
        let whole = |score: f64| -> Result<Vec<Detection>, BackendError> {
            let b = BBox::new(0, 0, w, h).map_err(|e| BackendError::Backend(e.to_string()))?;
            Ok(vec![Detection { bbox: b, score }])
        };
        let grid = i64::from(DETECT_GRID);
        let means = cell_means(&img, DETECT_GRID);
        if w < grid || h < grid {
            return whole(means.iter().copied().fold(0.0, f64::max));
        }

        let mut key = condition_text.as_bytes().to_vec();
        key.extend_from_slice(&Sha256::digest(bytes));
        let mut rng = keyed_rng(self.config.seed, "detect", &key);
        let scored: Vec<(usize, f64)> = means
            .iter()
            .enumerate()
            .map(|(i, m)| (i, (m + rng.gen_range(0.0..0.01)).clamp(0.0, 1.0)))
            .collect();
        let best = scored.iter().map(|(_, s)| *s).fold(0.0, f64::max);
        let mut ranked = scored;
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut out = Vec::new();
        for (i, score) in ranked.into_iter().take(MAX_DETECTIONS) {
            if !out.is_empty() && score < best * DETECT_RELATIVE_FLOOR {
                break;
            }
            let (gx, gy) = (i as i64 % grid, i as i64 / grid);
            let bbox = BBox {
                x0: gx * w / grid,
                y0: gy * h / grid,
                x1: (gx + 1) * w / grid,
                y1: (gy + 1) * h / grid,
            };
            out.push(Detection { bbox, score });
        }
        Ok(out)
    }

    /// The nearest-shot echo over the text segments of a prompt: the last
    /// segment is the query question, and the answer is the last "yes"/"no"
    /// segment before it.
    pub fn generate_from_texts<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> String {
        let texts: Vec<&str> = texts.into_iter().collect();
        let Some((_, before_query)) = texts.split_last() else {
            return UNSURE_ANSWER.to_string();
        };
        before_query
            .iter()
            .rev()
            .map(|t| t.trim())
            .find_map(|t| {
                if t.eq_ignore_ascii_case(POSITIVE_ANSWER) {
                    Some(POSITIVE_ANSWER)
                } else if t.eq_ignore_ascii_case(NEGATIVE_ANSWER) {
                    Some(NEGATIVE_ANSWER)
                } else {
                    None
                }
            })
            .unwrap_or(UNSURE_ANSWER)
            .to_string()
    }
}

impl TextEmbedder for MockBackend {
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        self.embed_text_str(text)
    }
}

impl ImageEmbedder for MockBackend {
    fn embed_image(&self, image: &ImageRef) -> Result<Embedding, BackendError> {
        self.embed_image_bytes(&read_image_bytes(image)?)
    }
}

impl Detector for MockBackend {
    fn detect(&self, image: &ImageRef, condition_text: &str) -> Result<Vec<Detection>, BackendError> {
        self.detect_bytes(&read_image_bytes(image)?, condition_text)
    }
}

impl Generator for MockBackend {
    fn generate(&self, request: &GenerateRequest) -> Result<String, BackendError> {
        if request.max_new_tokens == 0 {
            return Err(BackendError::InvalidInput("max_new_tokens must be at least 1".into()));
        }
        Ok(self.generate_from_texts(request.segments.texts()))
    }
}
