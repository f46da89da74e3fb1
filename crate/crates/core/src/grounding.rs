//! Visual grounding: ask a zero-shot detector where a finding is, keep the
//! highest-scoring region and crop the image to it.

use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::{ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{BackendError, Detector};
use crate::types::ImageRef;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundingError {
    #[error("detector returned no regions")]
    NoDetections,
    #[error("box {0:?} does not intersect the {1}x{2} image")]
    BoxOutsideImage(BBox, u32, u32),
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("grounding query must be non-empty")]
    EmptyQuery,
    #[error("decoding {path}: {message}")]
    ImageDecodeFailure { path: String, message: String },
    #[error("writing crop {path}: {message}")]
    Io { path: String, message: String },
    #[error("detector failed for {image}: {source}")]
    Backend { image: String, source: BackendError },
}

/// Pixel rectangle, `x1`/`y1` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl BBox {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Result<Self, GroundingError> {
        if x0 >= x1 || y0 >= y1 {
            return Err(GroundingError::InvalidDetection(format!(
                "degenerate box ({x0},{y0},{x1},{y1})"
            )));
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    pub fn as_array(&self) -> [i64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Result<Self, GroundingError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(GroundingError::InvalidDetection(format!("score {score} outside [0, 1]")));
        }
        Ok(Detection { bbox, score })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundingQuery {
    condition_text: String,
}

impl GroundingQuery {
    pub fn new(condition_text: impl Into<String>) -> Result<Self, GroundingError> {
        let condition_text = condition_text.into();
        if condition_text.trim().is_empty() {
            return Err(GroundingError::EmptyQuery);
        }
        Ok(GroundingQuery { condition_text })
    }

    pub fn text(&self) -> &str {
        &self.condition_text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedImage {
    pub source_ref: ImageRef,
    /// Crop rectangle after padding and clamping.
    pub bbox: BBox,
    pub padding_px: u32,
    pub image_ref: ImageRef,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundingOutcome {
    Grounded(GroundedImage),
    /// Grounding disabled; the original image is used.
    Passthrough(ImageRef),
    /// The detector found nothing; the original image is used.
    Miss(ImageRef),
}

impl GroundingOutcome {
    pub fn image_ref(&self) -> &ImageRef {
        match self {
            GroundingOutcome::Grounded(g) => &g.image_ref,
            GroundingOutcome::Passthrough(r) | GroundingOutcome::Miss(r) => r,
        }
    }

    pub fn is_miss(&self) -> bool {
        matches!(self, GroundingOutcome::Miss(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundingConfig {
    pub enabled: bool,
    pub padding_px: u32,
    pub crop_dir: PathBuf,
}

impl GroundingConfig {
    pub fn new(enabled: bool, crop_dir: impl Into<PathBuf>) -> Self {
        GroundingConfig { enabled, padding_px: 0, crop_dir: crop_dir.into() }
    }
}

/// Highest-scoring detection; the earliest one wins a tie.
pub fn select_region(detections: &[Detection]) -> Result<&Detection, GroundingError> {
    let mut best: Option<&Detection> = None;
    for d in detections {
        if best.is_none_or(|b| d.score > b.score) {
            best = Some(d);
        }
    }
    best.ok_or(GroundingError::NoDetections)
}

/// Expand `bbox` by `padding` on every side and clamp to the image.
pub fn crop_rect(width: u32, height: u32, bbox: BBox, padding: u32) -> Result<BBox, GroundingError> {
    let (w, h) = (i64::from(width), i64::from(height));
    if bbox.x1 <= 0 || bbox.y1 <= 0 || bbox.x0 >= w || bbox.y0 >= h {
        return Err(GroundingError::BoxOutsideImage(bbox, width, height));
    }
    let p = i64::from(padding);
    Ok(BBox {
        x0: (bbox.x0 - p).clamp(0, w),
        y0: (bbox.y0 - p).clamp(0, h),
        x1: (bbox.x1 + p).clamp(0, w),
        y1: (bbox.y1 + p).clamp(0, h),
    })
}

pub(crate) fn decode(path: &Path) -> Result<image::DynamicImage, GroundingError> {
    let fail = |message: String| GroundingError::ImageDecodeFailure { path: path.display().to_string(), message };
    ImageReader::open(path)
        .map_err(|e| fail(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| fail(e.to_string()))?
        .decode()
        .map_err(|e| fail(e.to_string()))
}

fn crop_file_name(source: &ImageRef, rect: &BBox) -> String {
    let stem = source.as_path().file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let digest = Sha256::digest(source.as_str().as_bytes());
    let tag: String = digest.iter().take(4).map(|b| format!("{b:02x}")).collect();
    format!("{stem}-{tag}-{}_{}_{}_{}.png", rect.x0, rect.y0, rect.x1, rect.y1)
}

/// Crop `image` to `bbox` (plus padding) and write the result as PNG under `out_dir`.
///
/// The output name is derived from the source path and rectangle, so the same
/// crop always lands at the same path. Writes go through a temp file + rename
/// so concurrent identical crops never expose a partial file.
pub fn crop(image: &ImageRef, bbox: BBox, padding_px: u32, out_dir: &Path) -> Result<GroundedImage, GroundingError> {
    let img = decode(image.as_path())?;
    let rect = crop_rect(img.width(), img.height(), bbox, padding_px)?;
    let cropped = img.crop_imm(rect.x0 as u32, rect.y0 as u32, rect.width() as u32, rect.height() as u32);

    let io = |path: &Path, e: &dyn std::fmt::Display| GroundingError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| io(out_dir, &e))?;
    let target = out_dir.join(crop_file_name(image, &rect));
    let tmp = tempfile::NamedTempFile::new_in(out_dir).map_err(|e| io(out_dir, &e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        cropped.write_to(&mut w, ImageFormat::Png).map_err(|e| io(&target, &e))?;
    }
    tmp.persist(&target).map_err(|e| io(&target, &e.error))?;

    Ok(GroundedImage {
        source_ref: image.clone(),
        bbox: rect,
        padding_px,
        image_ref: ImageRef::new(target.to_string_lossy().into_owned()),
    })
}

/// Ground one image for one condition. Disabled grounding and detector misses
/// both fall back to the original image.
pub fn ground(
    image: &ImageRef,
    query: &GroundingQuery,
    detector: &dyn Detector,
    config: &GroundingConfig,
) -> Result<GroundingOutcome, GroundingError> {
    if !config.enabled {
        return Ok(GroundingOutcome::Passthrough(image.clone()));
    }
    let detections = detector
        .detect(image, query.text())
        .map_err(|source| GroundingError::Backend { image: image.to_string(), source })?;
    match select_region(&detections) {
        Ok(best) => crop(image, best.bbox, config.padding_px, &config.crop_dir).map(GroundingOutcome::Grounded),
        Err(GroundingError::NoDetections) => {
            log::warn!("grounding miss: no regions for {:?} in {image}", query.text());
            Ok(GroundingOutcome::Miss(image.clone()))
        }
        Err(e) => Err(e),
    }
}
