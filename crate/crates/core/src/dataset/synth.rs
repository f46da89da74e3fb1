//! Seeded synthetic chartevents, chest-image stand-ins and labels.
//!
//! Each patient has at most one finding. A positive patient's image carries a
//! bright textured block in a grid cell specific to the condition, and a few
//! lab features per condition are shifted for positives, so both the image and
//! the lab channels carry label signal.

use std::collections::BTreeSet;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ChartEventRow, DatasetError};
use crate::types::Condition;

pub const IMAGE_SIZE: u32 = 64;
const BLOCK: u32 = IMAGE_SIZE / 4;

/// (label, unit, mean, sd, low, high)
type LabSpec = (&'static str, &'static str, f64, f64, Option<f64>, Option<f64>);

const LAB_TABLE: [LabSpec; 18] = [
    ("QTc", "sec", 0.43, 0.03, None, Some(0.45)),
    ("Minute Volume", "L/min", 8.0, 2.0, None, Some(12.0)),
    ("Tidal Volume (observed)", "mL", 480.0, 80.0, Some(299.0), Some(750.0)),
    ("Flow Rate (L/min)", "L/min", 40.0, 8.0, None, None),
    ("Plateau Pressure", "cmH2O", 22.0, 4.0, None, Some(31.0)),
    ("HDL", "mg/dL", 50.0, 12.0, Some(40.0), Some(60.0)),
    ("LDL measured", "mg/dL", 110.0, 30.0, None, Some(130.0)),
    ("Cholesterol", "mg/dL", 180.0, 35.0, None, Some(200.0)),
    ("D-Dimer", "ng/mL", 800.0, 300.0, None, Some(500.0)),
    ("Uric Acid", "mg/dL", 5.5, 1.5, Some(3.4), Some(7.0)),
    ("Total Bilirubin", "mg/dL", 0.9, 0.4, Some(0.1), Some(1.2)),
    ("Ionized Calcium", "mmol/L", 1.15, 0.08, Some(1.12), Some(1.32)),
    ("Glucose", "mg/dL", 120.0, 30.0, Some(70.0), Some(100.0)),
    ("Troponin-T", "ng/mL", 0.05, 0.03, None, Some(0.01)),
    ("Serum Osmolality", "mOsm/kg", 290.0, 8.0, Some(275.0), Some(295.0)),
    ("Temperature Celsius", "°C", 37.0, 0.6, None, None),
    ("Venous CO2 Pressure", "mmHg", 45.0, 5.0, Some(41.0), Some(51.0)),
    ("PeCO2", "mmHg", 30.0, 5.0, None, None),
];

/// Grid cell (of the 4x4 partition) holding each condition's planted block.
const BLOCK_CELLS: [u32; 12] = [5, 10, 0, 15, 6, 9, 3, 12, 1, 14, 7, 8];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub n_features: usize,
    pub labels: Vec<Condition>,
    /// Probability that a (patient, feature) cell is absent.
    pub missingness: f64,
    /// Features per label whose mean shifts for positives.
    pub planted_per_label: usize,
    /// Probability that an observed cell is preceded by a stale reading.
    pub duplicate_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_patients: 60,
            n_features: 12,
            labels: vec![Condition::Cardiomegaly, Condition::Edema, Condition::Pneumonia],
            missingness: 0.1,
            planted_per_label: 2,
            duplicate_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub patient_id: String,
    /// Relative to the output directory.
    pub rel_path: String,
    pub png: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub rows: Vec<ChartEventRow>,
    pub images: Vec<SynthImage>,
    /// (patient, condition, label), one per patient per condition.
    pub labels: Vec<(String, Condition, u8)>,
    /// Features planted for each condition, in `labels` order.
    pub planted: Vec<(Condition, Vec<String>)>,
    /// Feature names in column order.
    pub features: Vec<String>,
}

impl SynthData {
    /// Distinct (patient, feature) cells that received at least one reading.
    pub fn observed_cells(&self) -> usize {
        self.rows.iter().map(|r| (&r.patient_id, &r.label)).collect::<BTreeSet<_>>().len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPaths {
    pub chartevents: PathBuf,
    pub images: PathBuf,
    pub labels: PathBuf,
}

fn lab_spec(i: usize) -> LabSpec {
    LAB_TABLE.get(i).copied().unwrap_or(("", "", 50.0, 10.0, None, None))
}

fn feature_name(i: usize) -> String {
    match LAB_TABLE.get(i) {
        Some(s) => s.0.to_string(),
        None => format!("Lab Test {}", i + 1),
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Round to a resolution a little finer than `sd`.
fn round_for(v: f64, sd: f64) -> f64 {
    let decimals = (1 - sd.log10().floor() as i32).clamp(0, 6);
    let p = 10f64.powi(decimals);
    let r = (v * p).round() / p;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn render_image(rng: &mut ChaCha8Rng, finding: Option<Condition>) -> Vec<u8> {
    let mut img = GrayImage::from_fn(IMAGE_SIZE, IMAGE_SIZE, |_, _| Luma([rng.gen_range(20..=70u8)]));
    if let Some(c) = finding {
        let cell = BLOCK_CELLS[c.index()];
        let (cx, cy) = ((cell % 4) * BLOCK, (cell / 4) * BLOCK);
        let period = 2 + (c.index() as u32 % 3);
        for dy in 0..BLOCK {
            for dx in 0..BLOCK {
                let phase = if c.index() % 2 == 0 { dx } else { dy };
                let v = if (phase / period).is_multiple_of(2) { 250 } else { 110 };
                img.put_pixel(cx + dx, cy + dy, Luma([v]));
            }
        }
    }
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn synth_generate(config: &SynthConfig) -> Result<SynthData, DatasetError> {
    if config.n_patients < 4 {
        return Err(DatasetError::InvalidParams(format!("need at least 4 patients, got {}", config.n_patients)));
    }
    if config.n_features < 2 {
        return Err(DatasetError::InvalidParams(format!("need at least 2 features, got {}", config.n_features)));
    }
    if config.labels.is_empty() {
        return Err(DatasetError::InvalidParams("need at least one label".into()));
    }
    if config.labels.iter().collect::<BTreeSet<_>>().len() != config.labels.len() {
        return Err(DatasetError::InvalidParams("labels must be distinct".into()));
    }
    for (name, p) in [("missingness", config.missingness), ("duplicate rate", config.duplicate_rate)] {
        if !(0.0..1.0).contains(&p) {
            return Err(DatasetError::InvalidParams(format!("{name} must lie in [0, 1), got {p}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_labels = config.labels.len();

    // findings cycle through "none" and every label, then get shuffled
    let mut findings: Vec<Option<Condition>> = (0..config.n_patients)
        .map(|i| match i % (n_labels + 1) {
            0 => None,
            j => Some(config.labels[j - 1]),
        })
        .collect();
    findings.shuffle(&mut rng);

    let features: Vec<String> = (0..config.n_features).map(feature_name).collect();
    // feature f is planted for label f / planted_per_label, with alternating shift sign
    let planted_for = |f: usize| -> Option<(usize, f64)> {
        let p = config.planted_per_label;
        if p == 0 || f >= p * n_labels {
            return None;
        }
        Some((f / p, if f.is_multiple_of(2) { 2.0 } else { -1.5 }))
    };
    let planted = config
        .labels
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let names = (0..config.n_features).filter(|&f| planted_for(f).map(|(l, _)| l) == Some(j)).map(|f| features[f].clone()).collect();
            (*c, names)
        })
        .collect();

    let mut rows = Vec::new();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (i, finding) in findings.iter().enumerate() {
        let patient = format!("P{i:04}");
        for (f, name) in features.iter().enumerate() {
            let (_, unit, mean, sd, low, high) = lab_spec(f);
            // draw every random number even for missing cells so the stream
            // does not depend on which cells end up missing
            let z = normal(&mut rng);
            let stale = normal(&mut rng);
            let missing = rng.gen_bool(config.missingness);
            let duplicate = rng.gen_bool(config.duplicate_rate);
            if missing {
                continue;
            }
            let shift = match (planted_for(f), finding) {
                (Some((j, s)), Some(c)) if config.labels[j] == *c => s,
                _ => 0.0,
            };
            let value = round_for((mean + sd * (z + shift)).max(0.0), sd);
            let row = |v: f64| ChartEventRow { patient_id: patient.clone(), label: name.clone(), value: v, unit: unit.to_string(), low, high };
            if duplicate {
                rows.push(row(round_for((mean + sd * stale).max(0.0), sd)));
            }
            rows.push(row(value));
        }
        let rel_path = format!("images/{patient}.png");
        images.push(SynthImage { patient_id: patient.clone(), rel_path, png: render_image(&mut rng, *finding) });
        for c in &config.labels {
            labels.push((patient.clone(), *c, u8::from(*finding == Some(*c))));
        }
    }
    Ok(SynthData { rows, images, labels, planted, features })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> DatasetError + '_ {
    move |e| DatasetError::io(path, e)
}

fn opt(v: Option<f64>) -> String {
    v.map(super::format_value).unwrap_or_else(|| "-".into())
}

/// Write `chartevents.csv`, `images.csv`, `labels.csv` and `images/*.png`
/// under `dir`.
pub fn write_synth(data: &SynthData, dir: &Path) -> Result<SynthPaths, DatasetError> {
    let image_dir = dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|e| DatasetError::io(&image_dir, e))?;
    let paths = SynthPaths {
        chartevents: dir.join("chartevents.csv"),
        images: dir.join("images.csv"),
        labels: dir.join("labels.csv"),
    };

    let p = &paths.chartevents;
    let mut w = csv::Writer::from_path(p).map_err(csv_err(p))?;
    w.write_record(["patient_id", "label", "value", "unit", "low", "high"]).map_err(csv_err(p))?;
    for r in &data.rows {
        w.write_record([&r.patient_id, &r.label, &super::format_value(r.value), &r.unit, &opt(r.low), &opt(r.high)])
            .map_err(csv_err(p))?;
    }
    w.flush().map_err(|e| DatasetError::io(p, e))?;

    let p = &paths.images;
    let mut w = csv::Writer::from_path(p).map_err(csv_err(p))?;
    w.write_record(["patient_id", "image_path"]).map_err(csv_err(p))?;
    for img in &data.images {
        let target = dir.join(&img.rel_path);
        std::fs::write(&target, &img.png).map_err(|e| DatasetError::io(&target, e))?;
        w.write_record([&img.patient_id, &img.rel_path]).map_err(csv_err(p))?;
    }
    w.flush().map_err(|e| DatasetError::io(p, e))?;

    let p = &paths.labels;
    let mut w = csv::Writer::from_path(p).map_err(csv_err(p))?;
    w.write_record(["patient_id", "label_name", "label"]).map_err(csv_err(p))?;
    for (patient, c, y) in &data.labels {
        w.write_record([patient.as_str(), c.name(), &y.to_string()]).map_err(csv_err(p))?;
    }
    w.flush().map_err(|e| DatasetError::io(p, e))?;
    Ok(paths)
}
