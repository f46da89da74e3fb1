use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{DatasetError, DatasetRecord, Manifest, VqaDataset};
use crate::types::{Condition, ImageRef};

/// Binary labels per condition, keyed by patient id.
pub type LabelTable = BTreeMap<Condition, BTreeMap<String, u8>>;

/// Image locator per patient id.
pub type ImageIndex = BTreeMap<String, ImageRef>;

fn open_csv(path: &Path, columns: &[&str]) -> Result<(csv::Reader<std::fs::File>, Vec<usize>), DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| DatasetError::io(path, e))?;
    let headers = rdr.headers().map_err(|e| DatasetError::io(path, e))?.clone();
    let idx = columns
        .iter()
        .map(|c| {
            headers.iter().position(|h| h.trim() == *c).ok_or_else(|| {
                DatasetError::Schema(format!("{}: header lacks column {c:?}", path.display()))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((rdr, idx))
}

fn bad_line(path: &Path, line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::BadLine { path: path.display().to_string(), line, message: message.into() }
}

/// Read `patient_id,label_name,label` rows.
pub fn read_labels(path: &Path) -> Result<LabelTable, DatasetError> {
    let (mut rdr, idx) = open_csv(path, &["patient_id", "label_name", "label"])?;
    let mut table = LabelTable::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad_line(path, line, e.to_string()))?;
        let get = |j: usize| rec.get(idx[j]).unwrap_or("").trim();
        let patient = get(0);
        if patient.is_empty() {
            return Err(bad_line(path, line, "empty patient_id"));
        }
        let condition: Condition = get(1).parse().map_err(|e: crate::types::TypeError| bad_line(path, line, e.to_string()))?;
        let label = match get(2) {
            "0" => 0,
            "1" => 1,
            other => return Err(bad_line(path, line, format!("label must be 0 or 1, got {other:?}"))),
        };
        table.entry(condition).or_default().insert(patient.to_string(), label);
    }
    Ok(table)
}

/// Read `patient_id,image_path` rows. Relative paths are resolved against the
/// directory holding the index file.
pub fn read_image_index(path: &Path) -> Result<ImageIndex, DatasetError> {
    let (mut rdr, idx) = open_csv(path, &["patient_id", "image_path"])?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut index = ImageIndex::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad_line(path, line, e.to_string()))?;
        let patient = rec.get(idx[0]).unwrap_or("").trim();
        let image = rec.get(idx[1]).unwrap_or("").trim();
        if patient.is_empty() || image.is_empty() {
            return Err(bad_line(path, line, "empty patient_id or image_path"));
        }
        let p = Path::new(image);
        let resolved = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        index.insert(patient.to_string(), ImageRef::new(resolved.to_string_lossy()));
    }
    Ok(index)
}

/// `data/vqa.jsonl` -> `data/vqa.manifest.json`.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    let stem = dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    dataset.with_file_name(format!("{stem}.manifest.json"))
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), DatasetError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| DatasetError::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| DatasetError::io(path, e))?;
    tmp.persist(path).map_err(|e| DatasetError::io(path, e.error))?;
    Ok(())
}

/// Write the records as JSONL and the manifest next to them.
pub fn write_dataset(dataset: &VqaDataset, path: &Path) -> Result<(), DatasetError> {
    let mut body = Vec::new();
    for r in &dataset.records {
        serde_json::to_writer(&mut body, r).map_err(|e| DatasetError::io(path, e))?;
        body.push(b'\n');
    }
    write_atomic(path, &body)?;
    let mpath = manifest_path(path);
    let mut manifest = serde_json::to_vec_pretty(&dataset.manifest).map_err(|e| DatasetError::io(&mpath, e))?;
    manifest.push(b'\n');
    write_atomic(&mpath, &manifest)
}

pub fn read_dataset(path: &Path) -> Result<VqaDataset, DatasetError> {
    let file = std::fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| bad_line(path, line_no, e.to_string()))?;
        records.push(rec);
    }
    let mpath = manifest_path(path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| DatasetError::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DatasetError::io(&mpath, e))?;
    let dataset = VqaDataset { records, manifest };
    dataset.validate(dataset.manifest.k)?;
    Ok(dataset)
}
