use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::types::{LabFeature, TypeError};

/// One line of a chartevents export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartEventRow {
    pub patient_id: String,
    pub label: String,
    pub value: f64,
    pub unit: String,
    pub low: Option<f64>,
    pub high: Option<f64>,
}

/// A row that could not be parsed; ingestion skips it and keeps going.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MalformedRow {
    pub line: u64,
    pub message: String,
}

/// The latest observation of one lab test for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub value: f64,
    pub unit: String,
    pub low: Option<f64>,
    pub high: Option<f64>,
}

impl Observation {
    pub fn to_feature(&self, label: &str) -> Result<LabFeature, TypeError> {
        LabFeature::new(label, self.value, self.unit.clone(), self.low, self.high)
    }
}

/// Patients by lab features; cells may be missing. Rows and columns are kept
/// in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureMatrix {
    rows: BTreeMap<String, BTreeMap<String, Observation>>,
    columns: BTreeSet<String>,
}

impl FeatureMatrix {
    pub fn insert(&mut self, patient: &str, label: &str, obs: Observation) {
        self.columns.insert(label.to_string());
        self.rows.entry(patient.to_string()).or_default().insert(label.to_string(), obs);
    }

    pub fn patients(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn columns(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(String::as_str)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, patient: &str, label: &str) -> Option<&Observation> {
        self.rows.get(patient)?.get(label)
    }

    pub fn contains_patient(&self, patient: &str) -> bool {
        self.rows.contains_key(patient)
    }

    /// Values of one column in patient order.
    pub fn column(&self, label: &str) -> Vec<Option<f64>> {
        self.rows.values().map(|r| r.get(label).map(|o| o.value)).collect()
    }

    pub fn missing_cells(&self) -> usize {
        self.n_rows() * self.n_columns() - self.rows.values().map(BTreeMap::len).sum::<usize>()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub matrix: FeatureMatrix,
    pub malformed: Vec<MalformedRow>,
}

/// Fold chart events into a matrix. Later rows for the same (patient, label)
/// replace earlier ones.
pub fn ingest_chartevents<I>(rows: I) -> Ingested
where
    I: IntoIterator<Item = Result<ChartEventRow, MalformedRow>>,
{
    let mut out = Ingested::default();
    for row in rows {
        match row {
            Ok(r) => out.matrix.insert(
                &r.patient_id,
                &r.label,
                Observation { value: r.value, unit: r.unit, low: r.low, high: r.high },
            ),
            Err(m) => {
                log::warn!("skipping chartevents line {}: {}", m.line, m.message);
                out.malformed.push(m);
            }
        }
    }
    out
}

fn optional_number(field: &str, raw: &str) -> Result<Option<f64>, String> {
    let t = raw.trim();
    if t.is_empty() || t == "-" {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(format!("{field} {t:?} is not a number")),
    }
}

const CHART_COLUMNS: [&str; 6] = ["patient_id", "label", "value", "unit", "low", "high"];

fn parse_record(rec: &csv::StringRecord, idx: &[usize; 6]) -> Result<ChartEventRow, String> {
    let get = |i: usize| rec.get(idx[i]).unwrap_or("");
    let patient_id = get(0).trim().to_string();
    let label = get(1).trim().to_string();
    if patient_id.is_empty() {
        return Err("empty patient_id".into());
    }
    if label.is_empty() {
        return Err("empty label".into());
    }
    let value = optional_number("value", get(2))?.ok_or("missing value")?;
    let low = optional_number("low", get(4))?;
    let high = optional_number("high", get(5))?;
    if let (Some(l), Some(h)) = (low, high) {
        if l > h {
            return Err(format!("low {l} exceeds high {h}"));
        }
    }
    Ok(ChartEventRow { patient_id, label, value, unit: get(3).trim().to_string(), low, high })
}

/// Parse a chartevents CSV (`patient_id,label,value,unit,low,high`, header
/// required). Bad rows come back as `Err` with their line number.
pub fn read_chartevents<R: Read>(reader: R) -> Result<Vec<Result<ChartEventRow, MalformedRow>>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DatasetError::Schema(format!("chartevents header: {e}")))?.clone();
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(CHART_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::Schema(format!("chartevents header lacks column {name:?}")))?;
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        rows.push(match rec {
            Ok(rec) => parse_record(&rec, &idx).map_err(|message| MalformedRow { line, message }),
            Err(e) => Err(MalformedRow { line, message: e.to_string() }),
        });
    }
    Ok(rows)
}

pub fn read_chartevents_file(path: &Path) -> Result<Ingested, DatasetError> {
    let file = std::fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    Ok(ingest_chartevents(read_chartevents(std::io::BufReader::new(file))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(p: &str, l: &str, v: f64) -> Result<ChartEventRow, MalformedRow> {
        Ok(ChartEventRow { patient_id: p.into(), label: l.into(), value: v, unit: String::new(), low: None, high: None })
    }

    #[test]
    fn one_patient_two_labels() {
        let m = ingest_chartevents([row("p1", "QTc", 0.5), row("p1", "HDL", 40.0)]).matrix;
        assert_eq!((m.n_rows(), m.n_columns()), (1, 2));
    }

    #[test]
    fn last_observation_wins() {
        let m = ingest_chartevents([row("p1", "QTc", 0.5), row("p1", "QTc", 0.52)]).matrix;
        assert_eq!(m.get("p1", "QTc").unwrap().value, 0.52);
        assert_eq!(m.n_columns(), 1);
    }

    #[test]
    fn csv_with_missing_ranges_and_bad_rows() {
        let csv = "patient_id,label,value,unit,low,high\n\
                   p1,Tidal Volume (observed),479,mL,299,750\n\
                   p1,Minute Volume,9,L/min,-,12\n\
                   p1,Flow Rate (L/min),39.9,L/min,,\n\
                   p2,Plateau Pressure,abc,cmH2O,-,31\n\
                   p2,Plateau Pressure,24,cmH2O,-,31\n\
                   p3,QTc,0.5,sec,0.6,0.4\n";
        let rows = read_chartevents(csv.as_bytes()).unwrap();
        let ing = ingest_chartevents(rows);
        assert_eq!(ing.malformed.len(), 2);
        assert_eq!(ing.malformed[0].line, 5);
        assert_eq!(ing.malformed[1].line, 7);
        let flow = ing.matrix.get("p1", "Flow Rate (L/min)").unwrap();
        assert_eq!((flow.low, flow.high), (None, None));
        let mv = ing.matrix.get("p1", "Minute Volume").unwrap();
        assert_eq!((mv.low, mv.high), (None, Some(12.0)));
        assert_eq!(ing.matrix.n_rows(), 2);
        assert_eq!(ing.matrix.column("Plateau Pressure"), vec![None, Some(24.0)]);
        assert_eq!(ing.matrix.missing_cells(), 4);
    }

    #[test]
    fn header_is_required() {
        let err = read_chartevents("p1,QTc,0.5,sec,,\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::Schema(_)));
    }
}
