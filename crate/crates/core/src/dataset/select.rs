use serde::{Deserialize, Serialize};

use super::{DatasetError, FeatureMatrix};

/// Pearson correlation of two columns after pairwise deletion of missing cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Complete pairs used.
    pub n: usize,
    /// One side had zero variance; `r` is reported as 0.
    pub constant: bool,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, DatasetError> {
    if x.len() != y.len() {
        return Err(DatasetError::LengthMismatch { left: x.len(), right: y.len() });
    }
    let pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pearson_pairs(&pairs)
}

pub fn pearson_pairwise(x: &[Option<f64>], y: &[Option<f64>]) -> Result<Correlation, DatasetError> {
    if x.len() != y.len() {
        return Err(DatasetError::LengthMismatch { left: x.len(), right: y.len() });
    }
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect();
    pearson_pairs(&pairs)
}

fn pearson_pairs(pairs: &[(f64, f64)]) -> Result<Correlation, DatasetError> {
    let n = pairs.len();
    if n < 2 {
        return Err(DatasetError::InsufficientData { pairs: n });
    }
    // checked directly: the mean of equal values need not equal them in floating point
    let constant = |f: fn(&(f64, f64)) -> f64| pairs.iter().all(|p| f(p) == f(&pairs[0]));
    if constant(|p| p.0) || constant(|p| p.1) {
        return Ok(Correlation { r: 0.0, n, constant: true });
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(a, b) in pairs {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation { r: 0.0, n, constant: true });
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(Correlation { r, n, constant: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFeature {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSelection {
    /// At most `k` features, strongest |r| first.
    pub ranked: Vec<RankedFeature>,
    pub skipped: Vec<SkippedFeature>,
}

impl FeatureSelection {
    pub fn names(&self) -> Vec<String> {
        self.ranked.iter().map(|f| f.name.clone()).collect()
    }
}

/// Rank matrix columns by |r| against a binary label column aligned with
/// [`FeatureMatrix::patients`] (`None` = patient not labelled) and keep the
/// top `k`. Ties go to the lexicographically smaller name; constant and
/// under-populated columns are skipped.
pub fn select_features(matrix: &FeatureMatrix, labels: &[Option<u8>], k: usize) -> Result<FeatureSelection, DatasetError> {
    if labels.len() != matrix.n_rows() {
        return Err(DatasetError::LengthMismatch { left: matrix.n_rows(), right: labels.len() });
    }
    if let Some(bad) = labels.iter().flatten().find(|l| **l > 1) {
        return Err(DatasetError::NonBinaryLabel(*bad));
    }
    let y: Vec<Option<f64>> = labels.iter().map(|l| l.map(f64::from)).collect();
    let mut out = FeatureSelection::default();
    for name in matrix.columns() {
        match pearson_pairwise(&matrix.column(name), &y) {
            Ok(c) if c.constant => out.skipped.push(SkippedFeature { name: name.into(), reason: "constant column".into() }),
            Ok(c) => out.ranked.push(RankedFeature { name: name.into(), r: c.r }),
            Err(e) => out.skipped.push(SkippedFeature { name: name.into(), reason: e.to_string() }),
        }
    }
    out.ranked.sort_by(|a, b| b.r.abs().total_cmp(&a.r.abs()).then_with(|| a.name.cmp(&b.name)));
    out.ranked.truncate(k);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Observation;

    fn obs(v: f64) -> Observation {
        Observation { value: v, unit: String::new(), low: None, high: None }
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.5];
        assert!((pearson(&x, &x).unwrap().r - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap().r + 1.0).abs() < 1e-15);
        // exact: sxy = 3, sxx = 2, syy = 14/3, so r = 3 / sqrt(28/3)
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap().r;
        assert!((r - 0.981_980_506_061_965_6).abs() < 1e-12);
    }

    #[test]
    fn pearson_edge_cases() {
        let c = pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(c.constant);
        assert_eq!(c.r, 0.0);
        assert!(pearson(&[0.1, 0.1, 0.1], &[1.0, 2.0, 4.0]).unwrap().constant);
        assert_eq!(pearson(&[1.0], &[2.0]), Err(DatasetError::InsufficientData { pairs: 1 }));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0]), Err(DatasetError::LengthMismatch { .. })));
        let c = pearson_pairwise(&[Some(1.0), None, Some(2.0), Some(3.0)], &[Some(2.0), Some(9.0), Some(4.0), None]).unwrap();
        assert_eq!(c.n, 2);
        assert!((c.r - 1.0).abs() < 1e-15);
    }

    fn matrix(cols: &[(&str, &[f64])]) -> FeatureMatrix {
        let mut m = FeatureMatrix::default();
        for (name, vals) in cols {
            for (i, v) in vals.iter().enumerate() {
                m.insert(&format!("p{i:02}"), name, obs(*v));
            }
        }
        m
    }

    #[test]
    fn ranks_by_absolute_correlation() {
        let labels = [Some(0), Some(0), Some(1), Some(1), Some(0), Some(1)];
        // A follows the label loosely, B inversely and more tightly
        let m = matrix(&[
            ("A", &[0.1, 0.5, 0.9, 0.6, 0.2, 1.0]),
            ("B", &[1.0, 0.95, 0.05, 0.0, 0.9, 0.1]),
            ("C", &[3.0, 3.0, 3.0, 3.0, 3.0, 3.0]),
        ]);
        let sel = select_features(&m, &labels, 10).unwrap();
        assert_eq!(sel.names(), ["B", "A"]);
        assert!(sel.ranked[0].r < 0.0);
        assert_eq!(sel.skipped[0].name, "C");
    }

    #[test]
    fn caps_at_k_and_breaks_ties_by_name() {
        let labels: Vec<Option<u8>> = (0..6).map(|i| Some((i % 2) as u8)).collect();
        let col: &[f64] = &[0.0, 1.0, 0.0, 1.0, 0.0, 1.5];
        let names: Vec<String> = (0..15).map(|i| format!("F{:02}", 14 - i)).collect();
        let cols: Vec<(&str, &[f64])> = names.iter().map(|n| (n.as_str(), col)).collect();
        let sel = select_features(&matrix(&cols), &labels, 10).unwrap();
        assert_eq!(sel.ranked.len(), 10);
        assert_eq!(sel.ranked[0].name, "F00");
        assert_eq!(sel.ranked[9].name, "F09");
        let few = matrix(&cols[..3]);
        assert_eq!(select_features(&few, &labels, 10).unwrap().ranked.len(), 3);
    }

    #[test]
    fn rejects_non_binary_labels() {
        let m = matrix(&[("A", &[1.0, 2.0])]);
        assert_eq!(select_features(&m, &[Some(0), Some(2)], 10), Err(DatasetError::NonBinaryLabel(2)));
    }
}
