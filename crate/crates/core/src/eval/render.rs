//! Text tables, sweep CSV and a small SVG line chart.

use std::fmt::Write as _;

use super::runner::Report;
use super::sweep::{SweepAxis, SweepResult};
use super::EvalError;
use crate::types::Modality;

pub const METRIC_COLUMNS: [&str; 4] = ["Precision", "Recall", "F1-score", "Accuracy"];

fn metric_cells(report: &Report) -> Vec<String> {
    match &report.metrics {
        Some(m) => [m.precision, m.recall, m.f1, m.accuracy].iter().map(|v| format!("{v:.3}")).collect(),
        None => vec!["n/a".to_string(); 4],
    }
}

/// Pipe table with every column padded to its widest cell.
pub fn format_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header.to_vec());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

fn mark(b: bool) -> String {
    if b { "✓" } else { "✗" }.to_string()
}

fn modality_title(m: Modality) -> String {
    match m {
        Modality::Text => "Text",
        Modality::Image => "Image",
        Modality::Multimodal => "Multimodal",
    }
    .to_string()
}

/// Summary of one run: overall metrics, then one row per label.
pub fn render_report(report: &Report) -> String {
    let c = &report.config;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "DPS {} (threshold {}, {} similarity), VG {}, {} candidates, template {}, seed {}",
        if c.dps_enabled { "on" } else { "off" },
        c.threshold,
        c.modality,
        if c.vg_enabled { "on" } else { "off" },
        c.shots,
        c.template,
        c.seed
    );
    let cm = &report.confusion;
    let _ = writeln!(
        out,
        "queries {}, errors {}, unparseable {}, excluded {}, grounding misses {}, mean shots {:.2}",
        report.queries,
        report.errors.len(),
        cm.unparseable,
        cm.excluded,
        report.grounding_misses,
        report.mean_retained
    );
    let _ = writeln!(out, "tp {} fp {} fn {} tn {}", cm.tp, cm.fp, cm.fn_, cm.tn);
    if let Some(m) = &report.metrics {
        let _ = writeln!(out, "weighted F1 {:.3}", m.weighted_f1);
    }
    out.push('\n');

    let mut header = vec!["Label"];
    header.extend(METRIC_COLUMNS);
    header.push("Queries");
    let mut rows: Vec<Vec<String>> = report
        .per_label
        .iter()
        .map(|(label, lr)| {
            let cells = match &lr.metrics {
                Some(m) => [m.precision, m.recall, m.f1, m.accuracy].iter().map(|v| format!("{v:.3}")).collect(),
                None => vec!["n/a".to_string(); 4],
            };
            let mut row = vec![label.to_string()];
            row.extend(cells);
            row.push(lr.queries.to_string());
            row
        })
        .collect();
    let mut all = vec!["All".to_string()];
    all.extend(metric_cells(report));
    all.push(report.queries.to_string());
    rows.push(all);
    out.push_str(&format_table(&header, &rows));
    out
}

/// Comparison table for a sweep, laid out like the corresponding ablation.
pub fn render_sweep(result: &SweepResult) -> String {
    let (lead, rows): (Vec<&str>, Vec<Vec<String>>) = match result.axis {
        SweepAxis::Shots => (
            vec!["Prompt Setting"],
            result.entries.iter().map(|e| vec![format!("{}-shot", e.report.config.shots)]).collect(),
        ),
        SweepAxis::Grid => (
            vec!["DPS Setting", "VG Setting"],
            result
                .entries
                .iter()
                .map(|e| vec![mark(e.report.config.dps_enabled), mark(e.report.config.vg_enabled)])
                .collect(),
        ),
        SweepAxis::Modality => (
            vec!["DPS Modality"],
            result.entries.iter().map(|e| vec![modality_title(e.report.config.modality)]).collect(),
        ),
        SweepAxis::Threshold => (
            vec!["DPS Threshold"],
            result.entries.iter().map(|e| vec![format!("{}", e.report.config.threshold)]).collect(),
        ),
    };
    let mut header = lead;
    header.extend(METRIC_COLUMNS);
    let rows: Vec<Vec<String>> = rows
        .into_iter()
        .zip(&result.entries)
        .map(|(mut row, e)| {
            row.extend(metric_cells(&e.report));
            row
        })
        .collect();
    format_table(&header, &rows)
}

pub const CSV_HEADER: [&str; 15] = [
    "axis",
    "value",
    "dps_enabled",
    "vg_enabled",
    "modality",
    "threshold",
    "shots",
    "precision",
    "recall",
    "f1",
    "accuracy",
    "weighted_f1",
    "mean_retained",
    "queries",
    "errors",
];

/// One row per sweep entry.
pub fn sweep_csv(result: &SweepResult) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| EvalError::Render(e.to_string());
    w.write_record(CSV_HEADER).map_err(fail)?;
    for e in &result.entries {
        let r = &e.report;
        let m: Vec<String> = match &r.metrics {
            Some(m) => [m.precision, m.recall, m.f1, m.accuracy, m.weighted_f1].iter().map(|v| v.to_string()).collect(),
            None => vec![String::new(); 5],
        };
        let mut row = vec![
            result.axis.name().to_string(),
            e.value.clone(),
            r.config.dps_enabled.to_string(),
            r.config.vg_enabled.to_string(),
            r.config.modality.to_string(),
            r.config.threshold.to_string(),
            r.config.shots.to_string(),
        ];
        row.extend(m);
        row.extend([r.mean_retained.to_string(), r.queries.to_string(), r.errors.len().to_string()]);
        w.write_record(&row).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Render(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| EvalError::Render(e.to_string()))
}

/// Points of one metric line read back from a sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: &'static str,
    pub points: Vec<(f64, f64)>,
}

const SERIES: [(&str, &str); 4] = [("precision", "Precision"), ("recall", "Recall"), ("f1", "F1-score"), ("accuracy", "Accuracy")];

/// Read the threshold and metric columns of a sweep CSV, sorted by threshold.
/// Rows without metrics are skipped.
pub fn read_sweep_series(csv_text: &str) -> Result<Vec<Series>, EvalError> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = rdr.headers().map_err(|e| EvalError::Render(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EvalError::Render(format!("sweep CSV lacks column {name:?}")))
    };
    let x_col = col("threshold")?;
    let y_cols = SERIES.iter().map(|(c, _)| col(c)).collect::<Result<Vec<_>, _>>()?;
    let mut series: Vec<Series> = SERIES.iter().map(|(_, n)| Series { name: n, points: Vec::new() }).collect();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| EvalError::Render(e.to_string()))?;
        let num = |c: usize| -> Result<Option<f64>, EvalError> {
            let s = rec.get(c).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| EvalError::Render(format!("row {}: {s:?} is not a number", i + 2)))
        };
        let Some(x) = num(x_col)? else { continue };
        for (s, &c) in series.iter_mut().zip(&y_cols) {
            if let Some(y) = num(c)? {
                s.points.push((x, y));
            }
        }
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(EvalError::Render("sweep CSV has no plottable rows".into()));
    }
    Ok(series)
}

const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

/// Line chart of metric against DPS threshold, y fixed to [0, 1].
pub fn plot_svg(series: &[Series]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 130.0, 20.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        x0 -= 0.05;
        x1 += 0.05;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - y.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let py = sy(y);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e0e0e0"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{y:.1}</text>"#, left - 6.0, py + 4.0);
    }
    let mut ticks: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let px = sx(x);
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, top + ph, top + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{x}</text>"#, top + ph + 18.0);
    }
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.2}" stroke="black"/>"#, top + ph);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#, top + ph, left + pw, top + ph);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">DPS Threshold</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">Score</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, (series, color)) in series.iter().zip(COLORS.iter().cycle()).enumerate() {
        let pts: Vec<String> = series.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for &(x, y) in &series.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = top + 10.0 + i as f64 * 20.0;
        let lx = left + pw + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, series.name);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_pads_columns() {
        let t = format_table(&["A", "Long"], &[vec!["xyz".into(), "1".into()]]);
        assert_eq!(t, "| A   | Long |\n|-----|------|\n| xyz | 1    |\n");
    }

    #[test]
    fn series_from_csv() {
        let mut csv = CSV_HEADER.join(",");
        csv.push('\n');
        csv.push_str("threshold,0.9,true,true,multimodal,0.9,6,0.5,0.4,0.45,0.6,0.5,1.5,10,0\n");
        csv.push_str("threshold,0.1,true,true,multimodal,0.1,6,0.7,0.6,0.65,0.7,0.6,6,10,0\n");
        csv.push_str("threshold,0.5,true,true,multimodal,0.5,6,,,,,,0,10,10\n");
        let series = read_sweep_series(&csv).unwrap();
        assert_eq!(series[0].name, "Precision");
        assert_eq!(series[0].points, [(0.1, 0.7), (0.9, 0.5)]);
        let svg = plot_svg(&series);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("DPS Threshold") && svg.contains("F1-score"));
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(read_sweep_series("a,b\n1,2\n").is_err());
    }
}
