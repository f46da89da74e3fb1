use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::runner::{run_experiment, ExperimentConfig, Report, RunContext};
use super::EvalError;
use crate::backends::BackendSet;
use crate::dataset::VqaDataset;
use crate::types::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Shots,
    Threshold,
    Modality,
    /// DPS off/on crossed with VG off/on.
    Grid,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Shots => "shots",
            SweepAxis::Threshold => "threshold",
            SweepAxis::Modality => "modality",
            SweepAxis::Grid => "grid",
        }
    }

    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepAxis::Shots => &["4", "6", "8", "10", "12"],
            SweepAxis::Threshold => &["0", "0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1"],
            SweepAxis::Modality => &["text", "image", "multimodal"],
            SweepAxis::Grid => &[],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shots" => Ok(SweepAxis::Shots),
            "threshold" => Ok(SweepAxis::Threshold),
            "modality" => Ok(SweepAxis::Modality),
            "grid" => Ok(SweepAxis::Grid),
            other => Err(format!("unknown sweep axis {other:?} (expected shots, threshold, modality or grid)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    /// The axis value as given, e.g. "8" or "multimodal"; "dps=on,vg=off" for the grid.
    pub value: String,
    pub report: Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub entries: Vec<SweepEntry>,
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Expand an axis and its values into labelled configs sharing `base`'s seed.
pub fn sweep_configs(axis: SweepAxis, values: &[String], base: &ExperimentConfig) -> Result<Vec<(String, ExperimentConfig)>, EvalError> {
    let bad = |v: &str, why: String| EvalError::InvalidSweep(format!("{axis} value {v:?}: {why}"));
    let mut out = Vec::new();
    if axis == SweepAxis::Grid {
        if !values.is_empty() {
            return Err(EvalError::InvalidSweep("the grid axis takes no values".into()));
        }
        for (dps, vg) in [(false, false), (false, true), (true, false), (true, true)] {
            let c = ExperimentConfig { dps_enabled: dps, vg_enabled: vg, ..base.clone() };
            out.push((format!("dps={},vg={}", on_off(dps), on_off(vg)), c));
        }
        return Ok(out);
    }
    if values.is_empty() {
        return Err(EvalError::InvalidSweep(format!("the {axis} axis needs at least one value")));
    }
    for v in values {
        let v = v.trim();
        let mut c = base.clone();
        match axis {
            SweepAxis::Shots => c.shots = v.parse().map_err(|e| bad(v, format!("{e}")))?,
            SweepAxis::Threshold => c.threshold = v.parse().map_err(|e| bad(v, format!("{e}")))?,
            SweepAxis::Modality => c.modality = v.parse::<Modality>().map_err(|e| bad(v, e))?,
            SweepAxis::Grid => unreachable!("handled above"),
        }
        c.validate().map_err(|e| bad(v, e.to_string()))?;
        out.push((v.to_string(), c));
    }
    Ok(out)
}

/// One report per axis value, run in the order given.
pub fn sweep(
    axis: SweepAxis,
    values: &[String],
    base: &ExperimentConfig,
    dataset: &VqaDataset,
    backends: &BackendSet,
    ctx: &RunContext,
) -> Result<SweepResult, EvalError> {
    let mut entries = Vec::new();
    for (value, config) in sweep_configs(axis, values, base)? {
        log::info!("sweep {axis}: running {value}");
        let report = run_experiment(&config, dataset, backends, ctx)?;
        entries.push(SweepEntry { value, report });
    }
    Ok(SweepResult { axis, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn grid_is_four_cells_in_table_order() {
        let cfgs = sweep_configs(SweepAxis::Grid, &[], &ExperimentConfig::default()).unwrap();
        let flags: Vec<(bool, bool)> = cfgs.iter().map(|(_, c)| (c.dps_enabled, c.vg_enabled)).collect();
        assert_eq!(flags, [(false, false), (false, true), (true, false), (true, true)]);
        assert!(sweep_configs(SweepAxis::Grid, &strings(&["1"]), &ExperimentConfig::default()).is_err());
    }

    #[test]
    fn values_are_parsed_and_checked() {
        let base = ExperimentConfig { seed: 9, ..Default::default() };
        let cfgs = sweep_configs(SweepAxis::Shots, &SweepAxis::Shots.default_values(), &base).unwrap();
        assert_eq!(cfgs.iter().map(|(_, c)| c.shots).collect::<Vec<_>>(), [4, 6, 8, 10, 12]);
        assert!(cfgs.iter().all(|(_, c)| c.seed == 9));
        let cfgs = sweep_configs(SweepAxis::Modality, &strings(&["text", "Image"]), &base).unwrap();
        assert_eq!(cfgs[1].1.modality, Modality::Image);
        assert!(sweep_configs(SweepAxis::Threshold, &strings(&["1.2"]), &base).is_err());
        assert!(sweep_configs(SweepAxis::Shots, &strings(&["0"]), &base).is_err());
        assert!(sweep_configs(SweepAxis::Shots, &[], &base).is_err());
        assert_eq!("grid".parse::<SweepAxis>(), Ok(SweepAxis::Grid));
        assert!("rows".parse::<SweepAxis>().is_err());
    }
}
