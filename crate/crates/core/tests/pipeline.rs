//! Full runs on the synthetic fixture with the mock backend.

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use dxprompt_core::backends::{BackendError, BackendSet, Detector, MockConfig};
use dxprompt_core::grounding::Detection;
use dxprompt_core::types::ImageRef;
use dxprompt_core::eval::{run_experiment, run_experiment_traced, sweep, EvalError, ExperimentConfig, RunContext, SweepAxis};
use dxprompt_core::types::Verdict;

fn ctx(dir: &std::path::Path) -> RunContext {
    RunContext::new(dir.join("crops"))
}

#[test]
fn accuracy_matches_nearest_shot_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = common::default_fixture(dir.path());
    for cfg in [ExperimentConfig::default(), ExperimentConfig { dps_enabled: false, ..Default::default() }] {
        let (report, traces) = run_experiment_traced(&cfg, &ds, &BackendSet::mock(MockConfig::new(0)), &ctx(dir.path())).unwrap();
        assert!(report.errors.is_empty());
        assert_eq!(traces.len() as u64, report.queries);
        // the mock echoes the label of the shot next to the query
        let correct = traces.iter().filter(|t| t.shots.last().unwrap().label == t.gold).count();
        let acc = report.metrics.as_ref().unwrap().accuracy;
        assert!((acc - correct as f64 / traces.len() as f64).abs() <= 1e-12);
        for t in &traces {
            let want = if t.shots.last().unwrap().label == 1 { Verdict::Positive } else { Verdict::Negative };
            assert_eq!(t.verdict, want);
        }
    }
}

#[test]
fn nearest_shot_is_last() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = common::default_fixture(dir.path());
    let (_, traces) =
        run_experiment_traced(&ExperimentConfig::default(), &ds, &BackendSet::mock(MockConfig::new(0)), &ctx(dir.path())).unwrap();
    for t in &traces {
        let scores: Vec<f64> = t.shots.iter().map(|s| s.score.unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] <= w[1]), "{scores:?}");
    }
}

#[test]
fn dps_off_keeps_every_drawn_shot() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = common::default_fixture(dir.path());
    for shots in [2, 4, 6] {
        let cfg = ExperimentConfig { dps_enabled: false, shots, ..Default::default() };
        let (report, traces) = run_experiment_traced(&cfg, &ds, &BackendSet::mock(MockConfig::new(0)), &ctx(dir.path())).unwrap();
        assert!(traces.iter().all(|t| t.shots.len() == shots && t.shots.iter().all(|s| s.score.is_none())));
        assert_eq!(report.mean_retained, shots as f64);
    }
}

#[test]
fn runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = common::default_fixture(dir.path());
    let cfg = ExperimentConfig { seed: 4, ..Default::default() };
    let run = |n: usize| {
        let c = RunContext { concurrency: n, ..ctx(dir.path()) };
        serde_json::to_string(&run_experiment(&cfg, &ds, &BackendSet::mock(MockConfig::new(1)), &c).unwrap()).unwrap()
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(8));
}

#[test]
fn retention_falls_as_threshold_rises() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = common::default_fixture(dir.path());
    let values: Vec<String> = (-10..=10).map(|i| format!("{:.1}", i as f64 / 10.0)).collect();
    let result =
        sweep(SweepAxis::Threshold, &values, &ExperimentConfig::default(), &ds, &BackendSet::mock(MockConfig::new(0)), &ctx(dir.path()))
            .unwrap();
    let means: Vec<f64> = result.entries.iter().map(|e| e.report.mean_retained).collect();
    assert!(means.windows(2).all(|w| w[0] >= w[1]), "{means:?}");
    assert_eq!(means[0], 6.0);
    assert!(means.iter().all(|m| *m >= 1.0));
}

#[test]
fn zero_shots_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = common::default_fixture(dir.path());
    let cfg = ExperimentConfig { shots: 0, ..Default::default() };
    let err = run_experiment(&cfg, &ds, &BackendSet::mock(MockConfig::new(0)), &ctx(dir.path())).unwrap_err();
    assert!(matches!(err, EvalError::InvalidConfig(_)));
}

struct Blind;

impl Detector for Blind {
    fn detect(&self, _: &ImageRef, _: &str) -> Result<Vec<Detection>, BackendError> {
        Ok(vec![])
    }
}

#[test]
fn detector_misses_fall_back_to_whole_image() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = common::default_fixture(dir.path());
    let mut blind = BackendSet::mock(MockConfig::new(0));
    blind.detector = Some(Arc::new(Blind));
    let cfg = ExperimentConfig::default();
    let (report, traces) = run_experiment_traced(&cfg, &ds, &blind, &ctx(dir.path())).unwrap();
    assert!(report.errors.is_empty());
    assert_eq!(report.grounding_misses as usize, ds.records.len());
    let originals: BTreeSet<&ImageRef> = ds.records.iter().map(|r| &r.record.image_ref).collect();
    assert!(traces.iter().flat_map(|t| &t.shots).all(|s| originals.contains(&s.image_ref)));

    // identical to a run with grounding switched off
    let off = ExperimentConfig { vg_enabled: false, ..cfg };
    let (plain, _) = run_experiment_traced(&off, &ds, &BackendSet::mock(MockConfig::new(0)), &ctx(dir.path())).unwrap();
    assert_eq!(report.confusion, plain.confusion);
    assert_eq!(report.retained_histogram, plain.retained_histogram);
}

#[test]
fn absent_detector_fails_queries_at_prepare() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = common::default_fixture(dir.path());
    let backends = BackendSet::mock(MockConfig::new(0)).without_detector();
    let report = run_experiment(&ExperimentConfig::default(), &ds, &backends, &ctx(dir.path())).unwrap();
    assert_eq!(report.errors.len() as u64, report.queries);
    assert!(report.errors.iter().all(|e| e.stage == "prepare"));
    let off = ExperimentConfig { vg_enabled: false, ..Default::default() };
    assert!(run_experiment(&off, &ds, &backends, &ctx(dir.path())).unwrap().errors.is_empty());
}
