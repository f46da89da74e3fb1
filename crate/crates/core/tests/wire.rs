//! The bundled mock server against the conformance suite, and the HTTP client
//! against the in-process mock.

mod common;

use dxprompt_core::backends::conformance::run_suite;
use dxprompt_core::backends::{server, BackendSet, HttpBackend, HttpConfig, ImageTransport, MockBackend, MockConfig};
use dxprompt_core::backends::{Detector, ImageEmbedder, TextEmbedder};
use dxprompt_core::eval::{run_experiment, ExperimentConfig, RunContext};
use dxprompt_core::types::ImageRef;

#[test]
fn mock_server_passes_conformance() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = common::default_fixture(dir.path());
    let handle = server::spawn(MockBackend::new(MockConfig::new(5)), "127.0.0.1:0", 2).unwrap();
    let checks = run_suite(&handle.url(), &dir.path().join(&data.images[0].rel_path));
    assert_eq!(checks.len(), 5);
    for c in &checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}

#[test]
fn http_client_matches_in_process_mock() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = common::default_fixture(dir.path());
    let mock = MockBackend::new(MockConfig::new(9));
    let handle = server::spawn(mock.clone(), "127.0.0.1:0", 2).unwrap();
    for transport in [ImageTransport::Base64, ImageTransport::Path] {
        let http = HttpBackend::new(HttpConfig { image_transport: transport, ..HttpConfig::new(handle.url()) });
        assert_eq!(http.embed_text("0.52 sec QTc").unwrap(), mock.embed_text("0.52 sec QTc").unwrap());
        for img in data.images.iter().take(5) {
            let r = ImageRef::new(dir.path().join(&img.rel_path).display().to_string());
            assert_eq!(http.embed_image(&r).unwrap(), mock.embed_image(&r).unwrap());
            assert_eq!(http.detect(&r, "Edema").unwrap(), mock.detect(&r, "Edema").unwrap());
        }
    }
}

#[test]
fn http_run_reproduces_mock_report() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = common::default_fixture(dir.path());
    let mock = MockConfig::new(3);
    let handle = server::spawn(MockBackend::new(mock), "127.0.0.1:0", 4).unwrap();
    let cfg = ExperimentConfig::default();
    let local = run_experiment(&cfg, &ds, &BackendSet::mock(mock), &RunContext::new(dir.path().join("crops-a"))).unwrap();
    let remote =
        run_experiment(&cfg, &ds, &BackendSet::http(HttpConfig::new(handle.url())), &RunContext::new(dir.path().join("crops-b")))
            .unwrap();
    assert!(local.errors.is_empty());
    assert_eq!(local.confusion, remote.confusion);
    assert_eq!(local.retained_histogram, remote.retained_histogram);
    assert_eq!(local.metrics, remote.metrics);
    assert_eq!(local.per_label, remote.per_label);
}

#[test]
fn unreachable_backend_errors_every_query() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = common::default_fixture(dir.path());
    // bind then drop to get a port nothing listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let http = HttpConfig { retries: 0, ..HttpConfig::new(format!("http://127.0.0.1:{port}")) };
    let report = run_experiment(&ExperimentConfig::default(), &ds, &BackendSet::http(http), &RunContext::new(dir.path().join("c")))
        .unwrap();
    assert_eq!(report.errors.len() as u64, report.queries);
    assert!(report.metrics.is_none());
}
