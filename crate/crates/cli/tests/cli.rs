//! Exit codes, error messages and the README examples.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

fn dxprompt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dxprompt")).current_dir(dir).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(dir: &Path) {
    assert!(dxprompt(dir, &["synth-data", "--seed", "7", "--out", "fx"]).status.success());
    let o = dxprompt(
        dir,
        &["build-dataset", "--chartevents", "fx/chartevents.csv", "--images", "fx/images.csv", "--labels", "fx/labels.csv", "--out", "ds.jsonl"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dxprompt(dir.path(), &["run", "--dataset", "x.jsonl", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bogus"));
    assert_eq!(dxprompt(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dxprompt(dir.path(), &["run", "--dataset", "no/such/dataset.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no/such/dataset.jsonl"), "{}", stderr(&o));
}

#[test]
fn invalid_config_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    for args in [
        &["run", "--dataset", "ds.jsonl", "--shots", "0"][..],
        &["run", "--dataset", "ds.jsonl", "--threshold", "1.5"],
        &["sweep", "--dataset", "ds.jsonl", "--axis", "shots", "--values", "4,zero", "--out-dir", "s"],
        &["synth-data", "--patients", "2", "--out", "tiny"],
    ] {
        let o = dxprompt(dir.path(), args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    std::fs::write(dir.path().join("cfg.json"), r#"{"shot": 4}"#).unwrap();
    let o = dxprompt(dir.path(), &["run", "--dataset", "ds.jsonl", "--config", "cfg.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unreachable_backend_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http:http://127.0.0.1:{port}");
    let o = dxprompt(dir.path(), &["run", "--dataset", "ds.jsonl", "--backend", &url]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn report_renders_a_stored_run() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let run = dxprompt(dir.path(), &["run", "--dataset", "ds.jsonl", "--out", "r.json"]);
    assert!(run.status.success());
    let rep = dxprompt(dir.path(), &["report", "--input", "r.json"]);
    assert!(rep.status.success());
    assert_eq!(rep.stdout, run.stdout);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Every `dxprompt ...` line in the README's shell blocks, run in order.
#[test]
fn readme_examples_run() {
    let readme = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let mut in_sh = false;
    let mut lines = Vec::new();
    for line in readme.lines() {
        match line.trim() {
            "```sh" => in_sh = true,
            "```" => in_sh = false,
            l if in_sh && l.starts_with("dxprompt ") => lines.push(l.to_string()),
            _ => {}
        }
    }
    assert!(lines.len() >= 12, "{lines:?}");

    let dir = tempfile::tempdir().unwrap();
    let mut server = None;
    let mut url = String::new();
    for line in &lines {
        let line = line.replace("http://127.0.0.1:8765", &url);
        if let Some(cmd) = line.strip_suffix(" &") {
            let args: Vec<&str> = cmd.split_whitespace().skip(1).map(|a| if a == "127.0.0.1:8765" { "127.0.0.1:0" } else { a }).collect();
            let mut child = Command::new(env!("CARGO_BIN_EXE_dxprompt"))
                .current_dir(dir.path())
                .args(&args)
                .stdout(Stdio::piped())
                .spawn()
                .unwrap();
            let mut first = String::new();
            BufReader::new(child.stdout.take().unwrap()).read_line(&mut first).unwrap();
            url = first.trim().rsplit(' ').next().unwrap().to_string();
            assert!(url.starts_with("http://127.0.0.1:"), "{first}");
            server = Some(Server(child));
            continue;
        }
        let args: Vec<&str> = line.split_whitespace().skip(1).collect();
        let o = dxprompt(dir.path(), &args);
        assert!(o.status.success(), "{line}: {}", stderr(&o));
    }
    assert!(server.is_some());
    let local = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let remote = std::fs::read_to_string(dir.path().join("report-http.json")).unwrap();
    assert_eq!(local, remote);
    for f in ["sweeps/grid/sweep.txt", "sweeps/threshold/sweep.svg", "sweeps/shots/sweep.csv", "threshold.svg", "traces.jsonl"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}
