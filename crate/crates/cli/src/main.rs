//! `dxprompt`: build datasets, run and sweep experiments, render reports and
//! host the mock backend.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use dxprompt_core::backends::{server, BackendSet, HttpConfig, MockBackend, MockConfig};
use dxprompt_core::dataset::{
    build_dataset, read_chartevents_file, read_dataset, read_image_index, read_labels, synth, write_dataset,
    BuildConfig, DatasetError,
};
use dxprompt_core::eval::{
    plot_svg, read_sweep_series, render_report, render_sweep, run_experiment_traced, sweep, sweep_csv, EvalError,
    ExperimentConfig, Report, RunContext, SweepAxis, SweepResult,
};
use dxprompt_core::{Condition, Modality, TemplateKind};

#[derive(Parser, Debug)]
#[command(name = "dxprompt", version, about = "Similarity-ordered few-shot prompting for chest X-ray diagnosis")]
struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic chartevents/images/labels fixture.
    SynthData(SynthArgs),
    /// Turn chartevents, an image index and labels into a JSONL dataset.
    BuildDataset(BuildArgs),
    /// Run one experiment.
    Run(RunArgs),
    /// Run one experiment per value along an ablation axis.
    Sweep(SweepArgs),
    /// Render a stored report or sweep, or plot a threshold-sweep CSV as SVG.
    Report(ReportArgs),
    /// Serve the mock backends over the HTTP wire protocol.
    ServeMock(ServeArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    patients: usize,
    /// A count (first N conditions) or a comma-separated list of condition names.
    #[arg(long, default_value = "3")]
    labels: String,
    #[arg(long, default_value_t = 12)]
    features: usize,
    /// Fraction of (patient, feature) cells left empty.
    #[arg(long, default_value_t = 0.1)]
    missingness: f64,
    /// Planted features per label.
    #[arg(long, default_value_t = 2)]
    planted: usize,
    #[arg(long, default_value_t = 0.1)]
    duplicate_rate: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(long)]
    chartevents: PathBuf,
    /// CSV with patient_id,image_path.
    #[arg(long)]
    images: PathBuf,
    /// CSV with patient_id,label_name,label.
    #[arg(long)]
    labels: PathBuf,
    /// Output JSONL; the manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Feature cap per label.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 6)]
    pool_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    /// `mock` or `http:<base-url>`.
    #[arg(long, default_value = "mock")]
    backend: BackendSpec,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long, overrides_with = "no_dps")]
    dps: bool,
    #[arg(long)]
    no_dps: bool,
    #[arg(long, overrides_with = "no_vg")]
    vg: bool,
    #[arg(long)]
    no_vg: bool,
    #[arg(long)]
    modality: Option<Modality>,
    /// image-text, ehr-text or image-ehr-text.
    #[arg(long)]
    template: Option<TemplateKind>,
    /// Directory for grounded crops.
    #[arg(long)]
    crop_dir: Option<PathBuf>,
    /// Queries in flight at once.
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Embedding dimension of the mock backend.
    #[arg(long, default_value_t = 64)]
    mock_dim: usize,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-query traces (JSONL) here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// shots, threshold, modality or grid.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated axis values; defaults depend on the axis.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    /// Receives sweep.json, sweep.csv, sweep.txt and, for thresholds, sweep.svg.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report or sweep JSON to render as a table.
    #[arg(long, conflicts_with = "plot", required_unless_present = "plot")]
    input: Option<PathBuf>,
    /// Threshold-sweep CSV to plot.
    #[arg(long, requires = "out")]
    plot: Option<PathBuf>,
    /// SVG output for --plot.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8765")]
    addr: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

#[derive(Debug, Clone)]
enum BackendSpec {
    Mock,
    Http(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "mock" {
            return Ok(BackendSpec::Mock);
        }
        match s.strip_prefix("http:") {
            Some(url) if url.starts_with("http://") || url.starts_with("https://") => Ok(BackendSpec::Http(url.to_string())),
            _ => Err(format!("expected `mock` or `http:<base-url>`, got {s:?}")),
        }
    }
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(e: impl Into<anyhow::Error>) -> Self {
        Failure { code: 1, error: e.into() }
    }
    fn data(e: impl Into<anyhow::Error>) -> Self {
        Failure { code: 2, error: e.into() }
    }
    fn backend(e: impl Into<anyhow::Error>) -> Self {
        Failure { code: 3, error: e.into() }
    }
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidConfig(_) | EvalError::InvalidSweep(_) => Failure::usage(e),
            _ => Failure::data(e),
        }
    }
}

type Outcome = Result<(), Failure>;

fn write_file(path: &Path, contents: &[u8]) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::data)?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display())).map_err(Failure::data)
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut v = serde_json::to_vec_pretty(value).map_err(Failure::data)?;
    v.push(b'\n');
    Ok(v)
}

fn parse_labels(spec: &str) -> Result<Vec<Condition>, Failure> {
    if let Ok(n) = spec.trim().parse::<usize>() {
        if n == 0 || n > Condition::ALL.len() {
            return Err(Failure::usage(anyhow!("--labels count must lie in 1..={}", Condition::ALL.len())));
        }
        return Ok(Condition::ALL[..n].to_vec());
    }
    spec.split(',').map(|s| s.trim().parse::<Condition>().map_err(Failure::usage)).collect()
}

fn synth_data(a: SynthArgs) -> Outcome {
    let config = synth::SynthConfig {
        seed: a.seed,
        n_patients: a.patients,
        n_features: a.features,
        labels: parse_labels(&a.labels)?,
        missingness: a.missingness,
        planted_per_label: a.planted,
        duplicate_rate: a.duplicate_rate,
    };
    let data = synth::synth_generate(&config).map_err(Failure::usage)?;
    let paths = synth::write_synth(&data, &a.out).map_err(Failure::data)?;
    println!("chartevents {}", paths.chartevents.display());
    println!("images      {}", paths.images.display());
    println!("labels      {}", paths.labels.display());
    for (c, names) in &data.planted {
        println!("planted for {c}: {}", names.join(", "));
    }
    Ok(())
}

fn build(a: BuildArgs) -> Outcome {
    let ingested = read_chartevents_file(&a.chartevents).map_err(Failure::data)?;
    if !ingested.malformed.is_empty() {
        log::warn!("{} malformed chartevents rows skipped", ingested.malformed.len());
    }
    let labels = read_labels(&a.labels).map_err(Failure::data)?;
    let images = read_image_index(&a.images).map_err(Failure::data)?;
    let config = BuildConfig { k: a.k, pool_size: a.pool_size, seed: a.seed, source: a.chartevents.display().to_string() };
    let dataset = build_dataset(&ingested.matrix, &labels, &images, &config).map_err(|e| match e {
        DatasetError::InvalidParams(_) => Failure::usage(e),
        _ => Failure::data(e),
    })?;
    write_dataset(&dataset, &a.out).map_err(Failure::data)?;
    for (c, s) in &dataset.manifest.labels {
        let names: Vec<&str> = s.features.iter().map(|f| f.name.as_str()).collect();
        println!(
            "{c}: {} records ({} positive, {} negative), {} candidates, {} queries; features: {}",
            s.records,
            s.positives,
            s.negatives,
            s.candidates,
            s.queries,
            names.join(", ")
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn experiment_config(a: &ExperimentArgs) -> Result<ExperimentConfig, Failure> {
    let mut c = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(Failure::data)?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display())).map_err(Failure::usage)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if let Some(t) = a.threshold {
        c.threshold = t;
    }
    if let Some(n) = a.shots {
        c.shots = n;
    }
    if a.dps || a.no_dps {
        c.dps_enabled = a.dps;
    }
    if a.vg || a.no_vg {
        c.vg_enabled = a.vg;
    }
    if let Some(m) = a.modality {
        c.modality = m;
    }
    if let Some(t) = a.template {
        c.template = t;
    }
    c.validate()?;
    Ok(c)
}

fn backends(a: &ExperimentArgs, seed: u64) -> Result<BackendSet, Failure> {
    Ok(match &a.backend {
        BackendSpec::Mock => {
            if a.mock_dim < 2 {
                return Err(Failure::usage(anyhow!("--mock-dim must be at least 2")));
            }
            BackendSet::mock(MockConfig { seed, embedding_dim: a.mock_dim })
        }
        BackendSpec::Http(url) => {
            let mut cfg = HttpConfig::new(url.clone());
            cfg.max_in_flight = a.concurrency.max(1);
            BackendSet::http(cfg)
        }
    })
}

fn run_context(a: &ExperimentArgs) -> RunContext {
    let crop_dir = a.crop_dir.clone().unwrap_or_else(|| std::env::temp_dir().join("dxprompt-crops"));
    RunContext { crop_dir, concurrency: a.concurrency.max(1) }
}

fn load_dataset(path: &Path) -> Result<dxprompt_core::dataset::VqaDataset, Failure> {
    read_dataset(path).map_err(|e| Failure::data(anyhow!("dataset {}: {e}", path.display())))
}

/// Every query failing usually means the backend is unreachable.
fn check_backend_health(report: &Report) -> Outcome {
    if report.queries > 0 && report.errors.len() as u64 == report.queries {
        let first = &report.errors[0];
        return Err(Failure::backend(anyhow!("all {} queries failed; first: {} ({})", report.queries, first.message, first.stage)));
    }
    Ok(())
}

fn run(a: RunArgs) -> Outcome {
    let config = experiment_config(&a.exp)?;
    let dataset = load_dataset(&a.exp.dataset)?;
    let set = backends(&a.exp, config.seed)?;
    let (report, traces) = run_experiment_traced(&config, &dataset, &set, &run_context(&a.exp))?;
    if let Some(path) = &a.out {
        write_file(path, &json_bytes(&report)?)?;
    }
    if let Some(path) = &a.trace {
        let mut body = Vec::new();
        for t in &traces {
            serde_json::to_writer(&mut body, t).map_err(Failure::data)?;
            body.push(b'\n');
        }
        write_file(path, &body)?;
    }
    print!("{}", render_report(&report));
    check_backend_health(&report)
}

fn run_sweep(a: SweepArgs) -> Outcome {
    let base = experiment_config(&a.exp)?;
    let dataset = load_dataset(&a.exp.dataset)?;
    let set = backends(&a.exp, base.seed)?;
    let values = if a.values.is_empty() { a.axis.default_values() } else { a.values.clone() };
    let result = sweep(a.axis, &values, &base, &dataset, &set, &run_context(&a.exp))?;
    let table = render_sweep(&result);
    write_file(&a.out_dir.join("sweep.json"), &json_bytes(&result)?)?;
    let csv = sweep_csv(&result)?;
    write_file(&a.out_dir.join("sweep.csv"), csv.as_bytes())?;
    write_file(&a.out_dir.join("sweep.txt"), table.as_bytes())?;
    if a.axis == SweepAxis::Threshold {
        let svg = plot_svg(&read_sweep_series(&csv)?);
        write_file(&a.out_dir.join("sweep.svg"), svg.as_bytes())?;
    }
    print!("{table}");
    for e in &result.entries {
        check_backend_health(&e.report)?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Outcome {
    if let Some(csv_path) = &a.plot {
        let text = std::fs::read_to_string(csv_path)
            .with_context(|| format!("reading {}", csv_path.display()))
            .map_err(Failure::data)?;
        let svg = plot_svg(&read_sweep_series(&text)?);
        let out = a.out.as_deref().ok_or_else(|| Failure::usage(anyhow!("--plot needs --out")))?;
        write_file(out, svg.as_bytes())?;
        println!("wrote {}", out.display());
        return Ok(());
    }
    let path = a.input.as_deref().ok_or_else(|| Failure::usage(anyhow!("give --input or --plot")))?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::data)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::data)?;
    let rendered = if value.get("entries").is_some() {
        let result: SweepResult = serde_json::from_value(value).context("not a sweep result").map_err(Failure::data)?;
        render_sweep(&result)
    } else {
        let r: Report = serde_json::from_value(value).context("not a report").map_err(Failure::data)?;
        render_report(&r)
    };
    print!("{rendered}");
    Ok(())
}

fn serve(a: ServeArgs) -> Outcome {
    if a.dim < 2 {
        return Err(Failure::usage(anyhow!("--dim must be at least 2")));
    }
    let backend = MockBackend::new(MockConfig { seed: a.seed, embedding_dim: a.dim });
    let handle = server::spawn(backend, &a.addr, a.workers.max(1)).map_err(Failure::backend)?;
    println!("serving mock backends on {}", handle.url());
    handle.join();
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::BuildDataset(a) => build(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Report(a) => report(a),
        Command::ServeMock(a) => serve(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
