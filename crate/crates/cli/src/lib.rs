//! Command-line driver. [`dispatch`] parses arguments, runs one
//! subcommand and returns the process exit code:
//!
//! * `0` success
//! * `1` data problems (dataset violations, malformed or orphan predictions)
//! * `2` tool, configuration or usage errors

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use searchpix_core::eval::{evaluate, EvaluationReport};
use searchpix_core::prediction::{read_predictions, write_predictions};
use searchpix_core::{
    expand_samples, read_dataset, validate_dataset, DatasetBundle, ImageRef, PredictionRecord, Task,
    TaskFilter, TaskSample, ValidationOptions,
};
use searchpix_engine::trace::{read_events, write_traces};
use searchpix_engine::{Engine, RunConfig, SampleOutcome, ToolConfig, Variant};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_TOOL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "searchpix",
    version,
    about = "Search-to-pixel grounding runs and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunOpts {
    /// Run config (TOML, or JSON for other extensions).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ablation variant overriding the config.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Point every tool at this fixture directory.
    #[arg(long)]
    pub mock: Option<PathBuf>,
    /// Record per-sample wall time in predictions.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dataset for integrity violations.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        /// Minimum IoU between an object's box and its mask's box.
        #[arg(long, default_value_t = 0.5)]
        box_mask_tau: f64,
    },
    /// Run the engine over a dataset and write predictions and traces.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "all")]
        task: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        traces: Option<PathBuf>,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Score a prediction file and write a report.
    Score {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        by_category: bool,
        /// Config to echo into the report.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Run several ablation variants and compare them.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated variant names.
        #[arg(long, value_delimiter = ',', required = true)]
        variants: Vec<Variant>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "all")]
        task: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Print the event log of one QA id.
    Trace {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        id: String,
    },
    /// Ground one question on one image.
    Demo {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long, default_value = "ground")]
        task: String,
        #[command(flatten)]
        opts: RunOpts,
    },
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_DATA,
        error: e.into(),
    }
}

fn tool(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_TOOL,
        error: e.into(),
    }
}

type CmdResult = Result<i32, Failure>;

/// Parse `argv` (program name first) and run the subcommand.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_TOOL } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code
        }
    }
}

pub fn execute(cmd: Command) -> CmdResult {
    match cmd {
        Command::Validate {
            dataset,
            box_mask_tau,
        } => cmd_validate(&dataset, box_mask_tau),
        Command::Run {
            dataset,
            task,
            out,
            traces,
            opts,
        } => cmd_run(&dataset, &task, &out, traces.as_deref(), &opts),
        Command::Score {
            dataset,
            pred,
            report,
            by_category,
            config,
            variant,
        } => cmd_score(&dataset, &pred, &report, by_category, config.as_deref(), variant),
        Command::Ablate {
            dataset,
            variants,
            out,
            task,
            opts,
        } => cmd_ablate(&dataset, &variants, &out, &task, &opts),
        Command::Trace { traces, id } => cmd_trace(&traces, &id),
        Command::Demo {
            image,
            question,
            task,
            opts,
        } => cmd_demo(&image, &question, &task, &opts),
    }
}

fn read_bundle(path: &Path) -> Result<DatasetBundle, Failure> {
    if !path.is_file() {
        return Err(tool(anyhow!("dataset {} not found", path.display())));
    }
    read_dataset(path).map_err(data)
}

fn cmd_validate(path: &Path, tau: f64) -> CmdResult {
    let bundle = read_bundle(path)?;
    let violations = validate_dataset(&bundle, &ValidationOptions { box_mask_tau: tau });
    for v in &violations {
        println!("{v}");
    }
    let counts = bundle.counts();
    if violations.is_empty() {
        println!("ok: {counts}");
        Ok(EXIT_OK)
    } else {
        println!("{} violation(s)", violations.len());
        Ok(EXIT_DATA)
    }
}

/// Load a run config: TOML for `.toml`, JSON otherwise.
pub fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        RunConfig::from_json_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn effective_config(opts: &RunOpts) -> Result<RunConfig, Failure> {
    let mut cfg = load_config(opts.config.as_deref()).map_err(tool)?;
    if let Some(v) = opts.variant {
        cfg.variant = v;
    }
    if let Some(w) = opts.workers {
        cfg.workers = w;
    }
    if let Some(dir) = &opts.mock {
        let keep = cfg.tools.clone();
        cfg.tools = ToolConfig {
            timeout_ms: keep.timeout_ms,
            max_retries: keep.max_retries,
            retry_backoff_ms: keep.retry_backoff_ms,
            max_inflight: keep.max_inflight,
            ..ToolConfig::all_mock(dir)
        };
    }
    cfg.validate().map_err(tool)?;
    Ok(cfg)
}

fn parse_filter(task: &str) -> Result<TaskFilter, Failure> {
    if task == "all" {
        return Ok(TaskFilter::All);
    }
    task.parse::<Task>()
        .map(TaskFilter::Only)
        .map_err(|_| tool(anyhow!("unknown task {task:?} (ground, seg, vqa, all)")))
}

fn load_samples(path: &Path, task: &str) -> Result<(DatasetBundle, Vec<TaskSample>), Failure> {
    let bundle = read_bundle(path)?;
    let violations = validate_dataset(&bundle, &ValidationOptions::default());
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{v}");
        }
        return Err(data(anyhow!("dataset has {} violation(s)", violations.len())));
    }
    let samples = expand_samples(&bundle, parse_filter(task)?).map_err(data)?;
    Ok((bundle, samples))
}

struct RunSummary {
    records: Vec<PredictionRecord>,
    fatal: usize,
    network_calls: u64,
}

fn execute_run(
    cfg: RunConfig,
    samples: &[TaskSample],
    out: &Path,
    traces: Option<&Path>,
    timings: bool,
) -> Result<RunSummary, Failure> {
    let mut engine = Engine::new(cfg).map_err(tool)?;
    engine.timings = timings;
    let outcomes = engine.run_all(samples);
    let records: Vec<PredictionRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(tool)?;
    }
    write_predictions(out, &records).map_err(tool)?;
    if let Some(dir) = traces {
        write_traces(dir, outcomes.iter().map(|o| (o.record.qa_id.as_str(), &o.trace))).map_err(tool)?;
    }
    let fatal: Vec<&SampleOutcome> = outcomes.iter().filter(|o| o.fatal_error().is_some()).collect();
    for o in &fatal {
        eprintln!(
            "{} {}: {}",
            o.record.qa_id,
            o.record.task(),
            o.fatal_error().unwrap_or_default()
        );
    }
    Ok(RunSummary {
        records,
        fatal: fatal.len(),
        network_calls: engine.gateway.network_calls(),
    })
}

fn cmd_run(dataset: &Path, task: &str, out: &Path, traces: Option<&Path>, opts: &RunOpts) -> CmdResult {
    let cfg = effective_config(opts)?;
    let (_, samples) = load_samples(dataset, task)?;
    let summary = execute_run(cfg, &samples, out, traces, opts.timings)?;
    eprintln!(
        "{} predictions written to {} ({} network calls)",
        summary.records.len(),
        out.display(),
        summary.network_calls
    );
    if summary.fatal > 0 {
        return Err(tool(anyhow!(
            "{} sample(s) failed with tool errors",
            summary.fatal
        )));
    }
    Ok(EXIT_OK)
}

fn score_records(
    samples: &[TaskSample],
    preds: &[PredictionRecord],
    echo: serde_json::Value,
) -> Result<EvaluationReport, Failure> {
    evaluate(preds, samples, echo).map_err(data)
}

fn cmd_score(
    dataset: &Path,
    pred: &Path,
    report: &Path,
    by_category: bool,
    config: Option<&Path>,
    variant: Option<Variant>,
) -> CmdResult {
    let (_, samples) = load_samples(dataset, "all")?;
    if !pred.is_file() {
        return Err(tool(anyhow!("prediction file {} not found", pred.display())));
    }
    let preds = read_predictions(pred).map_err(data)?;
    let echo = if config.is_some() || variant.is_some() {
        let mut cfg = load_config(config).map_err(tool)?;
        if let Some(v) = variant {
            cfg.variant = v;
        }
        cfg.echo()
    } else {
        serde_json::Value::Null
    };
    let r = score_records(&samples, &preds, echo)?;
    std::fs::write(report, r.to_json()).map_err(tool)?;
    print!("{}", r.render_tables(by_category));
    Ok(EXIT_OK)
}

/// One line per variant with the overall cells.
pub fn comparison_table(rows: &[(Variant, EvaluationReport)]) -> String {
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", v * 100.0));
    let mut out = format!(
        "{:<18}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
        "variant", "IoU", "R@0.5", "gIoU", "cIoU", "Acc"
    );
    for (v, r) in rows {
        out.push_str(&format!(
            "{:<18}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
            v.name(),
            pct(r.ground.as_ref().map(|g| g.overall.iou_mean)),
            pct(r.ground.as_ref().map(|g| g.overall.recall_at_05)),
            pct(r.seg.as_ref().map(|s| s.overall.giou)),
            pct(r.seg.as_ref().map(|s| s.overall.ciou)),
            pct(r.vqa.as_ref().map(|q| q.overall.accuracy)),
        ));
    }
    out
}

fn cmd_ablate(dataset: &Path, variants: &[Variant], out: &Path, task: &str, opts: &RunOpts) -> CmdResult {
    let base = effective_config(opts)?;
    let (_, samples) = load_samples(dataset, task)?;
    let mut rows = Vec::new();
    let mut fatal = 0;
    for &v in variants {
        let dir = out.join(v.name());
        std::fs::create_dir_all(&dir).map_err(tool)?;
        let cfg = base.clone().with_variant(v);
        let echo = cfg.echo();
        let summary = execute_run(
            cfg,
            &samples,
            &dir.join("predictions.jsonl"),
            Some(&dir.join("traces")),
            opts.timings,
        )?;
        fatal += summary.fatal;
        let report = score_records(&samples, &summary.records, echo)?;
        std::fs::write(dir.join("report.json"), report.to_json()).map_err(tool)?;
        rows.push((v, report));
    }
    let table = comparison_table(&rows);
    std::fs::write(out.join("comparison.txt"), &table).map_err(tool)?;
    print!("{table}");
    if fatal > 0 {
        return Err(tool(anyhow!("{fatal} sample(s) failed with tool errors")));
    }
    Ok(EXIT_OK)
}

fn cmd_trace(dir: &Path, id: &str) -> CmdResult {
    let path = dir.join(id).join("events.jsonl");
    let events = read_events(&path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(tool)?;
    let mut by_task: BTreeMap<String, usize> = BTreeMap::new();
    for e in &events {
        let task = e.task.map_or("-".to_string(), |t| t.to_string());
        *by_task.entry(task.clone()).or_default() += 1;
        println!("[{task:>6} #{:>3}] {}", e.seq, e.kind);
        let body = serde_json::to_string_pretty(&e.data).unwrap_or_default();
        for line in body.lines() {
            println!("    {line}");
        }
    }
    let summary: Vec<String> = by_task.iter().map(|(t, n)| format!("{t}: {n}")).collect();
    println!("{} event(s) ({})", events.len(), summary.join(", "));
    Ok(EXIT_OK)
}

fn cmd_demo(image: &Path, question: &str, task: &str, opts: &RunOpts) -> CmdResult {
    let task: Task = task
        .parse()
        .map_err(|_| tool(anyhow!("demo task must be ground or seg")))?;
    if task == Task::Vqa {
        return Err(tool(anyhow!("demo task must be ground or seg")));
    }
    let cfg = effective_config(opts)?;
    let engine = Engine::new(cfg).map_err(tool)?;
    let uri = image.display().to_string();
    let img = engine.gateway.fetch_image(&uri).map_err(tool)?;
    let full =
        searchpix_core::BBox::new(0.0, 0.0, f64::from(img.width()), f64::from(img.height())).map_err(tool)?;
    let sample = TaskSample {
        qa_id: "demo".to_string(),
        task,
        image: ImageRef {
            image_id: "demo".to_string(),
            uri,
            width: img.width(),
            height: img.height(),
        },
        question: question.to_string(),
        gt_bbox: full,
        gt_mask: std::sync::Arc::new(searchpix_core::BinaryMask::zeros(img.height(), img.width())),
        options: None,
        answer_index: None,
        category: String::new(),
        target_name: String::new(),
        target_aliases: Vec::new(),
    };
    let outcome = engine.run_sample(&sample);
    println!("{}", outcome.record.to_json_line().trim_end());
    if let Some(b) = &outcome.bind {
        println!(
            "best {} {:?} fused {:.2}",
            b.best.candidate_id,
            b.best.bbox.to_array(),
            b.best_scores().fused
        );
    }
    match outcome.fatal_error() {
        Some(code) => Err(tool(anyhow!("demo failed: {code}"))),
        None => Ok(EXIT_OK),
    }
}
