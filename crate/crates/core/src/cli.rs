//! Command-line surface: `synth`, `select`, `run`, `eval` and `export-preset`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//!
//! Environment:
//! - `SSR_API_KEY` bearer token for remote generation backends (overridable per backend)
//! - `SSR_EMBED_API_KEY` bearer token for the embedding endpoint
//! - `SSR_EMBED_ENDPOINT` embedding endpoint used when `--embed-endpoint` is absent
//! - `SSR_ENDPOINT_<NAME>` replaces the endpoint of remote backend `<name>` (upper-cased, `-` as `_`)

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{
    build_demo_pool, load_dataset, order_preset, ratio_count, save_dataset, ContentMode,
    CurriculumConfig, DemoOutputs, DemoSource, Instance, SelectionMode, Strategy, TaskSpec,
};
use crate::embed::{Embedder, LocalEmbedder, RemoteEmbedder, DEFAULT_DIMENSION};
use crate::genbackend::{
    BackendDescriptor, BackendRegistry, BackendsFile, GenerationParams, ModelHandle, Role,
};
use crate::metrics::{
    aggregate_runs, evaluate_model, stage_table, MetricSummary, PerformanceMatrix,
};
use crate::refine::refine_pool;
use crate::schedule::{
    default_toy_capacity, select_subset, synthesis_job, Curriculum, ExternalTrainer, Learner,
    SelectionContext, ToyTrainer,
};
use crate::synth::synthesize_pool;
use crate::toylab::{preset, preset_base_descriptor, preset_tasks, toy_as_backend, ToyLearner};

#[derive(Debug, Parser)]
#[command(
    name = "ssr",
    version,
    about = "Self-synthesized rehearsal for continual instruction tuning"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize (and refine) rehearsal instances for one task.
    Synth(SynthArgs),
    /// Select a subset of a dataset near K-means centroids or at random.
    Select(SelectArgs),
    /// Run a whole curriculum and write a run directory.
    Run(RunArgs),
    /// Print AR/FWT/BWT of a matrix, a run or several runs.
    Eval(EvalArgs),
    /// Write a toy preset as a data directory with backends and config files.
    ExportPreset(ExportArgs),
}

/// Where task data, backends and the config come from.
#[derive(Debug, Args)]
struct Sources {
    /// Built-in toy preset (toy3 or toy5).
    #[arg(long)]
    preset: Option<String>,
    /// Directory with one `<task>/{train,eval,held_out}.jsonl` folder per task.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Curriculum config (TOML); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Backend descriptors (TOML `[[backend]]` tables).
    #[arg(long)]
    backends: Option<PathBuf>,
    /// OpenAI-compatible embedding endpoint; local hashing embeddings otherwise.
    #[arg(long)]
    embed_endpoint: Option<String>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    sources: Sources,
    /// Single training file of the task, instead of --preset / --data-dir.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Task to synthesize for (defaults to the first task of the order).
    #[arg(long)]
    task: Option<String>,
    /// Stage stamped on generated instances.
    #[arg(long, default_value_t = 2)]
    stage: usize,
    /// Successes wanted before oversampling (default round(r_hat * |train|)).
    #[arg(long)]
    target: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    icl_model: Option<String>,
    /// Backend used for refinement; defaults to a toy learner trained on the task.
    #[arg(long)]
    latest: Option<String>,
    #[arg(long)]
    no_refine: bool,
    #[arg(long, value_parser = parse_enum::<DemoOutputs>)]
    demo_outputs: Option<DemoOutputs>,
    #[arg(long, value_parser = parse_enum::<DemoSource>)]
    demo_source: Option<DemoSource>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    total: usize,
    #[arg(long, default_value = "kmeans", value_parser = parse_enum::<SelectionMode>)]
    selection: SelectionMode,
    /// Real instances the clustering is fit on (supervised_kmeans).
    #[arg(long)]
    real: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    clusters: usize,
    #[arg(long, default_value = "input_and_output", value_parser = parse_enum::<ContentMode>)]
    content_mode: ContentMode,
    #[arg(long, default_value_t = DEFAULT_DIMENSION)]
    dimension: usize,
    #[arg(long)]
    embed_endpoint: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Selection manifest (default: `<out>.manifest.json`).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    sources: Sources,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// order1/order2/order3, or a comma-separated task list.
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    r_hat: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    no_refine: bool,
    #[arg(long, value_parser = parse_enum::<SelectionMode>)]
    selection: Option<SelectionMode>,
    #[arg(long, value_parser = parse_enum::<DemoSource>)]
    demo_source: Option<DemoSource>,
    #[arg(long, value_parser = parse_enum::<DemoOutputs>)]
    demo_outputs: Option<DemoOutputs>,
    #[arg(long, value_parser = parse_enum::<ContentMode>)]
    content_mode: Option<ContentMode>,
    #[arg(long)]
    icl_model: Option<String>,
    #[arg(long)]
    full_matrix: bool,
    #[arg(long)]
    record_stage0: bool,
    /// Replace sampled real outputs with latest-model generations.
    #[arg(long)]
    regenerate_outputs: bool,
    /// Trainer invoked as `<cmd> <stage> <mixture.jsonl>`; its last stdout
    /// line is `<endpoint> [model]` of the resulting checkpoint.
    #[arg(long)]
    external_trainer: Option<String>,
    /// Backend name of the untrained model (required with --external-trainer).
    #[arg(long)]
    initial_model: Option<String>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Replace an existing run directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Performance matrix (JSON).
    #[arg(long, conflicts_with_all = ["run", "aggregate"])]
    matrix: Option<PathBuf>,
    /// Run directory containing report.json.
    #[arg(long, conflicts_with = "aggregate")]
    run: Option<PathBuf>,
    /// Run reports (or run directories) to average.
    #[arg(long, num_args = 1..)]
    aggregate: Vec<PathBuf>,
    /// CSV metric table to write.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Score this backend on --dataset instead.
    #[arg(long, requires_all = ["dataset", "backends"])]
    model: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    backends: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    preset: String,
    #[arg(long)]
    out: PathBuf,
}

// ---------------------------------------------------------------------------
// Errors and exit codes

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome<T = ()> = Result<T, Failure>;

trait Classify<T> {
    fn usage(self) -> Outcome<T>;
    fn runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Outcome<T> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn runtime(self) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn usage_err<T>(msg: impl std::fmt::Display) -> Outcome<T> {
    Err(Failure::Usage(anyhow!("{msg}")))
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown value {s:?}"))
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::parse(s).ok_or_else(|| {
        format!("unknown strategy {s:?} (expected non_rehearsal, rand_sel, kmeans_sel, ssr or mtl)")
    })
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Select(a) => cmd_select(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportPreset(a) => cmd_export_preset(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

// ---------------------------------------------------------------------------
// Shared loading

fn read_config(path: Option<&Path>) -> Outcome<CurriculumConfig> {
    let Some(path) = path else {
        return Ok(CurriculumConfig::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .usage()?;
    toml::from_str(&text)
        .with_context(|| format!("invalid config {}", path.display()))
        .usage()
}

fn load_task_dir(dir: &Path) -> Outcome<Vec<TaskSpec>> {
    let entries = fs::read_dir(dir)
        .with_context(|| format!("cannot read data directory {}", dir.display()))
        .usage()?;
    let mut names: Vec<String> = Vec::new();
    for e in entries {
        let e = e.context("reading data directory").usage()?;
        if e.path().join("train.jsonl").is_file() {
            names.push(e.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    if names.is_empty() {
        return usage_err(format!("{} holds no <task>/train.jsonl", dir.display()));
    }
    let mut tasks = Vec::new();
    for name in names {
        let base = dir.join(&name);
        let split = |file: &str, required: bool| -> Outcome<Vec<Instance>> {
            let p = base.join(file);
            if !required && !p.exists() {
                return Ok(Vec::new());
            }
            load_dataset(&p).usage()
        };
        let mut spec = TaskSpec::new(
            &name,
            split("train.jsonl", true)?,
            split("eval.jsonl", true)?,
        );
        spec.held_out = split("held_out.jsonl", false)?;
        tasks.push(spec);
    }
    Ok(tasks)
}

fn load_tasks(s: &Sources) -> Outcome<Vec<TaskSpec>> {
    match (&s.preset, &s.data_dir) {
        (Some(_), Some(_)) => usage_err("--preset and --data-dir are mutually exclusive"),
        (Some(name), None) => preset(name)
            .ok_or_else(|| anyhow!("unknown preset {name:?} (expected toy3 or toy5)"))
            .usage(),
        (None, Some(dir)) => load_task_dir(dir),
        (None, None) => usage_err("task data needed: pass --preset or --data-dir"),
    }
}

fn endpoint_override(name: &str) -> Option<String> {
    let key = format!("SSR_ENDPOINT_{}", name.to_uppercase().replace('-', "_"));
    std::env::var(key).ok().filter(|v| !v.trim().is_empty())
}

fn load_registry(s: &Sources) -> Outcome<BackendRegistry> {
    let mut file = match &s.backends {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read backends file {}", path.display()))
                .usage()?;
            toml::from_str::<BackendsFile>(&text)
                .with_context(|| format!("invalid backends file {}", path.display()))
                .usage()?
        }
        None if s.preset.is_some() => BackendsFile {
            backend: vec![preset_base_descriptor()],
        },
        None => return usage_err("--backends is required unless --preset is given"),
    };
    for d in &mut file.backend {
        if let Some(url) = endpoint_override(&d.name) {
            d.endpoint = Some(url);
        }
    }
    BackendRegistry::from_file(&file).usage()
}

fn make_embedder(endpoint: Option<&str>, dimension: usize) -> Outcome<Box<dyn Embedder>> {
    let env = std::env::var("SSR_EMBED_ENDPOINT")
        .ok()
        .filter(|v| !v.trim().is_empty());
    match endpoint.map(str::to_string).or(env) {
        Some(url) => Ok(Box::new(RemoteEmbedder::new(url).usage()?)),
        None => Ok(Box::new(LocalEmbedder { dimension })),
    }
}

fn resolve_order(spec: &str, available: &[String]) -> Vec<String> {
    match order_preset(spec) {
        Some(order) => order
            .into_iter()
            .filter(|t| available.contains(t))
            .collect(),
        None => spec
            .split(',')
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect(),
    }
}

fn default_order(s: &Sources, tasks: &[TaskSpec]) -> Vec<String> {
    s.preset
        .as_deref()
        .and_then(preset_tasks)
        .unwrap_or_else(|| tasks.iter().map(|t| t.task.clone()).collect())
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))
            .runtime()?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .runtime()
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.2}"))
}

fn print_summary(m: &MetricSummary) {
    println!("AR  {}", fmt_metric(m.ar));
    println!("FWT {}", fmt_metric(m.fwt));
    println!("BWT {}", fmt_metric(m.bwt));
}

// ---------------------------------------------------------------------------
// synth

fn cmd_synth(a: SynthArgs) -> Outcome {
    let mut config = read_config(a.sources.config.as_deref())?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(m) = a.icl_model {
        config.icl_model = m;
    }
    if let Some(d) = a.demo_outputs {
        config.demo_outputs = d;
    }
    if let Some(d) = a.demo_source {
        config.demo_source = d;
    }
    config.refine = !a.no_refine;

    let tasks = match &a.dataset {
        Some(path) => {
            let train = load_dataset(path).usage()?;
            let name = a
                .task
                .clone()
                .or_else(|| train.first().map(|i| i.task.clone()))
                .ok_or_else(|| anyhow!("{} is empty", path.display()))
                .usage()?;
            vec![TaskSpec::new(name, train, Vec::new())]
        }
        None => load_tasks(&a.sources)?,
    };
    let task_name = match &a.task {
        Some(t) => t.clone(),
        None if config.order.is_empty() => default_order(&a.sources, &tasks)[0].clone(),
        None => config.order[0].clone(),
    };
    let mut spec = tasks
        .into_iter()
        .find(|t| t.task == task_name)
        .ok_or_else(|| anyhow!("no data for task {task_name:?}"))
        .usage()?;
    if config.order.is_empty() {
        config.order = vec![task_name.clone()];
    }
    config.validate().usage()?;

    let registry = if a.sources.backends.is_none() && a.sources.preset.is_none() {
        // a lone dataset still gets the toy base model
        BackendRegistry::from_file(&BackendsFile {
            backend: vec![preset_base_descriptor()],
        })
        .usage()?
    } else {
        load_registry(&a.sources)?
    };
    let icl = registry.get(&config.icl_model).usage()?.clone();
    spec.demo_pool = build_demo_pool(
        &spec,
        config.demo_fraction,
        config.demo_source,
        config.k,
        config.seed,
    )
    .usage()?;

    let target = a
        .target
        .unwrap_or_else(|| ratio_count(config.r_hat, spec.train.len()));
    if target == 0 {
        return usage_err("target is 0; nothing to synthesize");
    }
    let job = synthesis_job(&config, &spec, a.stage, target);
    let synthesized = synthesize_pool(&job, &icl).runtime()?;
    save_dataset(&synthesized.instances, a.out.join("synthetic_raw.jsonl")).runtime()?;

    let mut refine_stats = None;
    let mut latest_name = None;
    if config.refine {
        let latest = match &a.latest {
            Some(name) => registry.get(name).usage()?.clone(),
            None => {
                let mut learner = ToyLearner::new(
                    config.toy.clone(),
                    default_toy_capacity(std::slice::from_ref(&spec)),
                );
                learner.train(&spec.train);
                toy_as_backend(&learner, format!("toy-{}", spec.task), Role::Latest)
            }
        };
        let refined = refine_pool(&synthesized.instances, &latest).runtime()?;
        save_dataset(&refined.instances, a.out.join("synthetic_refined.jsonl")).runtime()?;
        refine_stats = Some(refined.stats);
        latest_name = Some(latest.name.clone());
    }

    let s = &synthesized.stats;
    let (refined, dropped) = refine_stats.map_or((0, 0), |r| (r.refined, r.dropped));
    println!(
        "generated {} parsed {} deduped {} refined {} dropped {}",
        s.attempts, s.parsed, s.duplicates, refined, dropped
    );
    write_json(
        &a.out.join("manifest.json"),
        &json!({
            "task": spec.task,
            "stage": a.stage,
            "target": target,
            "icl_model": config.icl_model,
            "latest_model": latest_name,
            "synthesis": s,
            "refine": refine_stats,
            "config": config,
        }),
    )
}

// ---------------------------------------------------------------------------
// select

fn cmd_select(a: SelectArgs) -> Outcome {
    let pool = load_dataset(&a.input).usage()?;
    if a.total > pool.len() {
        return usage_err(format!(
            "--total {} exceeds the {} instances of {}",
            a.total,
            pool.len(),
            a.input.display()
        ));
    }
    if a.clusters == 0 {
        return usage_err("--clusters must be >= 1");
    }
    let real = match (&a.real, a.selection) {
        (Some(p), _) => Some(load_dataset(p).usage()?),
        (None, SelectionMode::SupervisedKmeans) => {
            return usage_err("--selection supervised_kmeans needs --real")
        }
        (None, _) => None,
    };
    let embedder = make_embedder(a.embed_endpoint.as_deref(), a.dimension)?;
    let ctx = SelectionContext {
        embedder: embedder.as_ref(),
        clusters: a.clusters,
        content_mode: a.content_mode,
    };
    let (chosen, summary) =
        select_subset(&pool, a.total, a.selection, real.as_deref(), &ctx, a.seed).runtime()?;
    save_dataset(&chosen, &a.out).runtime()?;
    let manifest = a.manifest.clone().unwrap_or_else(|| {
        let mut name = a.out.clone().into_os_string();
        name.push(".manifest.json");
        PathBuf::from(name)
    });
    write_json(
        &manifest,
        &json!({
            "input": a.input,
            "real": a.real,
            "total": a.total,
            "selection": a.selection,
            "clusters": a.clusters,
            "content_mode": a.content_mode,
            "dimension": a.dimension,
            "embed_endpoint": a.embed_endpoint,
            "seed": a.seed,
            "selected": chosen.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(),
            "summary": summary,
        }),
    )?;
    println!("selected {} of {}", chosen.len(), pool.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// run

fn external_handle(stage: usize, line: &str) -> Result<ModelHandle, String> {
    let mut parts = line.split_whitespace();
    let endpoint = parts.next().ok_or("trainer printed no endpoint")?;
    let mut desc = BackendDescriptor::remote(format!("stage-{stage}"), endpoint);
    desc.model = parts.next().map(str::to_string);
    desc.role = Role::Latest;
    BackendRegistry::new()
        .register_backend(&desc)
        .map_err(|e| e.to_string())
}

fn run_trainer(cmd: &str, stage: usize, mixture: &Path) -> Result<ModelHandle, String> {
    let mut words = cmd.split_whitespace();
    let program = words.next().ok_or("empty trainer command")?;
    let out = Process::new(program)
        .args(words)
        .arg(stage.to_string())
        .arg(mixture)
        .output()
        .map_err(|e| format!("cannot start {program}: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "{program} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("");
    external_handle(stage, line)
}

fn cmd_run(a: RunArgs) -> Outcome {
    let mut config = read_config(a.sources.config.as_deref())?;
    let tasks = load_tasks(&a.sources)?;
    let available: Vec<String> = tasks.iter().map(|t| t.task.clone()).collect();
    if let Some(o) = &a.order {
        config.order = resolve_order(o, &available);
    } else if config.order.is_empty() {
        config.order = default_order(&a.sources, &tasks);
    }
    if let Some(v) = a.strategy {
        config.strategy = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.r {
        config.r = v;
    }
    if let Some(v) = a.r_hat {
        config.r_hat = v;
    }
    if let Some(v) = a.k {
        config.k = v;
    }
    if let Some(v) = a.clusters {
        config.c = v;
    }
    if let Some(v) = a.selection {
        config.selection = v;
    }
    if let Some(v) = a.demo_source {
        config.demo_source = v;
    }
    if let Some(v) = a.demo_outputs {
        config.demo_outputs = v;
    }
    if let Some(v) = a.content_mode {
        config.content_mode = v;
    }
    if let Some(v) = a.icl_model {
        config.icl_model = v;
    }
    config.refine &= !a.no_refine;
    config.full_matrix |= a.full_matrix;
    config.record_stage0 |= a.record_stage0;
    config.regenerate_outputs |= a.regenerate_outputs;
    config.validate().usage()?;

    let registry = load_registry(&a.sources)?;
    let icl = registry.get(&config.icl_model).usage()?.clone();
    let embedder = make_embedder(a.sources.embed_endpoint.as_deref(), config.embed_dimension)?;

    if a.out.exists() {
        let empty = fs::read_dir(&a.out)
            .map(|mut d| d.next().is_none())
            .unwrap_or(false);
        if !empty {
            if !a.overwrite {
                return usage_err(format!(
                    "{} exists; pass --overwrite to replace it",
                    a.out.display()
                ));
            }
            fs::remove_dir_all(&a.out)
                .with_context(|| format!("cannot remove {}", a.out.display()))
                .runtime()?;
        }
    }

    let learner: Box<dyn Learner> = match &a.external_trainer {
        Some(cmd) => {
            let name = a
                .initial_model
                .as_deref()
                .ok_or_else(|| anyhow!("--external-trainer needs --initial-model"))
                .usage()?;
            let initial = registry.get(name).usage()?.clone();
            let cmd = cmd.clone();
            Box::new(ExternalTrainer::new(
                initial,
                move |stage: usize, path: &Path| run_trainer(&cmd, stage, path),
            ))
        }
        None => {
            let capacity = config
                .toy
                .capacity
                .unwrap_or_else(|| default_toy_capacity(&tasks));
            Box::new(ToyTrainer::new(ToyLearner::new(
                config.toy.clone(),
                capacity,
            )))
        }
    };
    let curriculum = Curriculum::new(config, tasks, icl, embedder.as_ref(), learner)
        .usage()?
        .with_run_dir(&a.out);
    let (_, report) = curriculum.run().runtime()?;
    println!(
        "strategy {} over {}",
        report.strategy,
        report.tasks.join(" -> ")
    );
    print_summary(&report.metrics);
    println!("report {}", a.out.join("report.json").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Deserialize)]
struct ReportView {
    matrix: PerformanceMatrix,
    metrics: MetricSummary,
}

fn read_report(path: &Path) -> Outcome<ReportView> {
    let file = if path.is_dir() {
        path.join("report.json")
    } else {
        path.to_path_buf()
    };
    if !file.is_file() {
        return usage_err(format!("no run report at {}", file.display()));
    }
    let text = fs::read_to_string(&file)
        .with_context(|| format!("cannot read {}", file.display()))
        .usage()?;
    serde_json::from_str(&text)
        .with_context(|| format!("invalid run report {}", file.display()))
        .usage()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.4}"))
}

fn write_table(path: &Path, header: [&str; 4], rows: &[(String, MetricSummary)]) -> Outcome {
    let run = || -> anyhow::Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        for (label, m) in rows {
            w.write_record([label.clone(), cell(m.ar), cell(m.fwt), cell(m.bwt)])?;
        }
        w.flush()?;
        Ok(())
    };
    run()
        .with_context(|| format!("cannot write table {}", path.display()))
        .runtime()
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    if let Some(name) = &a.model {
        let (dataset, backends) = (a.dataset.as_ref().unwrap(), a.backends.clone());
        let registry = load_registry(&Sources {
            preset: None,
            data_dir: None,
            config: None,
            backends,
            embed_endpoint: None,
        })?;
        let model = registry.get(name).usage()?;
        let data = load_dataset(dataset).usage()?;
        let score = evaluate_model(model, &data, &GenerationParams::greedy()).runtime()?;
        println!("ROUGE-L {score:.2}");
        return Ok(());
    }

    if !a.aggregate.is_empty() {
        let mut rows = Vec::new();
        for p in &a.aggregate {
            rows.push((p.display().to_string(), read_report(p)?.metrics));
        }
        let avg = |f: fn(&MetricSummary) -> Option<f64>| -> Option<f64> {
            let vals: Option<Vec<f64>> = rows.iter().map(|(_, m)| f(m)).collect();
            vals.and_then(|v| aggregate_runs(&v).ok())
        };
        let mean = MetricSummary {
            ar: avg(|m| m.ar),
            fwt: avg(|m| m.fwt),
            bwt: avg(|m| m.bwt),
            undefined: Vec::new(),
        };
        println!("{:<40} {:>9} {:>9} {:>9}", "run", "AR", "FWT", "BWT");
        for (label, m) in rows
            .iter()
            .chain(std::iter::once(&("Avg".to_string(), mean.clone())))
        {
            println!(
                "{:<40} {:>9} {:>9} {:>9}",
                label,
                fmt_metric(m.ar),
                fmt_metric(m.fwt),
                fmt_metric(m.bwt)
            );
        }
        if let Some(t) = &a.table {
            rows.push(("Avg".into(), mean));
            write_table(t, ["run", "ar", "fwt", "bwt"], &rows)?;
        }
        return Ok(());
    }

    let matrix = match (&a.matrix, &a.run) {
        (Some(p), _) => PerformanceMatrix::load(p).usage()?,
        (None, Some(dir)) => {
            if !dir.join("report.json").is_file() {
                return usage_err(format!("{} has no report.json", dir.display()));
            }
            read_report(dir)?.matrix
        }
        (None, None) => return usage_err("pass --matrix, --run, --aggregate or --model"),
    };
    print_summary(&MetricSummary::of(&matrix));
    if let Some(t) = &a.table {
        let rows: Vec<(String, MetricSummary)> = stage_table(&matrix)
            .into_iter()
            .map(|(s, m)| (s.to_string(), m))
            .collect();
        write_table(t, ["stage", "ar", "fwt", "bwt"], &rows)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// export-preset

fn cmd_export_preset(a: ExportArgs) -> Outcome {
    let tasks = preset(&a.preset)
        .ok_or_else(|| anyhow!("unknown preset {:?} (expected toy3 or toy5)", a.preset))
        .usage()?;
    for t in &tasks {
        let dir = a.out.join(&t.task);
        save_dataset(&t.train, dir.join("train.jsonl")).runtime()?;
        save_dataset(&t.eval, dir.join("eval.jsonl")).runtime()?;
        save_dataset(&t.held_out, dir.join("held_out.jsonl")).runtime()?;
    }
    let backends = BackendsFile {
        backend: vec![preset_base_descriptor()],
    };
    let config = CurriculumConfig {
        order: preset_tasks(&a.preset).unwrap_or_default(),
        ..Default::default()
    };
    let write = |name: &str, text: String| {
        fs::write(a.out.join(name), text)
            .with_context(|| format!("cannot write {}", a.out.join(name).display()))
            .runtime()
    };
    write(
        "backends.toml",
        toml::to_string(&backends)
            .context("serializing backends")
            .runtime()?,
    )?;
    write("config.toml", config.to_toml_string())?;
    println!("wrote {} tasks to {}", tasks.len(), a.out.display());
    Ok(())
}
