//! Command-line driver: synthesize datasets, recover formulas, evaluate
//! expressions, and sweep over dataset sizes.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 missing input,
//! 4 runtime failure.

use clap::{Args, Parser, Subcommand};
use satform::config::RunConfig;
use satform::manifest::{Manifest, ManifestError};
use satform::rundir::{self, write_run_dir};
use satform::satf::{read_satf, write_satf};
use satform_core::expr::{self, Expr};
use satform_core::indices;
use satform_core::pipeline::{run_pipeline_with_samples, sampling_sweep};
use satform_core::raster::{synth_scene, Sample};
use satform_core::rng::{self, RngCore};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const EXIT_USAGE: u8 = 2;
const EXIT_MISSING: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(
    name = "satform",
    about = "Symbolic regression over synthetic multi-band rasters",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of .satf scenes plus manifest.json
    Synth(SynthArgs),
    /// Train the pipeline on a dataset and recover a formula
    Recover(RecoverArgs),
    /// Evaluate a formula (inline or from a task) against a dataset
    Eval(EvalArgs),
    /// Re-run recovery at several dataset fractions and tabulate metrics
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Index task supplying the generator formula (e.g. ndvi, savi, h)
    #[arg(long)]
    task: Option<String>,
    /// Inline generator formula; takes precedence over --task
    #[arg(long)]
    formula: Option<String>,
    /// Number of scenes
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Square scene side length in pixels
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Box-filter smoothing passes applied to each band
    #[arg(long, default_value_t = 2)]
    smoothness: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecoverArgs {
    /// Dataset directory containing manifest.json
    #[arg(long)]
    data: PathBuf,
    /// Run directory for artifacts
    #[arg(long)]
    out: PathBuf,
    /// Flat JSON config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved config and exit without touching anything
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    stage2_epochs: Option<usize>,
    #[arg(long)]
    beam_width: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory containing manifest.json
    #[arg(long)]
    data: PathBuf,
    /// Inline formula to evaluate; wins over --task with a warning
    #[arg(long)]
    formula: Option<String>,
    /// Evaluate a registry task's reference formula instead
    #[arg(long)]
    task: Option<String>,
    /// Optional directory for metrics.csv (printed to stdout regardless)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Index task to sweep
    #[arg(long)]
    task: String,
    /// Comma-separated dataset fractions in (0, 1]
    #[arg(long, value_delimiter = ',')]
    ratios: Vec<f64>,
    /// Full dataset size the ratios apply to
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for sweep entries
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory for sweep.csv
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Recover(a) => cmd_recover(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn missing(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_MISSING,
        message: message.into(),
    }
}

fn runtime(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_RUNTIME,
        message: message.into(),
    }
}

/// Resolve the generating expression from an optional formula/task pair.
/// Inline formulas win; `warn_both` emits the precedence warning.
fn resolve_generator(
    formula: Option<&str>,
    task: Option<&str>,
    warn_both: bool,
) -> Result<(Expr, Option<String>, Option<String>), CliError> {
    if let Some(text) = formula {
        if task.is_some() && warn_both {
            eprintln!("warning: both --formula and --task given; --formula wins");
        }
        let e = expr::parse(text)
            .map_err(|e| usage(format!("cannot parse formula at offset {}: {e}", e.offset)))?;
        return Ok((e, Some(text.to_string()), None));
    }
    let task = task.ok_or_else(|| usage("one of --task or --formula is required"))?;
    let spec = indices::index_spec(task).ok_or_else(|| {
        usage(format!(
            "unknown task '{task}'; known tasks: {}",
            indices::TASKS.join(", ")
        ))
    })?;
    Ok((spec.reference_expr, None, Some(task.to_string())))
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let (gen_expr, formula, task) =
        resolve_generator(a.formula.as_deref(), a.task.as_deref(), false)?;
    let bands = match &task {
        Some(t) => indices::index_spec(t).unwrap().required_bands as usize,
        None => gen_expr.max_band().max(1) as usize,
    };
    let (lo, hi) = match &task {
        Some(t) => indices::default_band_range(t),
        None => (0.05, 0.95),
    };
    if a.n == 0 {
        return Err(usage("--n must be positive"));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| runtime(format!("cannot create output: {e}")))?;
    let mut samples = Vec::with_capacity(a.n);
    for i in 0..a.n {
        // same per-sample stream derivation the core dataset generator uses,
        // so synth + recover reproduces an in-process pipeline run
        let scene_seed = rng::substream(a.seed, 1_000_003 + i as u64).next_u64();
        let r = synth_scene(scene_seed, a.size, a.size, bands, a.smoothness, lo, hi)
            .map_err(|e| usage(format!("invalid scene spec: {e:?}")))?;
        let name = format!("sample_{i:04}.satf");
        write_satf(&a.out.join(&name), &r)
            .map_err(|e| runtime(format!("cannot write {name}: {e}")))?;
        samples.push(name);
    }
    let manifest = Manifest {
        task,
        formula,
        seed: a.seed,
        height: a.size,
        width: a.size,
        bands,
        smoothness: a.smoothness,
        lo,
        hi,
        samples,
    };
    manifest
        .save(&a.out)
        .map_err(|e| runtime(format!("cannot write manifest: {e}")))?;
    println!("wrote {} scenes to {}", a.n, a.out.display());
    Ok(())
}

/// Load a dataset directory into pipeline samples plus its generator.
fn load_dataset(dir: &Path) -> Result<(Manifest, Expr, Vec<Sample>), CliError> {
    let manifest = Manifest::load(dir).map_err(|e| match e {
        ManifestError::Missing(_) => missing(e.to_string()),
        other => usage(other.to_string()),
    })?;
    let (gen_expr, _, _) = resolve_generator(
        manifest.formula.as_deref(),
        manifest.task.as_deref(),
        false,
    )?;
    let consts = gen_expr.constant_values();
    let skeleton = expr::to_tokens(&gen_expr);
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for name in &manifest.samples {
        let path = dir.join(name);
        if !path.exists() {
            return Err(missing(format!("scene file {} not found", path.display())));
        }
        let image = read_satf(&path).map_err(|e| runtime(format!("{name}: {e}")))?;
        let target = expr::eval(&gen_expr, &image, &consts)
            .map_err(|e| usage(format!("{name}: generator does not fit scene: {e}")))?;
        let mean = target.iter().sum::<f64>() / target.len() as f64;
        samples.push(Sample {
            image,
            target,
            skeleton: Some(skeleton.clone()),
            scalar_target: Some(mean),
        });
    }
    Ok((manifest, gen_expr, samples))
}

fn resolved_config(a: &RecoverArgs) -> Result<RunConfig, CliError> {
    let mut rc = match &a.config {
        Some(path) => {
            if !path.exists() {
                return Err(missing(format!("config file {} not found", path.display())));
            }
            RunConfig::load(path).map_err(|e| usage(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = a.seed {
        rc.seed = v;
    }
    if let Some(v) = a.lr {
        rc.lr = v;
    }
    if let Some(v) = a.stage1_epochs {
        rc.stage1_epochs = v;
    }
    if let Some(v) = a.stage2_epochs {
        rc.stage2_epochs = v;
    }
    if let Some(v) = a.beam_width {
        rc.beam_width = v;
    }
    Ok(rc)
}

fn cmd_recover(a: RecoverArgs) -> Result<(), CliError> {
    let mut rc = resolved_config(&a)?;
    if a.dry_run {
        let text = serde_json::to_string_pretty(&rc).expect("config serializes");
        println!("{text}");
        return Ok(());
    }
    let (manifest, _, samples) = load_dataset(&a.data)?;
    rc.task = manifest.task.clone();
    rc.n_samples = samples.len();
    rc.scene_side = manifest.width;
    let cfg = rc.to_train_config();
    let task_label = manifest.task.as_deref().unwrap_or("formula");

    let start = Instant::now();
    let result = run_pipeline_with_samples(&samples, manifest.bands as u8, &cfg)
        .map_err(|e| runtime(format!("pipeline failed: {e}")))?;
    let runtime_s = start.elapsed().as_secs_f64();

    write_run_dir(&a.out, task_label, &result, &rc, runtime_s)
        .map_err(|e| runtime(format!("cannot write run directory: {e}")))?;
    let r2 = result
        .held_out
        .r2
        .map(|v| format!("{v:.6}"))
        .unwrap_or_else(|| "undefined".into());
    println!(
        "recovered: {}\nheld-out R2 {r2}, MAE {:.6}, nodes {}",
        result.expr, result.held_out.mae, result.nodes
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let (eval_expr, _, _) = resolve_generator(a.formula.as_deref(), a.task.as_deref(), true)?;
    let consts = eval_expr.constant_values();
    let (_, _, samples) = load_dataset(&a.data)?;
    let mut pred_all = Vec::new();
    let mut target_all = Vec::new();
    for s in &samples {
        let pred = expr::eval(&eval_expr, &s.image, &consts)
            .map_err(|e| usage(format!("formula does not fit dataset: {e}")))?;
        pred_all.extend(pred);
        target_all.extend_from_slice(&s.target);
    }
    let m = satform_core::pipeline::metrics(&pred_all, &target_all);
    let nodes = eval_expr.node_count();
    let task_label = a.task.as_deref().unwrap_or("formula");
    let row = rundir::metrics_row(task_label, &m, nodes, 0.0);
    println!("{}", rundir::METRICS_HEADER);
    println!("{row}");
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out).map_err(|e| runtime(format!("cannot create output: {e}")))?;
        std::fs::write(
            out.join("metrics.csv"),
            format!("{}\n{row}\n", rundir::METRICS_HEADER),
        )
        .map_err(|e| runtime(format!("cannot write metrics: {e}")))?;
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), CliError> {
    if indices::index_spec(&a.task).is_none() {
        return Err(usage(format!("unknown task '{}'", a.task)));
    }
    if a.ratios.is_empty() {
        return Err(usage("--ratios requires at least one value"));
    }
    if a.ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        return Err(usage("ratios must lie in (0, 1]"));
    }
    if a.jobs == 0 {
        return Err(usage("--jobs must be positive"));
    }
    let sizes: Vec<usize> = a
        .ratios
        .iter()
        .map(|r| ((r * a.n as f64).round() as usize).max(2))
        .collect();
    let base = RunConfig {
        seed: a.seed,
        ..RunConfig::default()
    }
    .to_train_config();

    let points = if a.jobs <= 1 {
        sampling_sweep(&a.task, &sizes, &base)
            .map_err(|e| runtime(format!("sweep failed: {e}")))?
    } else {
        // one worker per entry, capped at --jobs in flight
        let mut points = Vec::new();
        for chunk in sizes.chunks(a.jobs) {
            let mut handles = Vec::new();
            for &n in chunk {
                let task = a.task.clone();
                let base = base.clone();
                handles.push(std::thread::spawn(move || {
                    sampling_sweep(&task, &[n], &base)
                }));
            }
            for h in handles {
                let mut part = h
                    .join()
                    .map_err(|_| runtime("sweep worker panicked"))?
                    .map_err(|e| runtime(format!("sweep failed: {e}")))?;
                points.append(&mut part);
            }
        }
        points
    };

    std::fs::create_dir_all(&a.out).map_err(|e| runtime(format!("cannot create output: {e}")))?;
    let mut csv = String::from("n_samples,r2,mae,rmse,nodes\n");
    for p in &points {
        let r2 = p
            .metrics
            .r2
            .map(|v| format!("{v}"))
            .unwrap_or_else(|| "undefined".into());
        csv.push_str(&format!(
            "{},{r2},{},{},{}\n",
            p.n_samples, p.metrics.mae, p.metrics.rmse, p.nodes
        ));
    }
    std::fs::write(a.out.join("sweep.csv"), &csv)
        .map_err(|e| runtime(format!("cannot write sweep.csv: {e}")))?;
    print!("{csv}");
    Ok(())
}
