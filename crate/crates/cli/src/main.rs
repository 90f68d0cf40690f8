mod config;
mod params;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use serde::Serialize;
use vacode::evalharness::{
    self, ablate_distance, analyze_gain, calibrate_samples, circular_eval, evaluate,
    generate_toy_dataset, generate_toy_mcq, load_dataset, load_images, write_ablation,
    write_partial, write_report, EvalError, EvalSample, Method,
};
use vacode::{
    apply, open_backend, AugKind, AugmentationOp, Backend, BackendDescriptor, CalibrationReport,
    DecodingConfig, ImageBuffer, Question, Strategy, ToyMode, ToyVlm,
};

use config::{resolve_out, resolve_tau, resolve_workers, DecodeArgs, FileConfig, Resolved};
use params::AugParams;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or settings; exit code 2.
    Usage(String),
    /// Failure while doing the work; exit code 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "vacode",
    version,
    about = "Contrastive decoding with visual augmentations"
)]
struct Cli {
    /// TOML file with default settings (flags and env take precedence).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply one augmentation to a PNG.
    Augment {
        #[arg(long, visible_alias = "in")]
        image: PathBuf,
        #[arg(long)]
        kind: AugKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        params: AugParams,
    },
    /// Serve the toy model over HTTP.
    ServeToy {
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Strong answer prior, so regular decoding is often wrong.
        #[arg(long)]
        hard: bool,
    },
    /// Decode one image/question pair.
    Decode {
        #[command(flatten)]
        args: DecodeArgs,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        question: String,
        /// Options as `A=text`; repeat for each.
        #[arg(long = "option")]
        options: Vec<String>,
        /// Plain decoding without contrast.
        #[arg(long)]
        regular: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a method on a dataset and write reports.
    Eval {
        #[command(flatten)]
        args: DecodeArgs,
        #[command(flatten)]
        data: DataArgs,
        /// regular, vacode_all, vacode_selection or single:<kind>.
        #[arg(long, default_value = "vacode_all")]
        method: String,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Score multiple-choice samples under every option rotation.
        #[arg(long)]
        circular: bool,
        /// Calibration report from `vacode calibrate` (for vacode_selection).
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Calibrate on this dataset instead (for vacode_selection).
        #[arg(long)]
        calib_dataset: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Count step-1 selections and keep the augmentations above threshold.
    Calibrate {
        #[command(flatten)]
        args: DecodeArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Mean Gain of the selected augmentation under every distance metric.
    AblateDistance {
        #[command(flatten)]
        args: DecodeArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Write the synthetic paired yes/no dataset (and optionally MCQs).
    GenToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write this many two-option questions to mcq.jsonl.
        #[arg(long)]
        mcq: Option<usize>,
    },
}

#[derive(clap::Args)]
struct DataArgs {
    /// JSONL dataset.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    engine_version: &'a str,
    command: &'a str,
    backend: BackendRecord,
    config: &'a DecodingConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<String>,
    seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
}

#[derive(Serialize)]
struct BackendRecord {
    endpoint: String,
    #[serde(flatten)]
    descriptor: BackendDescriptor,
}

fn write_run(dir: &Path, record: &RunRecord<'_>) -> CliResult {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut body = serde_json::to_string_pretty(record).context("serializing run.json")?;
    body.push('\n');
    std::fs::write(dir.join("run.json"), body)
        .with_context(|| format!("writing {}/run.json", dir.display()))?;
    Ok(())
}

fn connect(resolved: &Resolved) -> CliResult<(Arc<dyn Backend>, BackendRecord)> {
    let backend = open_backend(&resolved.backend)
        .map_err(|e| CliError::Usage(format!("invalid backend: {e}")))?;
    let descriptor = backend.info().context("querying backend info")?;
    Ok((
        backend,
        BackendRecord {
            endpoint: resolved.backend.clone(),
            descriptor,
        },
    ))
}

/// A method name; `Selection` still needs a calibration report.
enum MethodSpec {
    Ready(Method),
    Selection,
}

fn parse_method(name: &str) -> CliResult<MethodSpec> {
    match name {
        "regular" => Ok(MethodSpec::Ready(Method::Regular)),
        "vacode_all" => Ok(MethodSpec::Ready(Method::VacodeAll)),
        "vacode_selection" => Ok(MethodSpec::Selection),
        other => match other.strip_prefix("single:") {
            Some(kind) => kind
                .parse::<AugKind>()
                .map(|k| MethodSpec::Ready(Method::Single(AugmentationOp::of_kind(k))))
                .map_err(|e| CliError::Usage(format!("invalid method: {e}"))),
            None => Err(CliError::Usage(format!(
                "invalid method: {other:?} (expected regular, vacode_all, vacode_selection or single:<kind>)"
            ))),
        },
    }
}

fn parse_options(raw: &[String]) -> CliResult<Vec<(String, String)>> {
    raw.iter()
        .map(|o| {
            o.split_once('=')
                .map(|(l, t)| (l.trim().to_string(), t.trim().to_string()))
                .ok_or_else(|| {
                    CliError::Usage(format!("invalid option: {o:?} (expected LETTER=text)"))
                })
        })
        .collect()
}

fn eval_error(e: EvalError, out: &Path) -> CliError {
    if let EvalError::Aborted { partial, .. } = &e {
        if write_partial(out, partial).is_ok() {
            eprintln!(
                "wrote {} completed records to {}/partial_records.jsonl",
                partial.len(),
                out.display()
            );
        }
    }
    match e {
        EvalError::Parse { .. }
        | EvalError::MissingImage(_)
        | EvalError::Invalid(_)
        | EvalError::NotMcq(_) => CliError::Usage(format!("dataset: {e}")),
        e => CliError::Runtime(e.into()),
    }
}

fn load(path: &Path, out: &Path) -> CliResult<(Vec<EvalSample>, Vec<ImageBuffer>)> {
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "dataset not found: {}",
            path.display()
        )));
    }
    let samples = load_dataset(path).map_err(|e| eval_error(e, out))?;
    let images = load_images(&samples).map_err(|e| eval_error(e, out))?;
    Ok((samples, images))
}

fn run_calibration(
    samples: &[EvalSample],
    images: &[ImageBuffer],
    cfg: &DecodingConfig,
    backend: &dyn Backend,
    tau: f64,
) -> CliResult<CalibrationReport> {
    Ok(calibrate_samples(samples, images, cfg, backend, tau).context("calibration")?)
}

fn seed_list(base: u64, count: u64) -> CliResult<Vec<u64>> {
    if count == 0 {
        return Err(CliError::Usage("invalid seeds: must be >= 1".into()));
    }
    Ok((0..count).map(|i| base.wrapping_add(i)).collect())
}

fn cmd_augment(
    image: &Path,
    kind: AugKind,
    params: &AugParams,
    out: &Path,
    seed: u64,
) -> CliResult {
    let aug = params.build(kind).map_err(CliError::Usage)?;
    let img =
        ImageBuffer::read_png(image).with_context(|| format!("reading {}", image.display()))?;
    let op = AugmentationOp::new(aug, seed);
    let result = apply(&op, &img).context("augmenting")?;
    result
        .write_png(out)
        .with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_serve_toy(host: &str, port: u16, hard: bool) -> CliResult {
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::Usage(format!("invalid host/port: {e}")))?;
    let mode = if hard { ToyMode::Hard } else { ToyMode::Normal };
    vacode::backend::server::serve_forever(Arc::new(ToyVlm::new(mode)), addr).context("serving")?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_decode(
    file: &FileConfig,
    args: &DecodeArgs,
    image: &Path,
    question: &str,
    options: &[String],
    regular: bool,
    out: Option<PathBuf>,
) -> CliResult {
    let resolved = args.resolve(file)?;
    let out = resolve_out(out, file, "vacode-out");
    let question = Question::with_options(question, parse_options(options)?);
    let img =
        ImageBuffer::read_png(image).with_context(|| format!("reading {}", image.display()))?;
    let (backend, record) = connect(&resolved)?;
    let cfg = &resolved.decoding;
    let result = if regular {
        vacode::decode_regular(&img, &question, cfg, backend.as_ref())
    } else {
        vacode::decode(&img, &question, cfg, backend.as_ref())
    }
    .context("decoding")?;

    println!("answer: {}", result.answer);
    if let Some(op) = &result.trace.chosen_aug {
        println!("chosen: {op}");
        println!("step-1 distances ({}):", cfg.metric);
        for d in &result.trace.distances_at_t1 {
            println!("  {:<8} {}", d.aug, evalharness::format_f(d.distance));
        }
    }
    write_run(
        &out,
        &RunRecord {
            engine_version: vacode::VERSION,
            command: "decode",
            backend: record,
            config: cfg,
            method: Some(if regular { "regular" } else { "vacode_all" }.into()),
            seeds: vec![cfg.seed],
            dataset: None,
            tau: None,
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    file: &FileConfig,
    args: &DecodeArgs,
    data: &DataArgs,
    method: &str,
    seeds: u64,
    circular: bool,
    calibration: Option<&Path>,
    calib_dataset: Option<&Path>,
    tau: Option<f64>,
) -> CliResult {
    let resolved = args.resolve(file)?;
    let workers = resolve_workers(data.workers, file)?;
    let out = resolve_out(data.out.clone(), file, "vacode-out");
    let seeds = seed_list(resolved.decoding.seed, seeds)?;
    let spec = parse_method(method)?;
    let mut cfg = resolved.decoding.clone();
    let mut tau_used = None;
    let (samples, images) = load(&data.dataset, &out)?;
    let (backend, record) = connect(&resolved)?;

    let method = match spec {
        MethodSpec::Ready(m) => m,
        MethodSpec::Selection => {
            cfg.strategy = Strategy::Selection;
            Method::VacodeSelection(match (calibration, calib_dataset) {
            (Some(path), None) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid calibration: {e}")))?
            }
            (None, Some(path)) => {
                let tau = resolve_tau(tau, file)?;
                tau_used = Some(tau);
                let (cs, ci) = load(path, &out)?;
                let report = run_calibration(&cs, &ci, &cfg, backend.as_ref(), tau)?;
                write_json(&out, "calibration.json", &report)?;
                report
            }
            _ => {
                return Err(CliError::Usage(
                    "invalid calibration: vacode_selection needs exactly one of --calibration or --calib-dataset".into(),
                ))
            }
            })
        }
    };

    let run = if circular { circular_eval } else { evaluate };
    let report = run(
        &samples,
        &images,
        &method,
        &cfg,
        backend.as_ref(),
        &seeds,
        workers,
    )
    .map_err(|e| eval_error(e, &out))?;
    let analysis = analyze_gain(&samples, &images, &cfg, backend.as_ref(), &seeds, workers)
        .map_err(|e| eval_error(e, &out))?;
    write_report(&out, &report, Some(&analysis)).map_err(|e| CliError::Runtime(e.into()))?;
    println!(
        "{}: total {} over {} seed(s)",
        report.method,
        evalharness::format_f(report.mean_total),
        seeds.len()
    );
    for c in &report.mean {
        println!(
            "  {:<12} {}",
            c.category,
            evalharness::format_f(c.mme_score)
        );
    }
    write_run(
        &out,
        &RunRecord {
            engine_version: vacode::VERSION,
            command: "eval",
            backend: record,
            config: &cfg,
            method: Some(report.method.clone()),
            seeds,
            dataset: Some(data.dataset.display().to_string()),
            tau: tau_used,
        },
    )
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut body = serde_json::to_string_pretty(value).context("serializing")?;
    body.push('\n');
    std::fs::write(dir.join(name), body).with_context(|| format!("writing {name}"))?;
    Ok(())
}

fn cmd_calibrate(
    file: &FileConfig,
    args: &DecodeArgs,
    data: &DataArgs,
    tau: Option<f64>,
) -> CliResult {
    let resolved = args.resolve(file)?;
    let tau = resolve_tau(tau, file)?;
    let out = resolve_out(data.out.clone(), file, "vacode-out");
    let (samples, images) = load(&data.dataset, &out)?;
    let (backend, record) = connect(&resolved)?;
    let report = run_calibration(&samples, &images, &resolved.decoding, backend.as_ref(), tau)?;
    for (op, c) in report.augmentations.iter().zip(&report.counts) {
        let mark = if report.kept.contains(op) { "kept" } else { "" };
        println!("  {:<8} {c:>6} {mark}", op.to_string());
    }
    println!(
        "threshold {} (n={}, m={}, tau={})",
        evalharness::format_f(report.threshold),
        report.n,
        report.m,
        tau
    );
    write_json(&out, "calibration.json", &report)?;
    write_run(
        &out,
        &RunRecord {
            engine_version: vacode::VERSION,
            command: "calibrate",
            backend: record,
            config: &resolved.decoding,
            method: None,
            seeds: vec![resolved.decoding.seed],
            dataset: Some(data.dataset.display().to_string()),
            tau: Some(tau),
        },
    )
}

fn cmd_ablate(file: &FileConfig, args: &DecodeArgs, data: &DataArgs, seeds: u64) -> CliResult {
    let resolved = args.resolve(file)?;
    let workers = resolve_workers(data.workers, file)?;
    let out = resolve_out(data.out.clone(), file, "vacode-out");
    let seeds = seed_list(resolved.decoding.seed, seeds)?;
    let (samples, images) = load(&data.dataset, &out)?;
    let (backend, record) = connect(&resolved)?;
    let rows = ablate_distance(
        &samples,
        &images,
        &resolved.decoding,
        backend.as_ref(),
        &seeds,
        workers,
    )
    .map_err(|e| eval_error(e, &out))?;
    for r in &rows {
        println!(
            "  {:<7} {}",
            r.metric.to_string(),
            evalharness::format_f(r.mean_gain_selected)
        );
    }
    write_ablation(&out, &rows).map_err(|e| CliError::Runtime(e.into()))?;
    write_run(
        &out,
        &RunRecord {
            engine_version: vacode::VERSION,
            command: "ablate-distance",
            backend: record,
            config: &resolved.decoding,
            method: None,
            seeds,
            dataset: Some(data.dataset.display().to_string()),
            tau: None,
        },
    )
}

fn cmd_gen_toy(out: &Path, n: usize, seed: u64, mcq: Option<usize>) -> CliResult {
    if n == 0 {
        return Err(CliError::Usage("invalid n: must be >= 1".into()));
    }
    let samples = generate_toy_dataset(out, n, seed).map_err(|e| CliError::Runtime(e.into()))?;
    println!(
        "wrote {} samples to {}",
        samples.len(),
        out.join("dataset.jsonl").display()
    );
    if let Some(k) = mcq {
        let m = generate_toy_mcq(out, k, seed).map_err(|e| CliError::Runtime(e.into()))?;
        println!(
            "wrote {} samples to {}",
            m.len(),
            out.join("mcq.jsonl").display()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Augment {
            image,
            kind,
            out,
            seed,
            params,
        } => cmd_augment(&image, kind, &params, &out, seed),
        Command::ServeToy { port, host, hard } => cmd_serve_toy(&host, port, hard),
        Command::Decode {
            args,
            image,
            question,
            options,
            regular,
            out,
        } => cmd_decode(&file, &args, &image, &question, &options, regular, out),
        Command::Eval {
            args,
            data,
            method,
            seeds,
            circular,
            calibration,
            calib_dataset,
            tau,
        } => cmd_eval(
            &file,
            &args,
            &data,
            &method,
            seeds,
            circular,
            calibration.as_deref(),
            calib_dataset.as_deref(),
            tau,
        ),
        Command::Calibrate { args, data, tau } => cmd_calibrate(&file, &args, &data, tau),
        Command::AblateDistance { args, data, seeds } => cmd_ablate(&file, &args, &data, seeds),
        Command::GenToy { out, n, seed, mcq } => cmd_gen_toy(&out, n, seed, mcq),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
