//! `dgstgcn` — command-line front end for the skeleton action recognition
//! library: dataset synthesis, training, evaluation, score ensembling,
//! analytic profiling, and the numerical self-test suites.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 data or file
//! format error, 3 numerical failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use dgstgcn::check::{self, CheckResult};
use dgstgcn::data::format::{read_dataset, read_scores, write_dataset, write_scores, ScoreFile};
use dgstgcn::data::synth;
use dgstgcn::data::{derive_modality, Dataset, Modality};
use dgstgcn::error::{Error, Result};
use dgstgcn::net::Model;
use dgstgcn::presets::{resolve, RunConfig};
use dgstgcn::profile::{cost_report, ProfileOptions};
use dgstgcn::tensor::Scalar;
use dgstgcn::train::{ensemble, evaluate, train, EvalReport};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "dgstgcn",
    version,
    about = "Dynamic-group spatial-temporal GCN toolkit for skeleton action recognition"
)]
struct Cli {
    /// JSON overlay merged onto the preset/defaults (unknown keys rejected)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for data generation, init, and shuffling (fallback: DGSTGCN_SEED)
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Named preset: paper-ablation | paper-sota | desk
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,

    /// Force bit-reproducible runs (pins data loading to one worker)
    #[arg(long, global = true)]
    deterministic: bool,

    /// Floating-point width for train/eval (self-tests always run f64)
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    precision: Precision,

    /// Data-loading worker threads (never affects results)
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic skeleton dataset (SKL1 + JSON sidecar)
    Synth(SynthArgs),
    /// Train a model and write a DGW1 checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint; write SCR1 scores and a JSON report
    Eval(EvalArgs),
    /// Fuse SCR1 score files by weighted softmax averaging
    Ensemble(EnsembleArgs),
    /// Print exact parameter counts and analytic FLOPs
    Profile(ProfileArgs),
    /// Finite-difference validation of every operator and the composed net
    Gradcheck,
    /// All numerical suites: gradients, oracles, invariants
    Selftest,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset path
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Number of action classes
    #[arg(long, value_name = "N")]
    classes: Option<usize>,
    /// Samples per class (total = classes x per-class)
    #[arg(long = "per-class", value_name = "N")]
    per_class: Option<usize>,
    /// Joints per skeleton
    #[arg(long, value_name = "V")]
    joints: Option<usize>,
    /// Coordinates per joint (2 or 3)
    #[arg(long, value_name = "C")]
    channels: Option<usize>,
    /// Nominal frames per clip before length jitter
    #[arg(long, value_name = "T")]
    frames: Option<usize>,
    /// Maximum persons per sample
    #[arg(long, value_name = "M")]
    persons: Option<usize>,
    /// Coordinate noise standard deviation
    #[arg(long, value_name = "SIGMA")]
    noise: Option<f64>,
    /// Clip-length jitter fraction
    #[arg(long, value_name = "FRAC")]
    jitter: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (SKL1)
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Checkpoint to write (DGW1)
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Optional JSONL log: resolved config, then one record per epoch
    #[arg(long, value_name = "PATH")]
    log: Option<PathBuf>,
    /// Input stream: joint | bone | joint_motion | bone_motion
    #[arg(long, value_name = "NAME")]
    modality: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluation dataset (SKL1)
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Checkpoint to evaluate (DGW1)
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Score file to write (SCR1)
    #[arg(long, value_name = "PATH")]
    scores: PathBuf,
    /// Optional evaluation report (JSON)
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Input stream: joint | bone | joint_motion | bone_motion
    #[arg(long, value_name = "NAME")]
    modality: Option<String>,
}

#[derive(Args)]
struct EnsembleArgs {
    /// SCR1 score files to fuse
    #[arg(long, value_name = "PATH", num_args = 1.., required = true)]
    scores: Vec<PathBuf>,
    /// Per-file fusion weights (default: equal)
    #[arg(long, value_name = "W", value_delimiter = ',')]
    weights: Vec<f64>,
    /// Optional fused report (JSON)
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    /// Clip length fed to block 1 (default: the preset's input_length)
    #[arg(long, value_name = "T")]
    frames: Option<usize>,
    /// Person count the costs scale with (default: model max_persons)
    #[arg(long, value_name = "M")]
    persons: Option<usize>,
    /// FLOPs charged per multiply-accumulate (1 = report MACs)
    #[arg(long = "flops-per-mac", value_name = "F")]
    flops_per_mac: Option<f64>,
    /// Emit the report as JSON instead of a text table
    #[arg(long)]
    json: bool,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { 0 } else { 1 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dgstgcn: {e}");
            match e {
                Error::Config(_) => 1,
                Error::Data(_) | Error::Format { .. } | Error::Shape { .. } => 2,
                Error::Io(_) | Error::Json(_) => 2,
                Error::Numerical(_) => 3,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut run = resolve(cli.preset.as_deref(), cli.config.as_deref())?;
    if let Some(seed) = seed_from(cli.seed)? {
        run.train.seed = seed;
        run.synth.seed = seed;
    }
    if let Some(workers) = cli.workers {
        run.train.workers = workers;
    }
    if cli.deterministic {
        run.train.workers = 1;
    }

    match (cli.cmd, cli.precision) {
        (Cmd::Synth(args), _) => cmd_synth(run, &args),
        (Cmd::Train(args), Precision::F32) => cmd_train::<f32>(run, &args),
        (Cmd::Train(args), Precision::F64) => cmd_train::<f64>(run, &args),
        (Cmd::Eval(args), Precision::F32) => cmd_eval::<f32>(run, &args),
        (Cmd::Eval(args), Precision::F64) => cmd_eval::<f64>(run, &args),
        (Cmd::Ensemble(args), _) => cmd_ensemble(run, &args),
        (Cmd::Profile(args), _) => cmd_profile(run, &args),
        (Cmd::Gradcheck, _) => run_suites("gradcheck", check::gradcheck_suite()),
        (Cmd::Selftest, _) => run_suites("selftest", check::all_suites()),
    }
}

/// `--seed` if given, otherwise the `DGSTGCN_SEED` environment variable.
fn seed_from(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("DGSTGCN_SEED") {
        Ok(text) => text
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::config(format!("DGSTGCN_SEED must be an unsigned integer, got '{text}'"))),
        Err(_) => Ok(None),
    }
}

/// Every command logs the settings it actually ran with; a run is
/// reproducible from this line plus its input files.
fn log_resolved(run: &RunConfig) -> Result<()> {
    log::info!("resolved config: {}", serde_json::to_string(run)?);
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn parse_modality(flag: &Option<String>, fallback: Modality) -> Result<Modality> {
    match flag {
        Some(name) => Modality::parse(name),
        None => Ok(fallback),
    }
}

fn apply_modality(ds: Dataset, modality: Modality) -> Result<Dataset> {
    if modality == Modality::Joint {
        return Ok(ds);
    }
    let samples = ds
        .samples
        .iter()
        .map(|s| derive_modality(s, &ds.spec, modality))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { spec: ds.spec, samples })
}

fn cmd_synth(mut run: RunConfig, args: &SynthArgs) -> Result<()> {
    let s = &mut run.synth;
    if let Some(c) = args.classes {
        s.n_classes = c;
    }
    if let Some(p) = args.per_class {
        s.n_samples = p * s.n_classes;
    }
    if let Some(v) = args.joints {
        s.num_joints = v;
    }
    if let Some(c) = args.channels {
        s.channels = c;
    }
    if let Some(t) = args.frames {
        s.frames = t;
    }
    if let Some(m) = args.persons {
        s.max_persons = m;
    }
    if let Some(n) = args.noise {
        s.noise = n;
    }
    if let Some(j) = args.jitter {
        s.length_jitter = j;
    }
    log_resolved(&run)?;
    let ds = synth::generate(&run.synth)?;
    write_dataset(&args.out, &ds)?;
    println!(
        "wrote {} samples ({} classes, V={}, C={}, M={}) to {}",
        ds.samples.len(),
        ds.spec.n_classes,
        ds.spec.num_joints,
        ds.spec.channels,
        ds.spec.max_persons,
        args.out.display()
    );
    Ok(())
}

/// Fit the model's input contract to the dataset at hand; presets fix the
/// architecture scale, the data fixes its interface.
fn adapt_model_to_data(run: &mut RunConfig, ds: &Dataset) {
    run.model.num_classes = ds.spec.n_classes;
    run.model.num_joints = ds.spec.num_joints;
    run.model.in_channels = ds.spec.channels;
    run.model.max_persons = ds.spec.max_persons;
}

fn cmd_train<E: Scalar>(mut run: RunConfig, args: &TrainArgs) -> Result<()> {
    run.modality = parse_modality(&args.modality, run.modality)?;
    let ds = apply_modality(read_dataset(&args.data)?, run.modality)?;
    adapt_model_to_data(&mut run, &ds);
    log_resolved(&run)?;

    let mut model = Model::<E>::new(run.model.clone(), ds.spec.parents.as_deref(), run.train.seed)?;
    let records = train(&mut model, &ds, &run.train, |r| {
        println!(
            "epoch {:3}  lr {:.5}  loss {:.4}  train_acc {:.4}  {} ms",
            r.epoch, r.lr, r.loss, r.train_acc, r.wall_ms
        );
    })?;
    model.save(&args.out)?;

    if let Some(path) = &args.log {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(
            &mut w,
            &serde_json::json!({
                "resolved": run,
                "data": args.data.display().to_string(),
                "checkpoint": args.out.display().to_string(),
            }),
        )?;
        writeln!(w)?;
        for r in &records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        w.flush()?;
    }
    let last = records.last().ok_or_else(|| Error::config("zero training epochs"))?;
    println!(
        "trained {} epochs; final loss {:.4}, train_acc {:.4}; checkpoint {}",
        records.len(),
        last.loss,
        last.train_acc,
        args.out.display()
    );
    Ok(())
}

fn print_report(tag: &str, report: &EvalReport) {
    println!(
        "{tag}: top1 {:.4}  mean_class_acc {:.4}  loss {:.4}  ({} samples)",
        report.top1, report.mean_class_acc, report.loss, report.n_samples
    );
}

fn cmd_eval<E: Scalar>(mut run: RunConfig, args: &EvalArgs) -> Result<()> {
    run.modality = parse_modality(&args.modality, run.modality)?;
    let ds = apply_modality(read_dataset(&args.data)?, run.modality)?;
    let mut model = Model::<E>::load(&args.checkpoint)?;
    if ds.spec.n_classes != model.cfg.num_classes
        || ds.spec.num_joints != model.cfg.num_joints
        || ds.spec.channels != model.cfg.in_channels
        || ds.spec.max_persons != model.cfg.max_persons
    {
        return Err(Error::config(format!(
            "dataset ({} classes, V={}, C={}, M={}) does not match checkpoint \
             ({} classes, V={}, C={}, M={})",
            ds.spec.n_classes,
            ds.spec.num_joints,
            ds.spec.channels,
            ds.spec.max_persons,
            model.cfg.num_classes,
            model.cfg.num_joints,
            model.cfg.in_channels,
            model.cfg.max_persons,
        )));
    }
    run.model = model.cfg.clone();
    log_resolved(&run)?;

    let (report, scores) = evaluate(&mut model, &ds, run.train.input_length, run.eval_batch_size)?;
    write_scores(&args.scores, &scores)?;
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    print_report("eval", &report);
    Ok(())
}

fn cmd_ensemble(run: RunConfig, args: &EnsembleArgs) -> Result<()> {
    log_resolved(&run)?;
    let files: Vec<ScoreFile> = args
        .scores
        .iter()
        .map(|p| read_scores(p))
        .collect::<Result<_>>()?;
    let report = ensemble(&files, &args.weights)?;
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    print_report(&format!("ensemble of {}", files.len()), &report);
    Ok(())
}

fn cmd_profile(run: RunConfig, args: &ProfileArgs) -> Result<()> {
    log_resolved(&run)?;
    let opts = ProfileOptions {
        input_frames: args.frames.unwrap_or(run.train.input_length),
        persons: args.persons,
        flops_per_mac: args.flops_per_mac.unwrap_or(2.0),
    };
    let report = cost_report(&run.model, &opts)?;
    if args.json {
        println!("{}", report.to_json());
    } else {
        println!("{}", report.to_text());
    }
    Ok(())
}

/// Print one line per check; any failure is a numerical error (exit 3).
fn run_suites(tag: &str, results: Vec<CheckResult>) -> Result<()> {
    for r in &results {
        println!("{}", r.line());
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Error::numerical(format!(
            "{tag}: {failed} of {} checks failed",
            results.len()
        )));
    }
    println!("{tag}: all {} checks passed", results.len());
    Ok(())
}
