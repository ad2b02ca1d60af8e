//! The `zstta` command line: argument parsing, config merging and report
//! files.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage or configuration error,
//! 3 refusing to write into a non-empty directory, 4 protocol violation,
//! 5 corrupt data.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::alignment::{train, AlignmentParams, EpochStats, PartitionMode};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{
    ablation_csv, predictions_csv, resolve_delta, round4, run_ablation_suite, AblationRow, MetricsReport, Protocol,
};
use crate::refinement::{run_stream, StreamProtocol, TtaMode};
use crate::synth::{preset, synth_generate, PRESET_NAMES};
use crate::tensor_io::{load_manifest, load_tensor, validate_dataset, ValidatedDataset, MAGIC};

#[derive(Debug, Parser)]
#[command(name = "zstta", version, about = "Zero-shot skeleton alignment with test-time anchor refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset tree.
    Synth(SynthArgs),
    /// Train alignment parameters on the seen classes.
    Train(TrainArgs),
    /// Stream the test samples through the model, optionally adapting.
    Run(RunArgs),
    /// Sweep partition modes, adaptation modes and protocols.
    Ablate(AblateArgs),
    /// Summarize a tensor file or a dataset manifest.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file. Flags given on the command line take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream [config default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Named generator settings; replaces the config's synth section.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset manifest.
    #[arg(long, value_name = "MANIFEST")]
    pub dataset: Option<PathBuf>,
    /// Granularity handling [config default: adaptive].
    #[arg(long, value_enum)]
    pub partition: Option<PartitionMode>,
    /// Epoch budget [config default: 300].
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AdaptFlags {
    /// Minimum confidence for bank insertion [config default: 0.1].
    #[arg(long)]
    pub conf_threshold: Option<f64>,
    /// Entries kept per class in the memory bank [config default: 16].
    #[arg(long)]
    pub bank_capacity: Option<usize>,
    /// Bank size required before adapting [config default: max(candidate classes, 8)].
    #[arg(long)]
    pub bmin: Option<usize>,
    /// Fixed entropy threshold for the generalized protocol [config default: calibrated].
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset manifest.
    #[arg(long, value_name = "MANIFEST")]
    pub dataset: Option<PathBuf>,
    /// Directory written by `train`.
    #[arg(long, value_name = "DIR")]
    pub params: Option<PathBuf>,
    /// Evaluation protocol [config default: zsl].
    #[arg(long, value_enum)]
    pub protocol: Option<Protocol>,
    /// Test-time adaptation mode [config default: full].
    #[arg(long, value_enum)]
    pub tta: Option<TtaMode>,
    #[command(flatten)]
    pub adapt: AdaptFlags,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset manifest.
    #[arg(long, value_name = "MANIFEST")]
    pub dataset: Option<PathBuf>,
    /// Restrict the sweep to one partition mode [config default: all].
    #[arg(long, value_enum)]
    pub partition: Option<PartitionMode>,
    /// Restrict the sweep to one protocol [config default: all].
    #[arg(long, value_enum)]
    pub protocol: Option<Protocol>,
    /// Restrict the sweep to one adaptation mode [config default: all].
    #[arg(long, value_enum)]
    pub tta: Option<TtaMode>,
    /// Epoch budget per partition mode [config default: 300].
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Record per-row wall-clock time (output no longer reproducible).
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub adapt: AdaptFlags,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// A tensor file or a manifest.json.
    pub path: PathBuf,
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors are reported on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Run(a) => cmd_run(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Inspect(a) => cmd_inspect(&a.path),
    }
}

fn base_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    cfg.propagate_seed();
    Ok(cfg)
}

fn apply_adapt_flags(cfg: &mut RunConfig, flags: &AdaptFlags) {
    if let Some(t) = flags.conf_threshold {
        cfg.stream.conf_threshold = t;
    }
    if let Some(k) = flags.bank_capacity {
        cfg.stream.bank_capacity = k;
    }
    if let Some(b) = flags.bmin {
        cfg.stream.min_bank = Some(b);
    }
    if let Some(d) = flags.delta {
        cfg.gate.delta = Some(d);
    }
}

/// Creates `dir`, refusing to reuse a non-empty one unless forced.
pub fn prepare_output(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::Config(format!("output path {} is not a directory", dir.display())));
        }
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() && !force {
            return Err(Error::UnsafeOverwrite(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn open_dataset(cfg: &RunConfig) -> Result<ValidatedDataset> {
    validate_dataset(load_manifest(cfg.dataset_path()?)?)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(name) = &args.preset {
        cfg.synth = preset(name).ok_or_else(|| Error::Config(format!("unknown preset {name}")))?;
        cfg.propagate_seed();
    }
    let out = cfg.output_path()?;
    let generated = synth_generate(&cfg.synth)?;
    prepare_output(out, args.common.force)?;
    let manifest = generated.write(out)?;
    write_json(&out.join("synth_config.json"), &cfg.synth)?;
    println!("{}", manifest.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    command: &'static str,
    #[serde(serialize_with = "crate::eval::ser_round4")]
    best_val_accuracy: f64,
    best_epoch: usize,
    epochs_run: usize,
    num_parameters: usize,
    history: &'a [EpochStats],
    effective_config: &'a RunConfig,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(p) = &args.dataset {
        cfg.paths.dataset = Some(p.clone());
    }
    if let Some(p) = args.partition {
        cfg.train.partition = p;
    }
    if let Some(n) = args.max_epochs {
        cfg.train.max_epochs = n;
    }
    let out = cfg.output_path()?.to_path_buf();
    let dataset = open_dataset(&cfg)?;
    prepare_output(&out, args.common.force)?;
    let report = train(&dataset, &cfg.train)?;
    report.params.save(&out)?;
    write_json(
        &out.join("train_report.json"),
        &TrainSummary {
            command: "train",
            best_val_accuracy: report.best_val_accuracy,
            best_epoch: report.best_epoch,
            epochs_run: report.epochs_run,
            num_parameters: report.params.num_parameters(),
            history: &report.history,
            effective_config: &cfg,
        },
    )?;
    println!("epochs run: {}", report.epochs_run);
    println!("validation top-1: {:.4}", round4(report.best_val_accuracy));
    Ok(())
}

#[derive(Serialize)]
struct RunReport<'a> {
    command: &'static str,
    protocol: Protocol,
    tta: TtaMode,
    delta: Option<f64>,
    adapt_steps: usize,
    bank_sizes: BTreeMap<i64, usize>,
    #[serde(flatten)]
    metrics: &'a MetricsReport,
    effective_config: &'a RunConfig,
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(p) = &args.dataset {
        cfg.paths.dataset = Some(p.clone());
    }
    if let Some(p) = &args.params {
        cfg.paths.params = Some(p.clone());
    }
    if let Some(p) = args.protocol {
        cfg.protocol = p;
    }
    if let Some(t) = args.tta {
        cfg.stream.tta = t;
    }
    apply_adapt_flags(&mut cfg, &args.adapt);
    let out = cfg.output_path()?.to_path_buf();
    let dataset = open_dataset(&cfg)?;
    let params = AlignmentParams::load(cfg.params_path()?)?;
    let split = &dataset.manifest().split;
    if cfg.protocol == Protocol::Gzsl && (split.seen.is_empty() || split.unseen.is_empty()) {
        return Err(Error::Protocol("generalized evaluation needs both seen and unseen classes".into()));
    }
    prepare_output(&out, args.common.force)?;

    let (protocol, delta) = match cfg.protocol {
        Protocol::Zsl => (StreamProtocol::Zsl, None),
        Protocol::Gzsl => {
            let (delta, calibration) = resolve_delta(&dataset, &params, &cfg.gate)?;
            if let Some(c) = calibration {
                write_text(&out.join("calibration.csv"), &c.to_csv())?;
            }
            (StreamProtocol::Gzsl { delta }, Some(delta))
        }
    };
    let indices = cfg.protocol.test_indices(&dataset);
    if indices.is_empty() {
        return Err(Error::Protocol(format!("no test samples for {}", cfg.protocol.as_str())));
    }
    let stream = dataset.feature_maps(&indices)?;
    let anchors = dataset.anchor_set()?;
    let result = run_stream(&stream, &anchors, &params, split, protocol, &cfg.stream)?;
    let metrics = MetricsReport::from_records(&result.records, split)?;

    write_text(&out.join("predictions.csv"), &predictions_csv(&result.records))?;
    write_json(
        &out.join("report.json"),
        &RunReport {
            command: "run",
            protocol: cfg.protocol,
            tta: cfg.stream.tta,
            delta,
            adapt_steps: result.adapt_steps,
            bank_sizes: result.bank_sizes(),
            metrics: &metrics,
            effective_config: &cfg,
        },
    )?;
    let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.4}", round4(v)));
    println!(
        "top-1 {:.4}  S {}  U {}  H {}  ({} samples, {} adaptation steps)",
        round4(metrics.top1),
        fmt(metrics.seen_acc),
        fmt(metrics.unseen_acc),
        fmt(metrics.harmonic),
        metrics.n_samples,
        result.adapt_steps
    );
    Ok(())
}

#[derive(Serialize)]
struct AblationReport<'a> {
    command: &'static str,
    rows: &'a [AblationRow],
    effective_config: &'a RunConfig,
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(p) = &args.dataset {
        cfg.paths.dataset = Some(p.clone());
    }
    if let Some(p) = args.partition {
        cfg.ablation.partitions = vec![p];
    }
    if let Some(p) = args.protocol {
        cfg.ablation.protocols = vec![p];
    }
    if let Some(t) = args.tta {
        cfg.ablation.tta_modes = vec![t];
    }
    if let Some(n) = args.max_epochs {
        cfg.train.max_epochs = n;
    }
    if args.timing {
        cfg.ablation.timing = true;
    }
    apply_adapt_flags(&mut cfg, &args.adapt);
    let out = cfg.output_path()?.to_path_buf();
    let dataset = open_dataset(&cfg)?;
    prepare_output(&out, args.common.force)?;
    let rows = run_ablation_suite(&dataset, &cfg.ablation_config())?;
    let csv_path = out.join("ablation.csv");
    write_text(&csv_path, &ablation_csv(&rows))?;
    write_json(&out.join("report.json"), &AblationReport { command: "ablate", rows: &rows, effective_config: &cfg })?;
    println!("{} rows written to {}", rows.len(), csv_path.display());
    Ok(())
}

/// One-line summary of a tensor file, or a few lines describing a manifest.
pub fn inspect_summary(path: &Path) -> Result<String> {
    let mut head = Vec::with_capacity(MAGIC.len());
    fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .take(MAGIC.len() as u64)
        .read_to_end(&mut head)
        .map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json && head != MAGIC {
        return manifest_summary(path);
    }
    let tensor = load_tensor(path)?;
    let values = tensor.to_f64_vec();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(format!("{}: {} {:?} min={min:.6} max={max:.6} mean={mean:.6}", path.display(), tensor.dtype(), tensor.shape()))
}

fn manifest_summary(path: &Path) -> Result<String> {
    let m = load_manifest(path)?;
    let mut roles: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &m.sample_records {
        let role = match m.role_of(s) {
            crate::tensor_io::SampleRole::Train => "train",
            crate::tensor_io::SampleRole::Val => "val",
            crate::tensor_io::SampleRole::Test => "test",
        };
        *roles.entry(role).or_default() += 1;
    }
    let roles: Vec<String> = roles.iter().map(|(r, n)| format!("{r} {n}")).collect();
    Ok(format!(
        "{}\nclasses: {} (seen {}, unseen {})\ngranularities: {} [{}]\nsamples: {} ({})\nanchor dim {}, nodes {}, feature dim {}",
        path.display(),
        m.class_records.len(),
        m.split.seen.len(),
        m.split.unseen.len(),
        m.granularity_labels.len(),
        m.granularity_labels.join(", "),
        m.sample_records.len(),
        roles.join(", "),
        m.dims.text_dim,
        m.dims.nodes,
        m.dims.visual_dim
    ))
}

fn cmd_inspect(path: &Path) -> Result<()> {
    println!("{}", inspect_summary(path)?);
    Ok(())
}
