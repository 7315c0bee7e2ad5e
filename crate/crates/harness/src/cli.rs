//! The `mru` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mru_core::data::{
    gen_mcq_synthetic, gen_span_synthetic, load_jsonl, save_jsonl, Dataset, McqSynthParams,
    SpanSynthParams, Task,
};
use mru_core::gradsuite::{run_component, COMPONENTS, TOLERANCE};
use mru_core::{DType, EncoderKind, RangeSet, Scalar};

use crate::bench::{bench, to_csv, BenchConfig, Mode};
use crate::bundle::ModelBundle;
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::evaluate::evaluate;
use crate::trainer::train;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "mru",
    version,
    about = "Train, evaluate and benchmark multi-range gated reading models"
)]
struct Cli {
    /// JSON configuration with dotted keys (see the README).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seed` or the generator seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file: checkpoint, CSV or JSON-Lines depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Measure encoder throughput and emit CSV.
    Bench(BenchArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset.
    GenData(GenArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Base preset when no `--config` is given.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "simple_mru,mru,lstm")]
    encoders: Vec<EncoderKind>,
    #[arg(long, value_delimiter = ',', default_value = "500")]
    seq_lens: Vec<usize>,
    #[arg(long, default_value_t = 250)]
    dim: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "forward,forward_backward"
    )]
    modes: Vec<Mode>,
    #[arg(long, default_value = "1,2,4,10,25")]
    ranges: RangeSet,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Check a single component instead of the whole suite.
    #[arg(long)]
    component: Option<String>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    task: Task,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Passage length; defaults to 60 (mcq) or 80 (span).
    #[arg(long)]
    len: Option<usize>,
    /// Token distance of the planted dependency; defaults to 20 (mcq) or 10 (span).
    #[arg(long)]
    gap: Option<usize>,
    #[arg(long, default_value_t = 200)]
    vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    options: usize,
    #[arg(long, default_value_t = 2)]
    answer_len: usize,
    #[arg(long, default_value_t = 3)]
    structures: usize,
}

/// Runs the command line; returns the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(ref a) => cmd_train(&cli, a, out),
        Command::Eval(ref a) => cmd_eval(&cli, a, out),
        Command::Bench(ref a) => cmd_bench(&cli, a, out),
        Command::Gradcheck(ref a) => return cmd_gradcheck(a, out, err),
        Command::GenData(ref a) => cmd_gen(&cli, a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
    }
}

fn emit(out: &mut dyn Write, line: &str) {
    let _ = writeln!(out, "{line}");
}

fn require(path: Option<&PathBuf>, key: &str) -> Result<PathBuf> {
    path.cloned().ok_or_else(|| {
        HarnessError::config("train", format!("{key} is not set (flag or config key)"))
    })
}

fn cmd_train(cli: &Cli, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match (&cli.config, &a.preset) {
        (Some(path), _) => TrainConfig::load(path)?,
        (None, Some(p)) => TrainConfig::preset(p)?,
        (None, None) => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if a.train.is_some() {
        cfg.train = a.train.clone();
    }
    if a.dev.is_some() {
        cfg.dev = a.dev.clone();
    }
    if cli.out.is_some() {
        cfg.checkpoint = cli.out.clone();
    }
    cfg.validate()?;
    let train_set = load_jsonl(require(cfg.train.as_ref(), "data.train")?)?;
    let dev_set = load_jsonl(require(cfg.dev.as_ref(), "data.dev")?)?;
    match cfg.dtype {
        DType::Fp32 => train_and_save::<f32>(cfg, &train_set, &dev_set, out),
        DType::Fp64 => train_and_save::<f64>(cfg, &train_set, &dev_set, out),
    }
}

fn train_and_save<T: Scalar>(
    cfg: TrainConfig,
    train_set: &Dataset,
    dev_set: &Dataset,
    out: &mut dyn Write,
) -> Result<()> {
    let ckpt_path = cfg.checkpoint.clone();
    let outcome = train::<T>(cfg, train_set, dev_set, &mut |l| emit(out, l))?;
    if let Some(p) = ckpt_path {
        outcome.bundle.checkpoint().save(&p)?;
        emit(out, &format!("checkpoint={}", p.display()));
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let data = load_jsonl(&a.data)?;
    let report = match ckpt.config.dtype {
        DType::Fp32 => evaluate(&ModelBundle::<f32>::from_checkpoint(&ckpt)?, &data)?,
        DType::Fp64 => evaluate(&ModelBundle::<f64>::from_checkpoint(&ckpt)?, &data)?,
    };
    let _ = write!(out, "{report}");
    if let Some(p) = &cli.out {
        write_file(p, report.to_csv().as_bytes())?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn cmd_bench(cli: &Cli, a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = BenchConfig {
        encoders: a.encoders.clone(),
        seq_lens: a.seq_lens.clone(),
        dim: a.dim,
        batch: a.batch,
        repeats: a.repeats,
        modes: a.modes.clone(),
        ranges: a.ranges.clone(),
        seed: cli.seed.unwrap_or(0),
    };
    let mut logs = Vec::new();
    let rows = bench(&cfg, &mut |l| logs.push(l.to_string()))?;
    let csv = to_csv(&rows);
    match &cli.out {
        Some(p) => {
            write_file(p, csv.as_bytes())?;
            for l in logs {
                emit(out, &l);
            }
        }
        None => {
            let _ = write!(out, "{csv}");
        }
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let names: Vec<&str> = match &a.component {
        Some(c) => vec![c.as_str()],
        None => COMPONENTS.to_vec(),
    };
    let mut failed = 0;
    for name in names {
        match run_component(name) {
            Ok(e) => {
                let status = if e.passed() { "pass" } else { "FAIL" };
                emit(
                    out,
                    &format!(
                        "component={name} status={status} max_rel_error={:.3e} coords={} fixture={}",
                        e.report.max_rel_error, e.report.checked, e.fixture_seed
                    ),
                );
                failed += usize::from(!e.passed());
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                return if a.component.is_some() {
                    EXIT_USAGE
                } else {
                    EXIT_CHECK
                };
            }
        }
    }
    emit(out, &format!("failures={failed} tolerance={TOLERANCE:e}"));
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_CHECK
    }
}

fn cmd_gen(cli: &Cli, a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let path = cli
        .out
        .as_ref()
        .ok_or_else(|| HarnessError::config("gen-data", "--out is required"))?;
    let seed = cli.seed.unwrap_or(0);
    let data = match a.task {
        Task::Mcq => {
            let d = McqSynthParams::default();
            Dataset::Mcq(gen_mcq_synthetic(&McqSynthParams {
                seed,
                n: a.n,
                len: a.len.unwrap_or(d.len),
                vocab_size: a.vocab_size,
                gap: a.gap.unwrap_or(d.gap),
                num_options: a.options,
            })?)
        }
        Task::Span => {
            let d = SpanSynthParams::default();
            Dataset::Span(gen_span_synthetic(&SpanSynthParams {
                seed,
                n: a.n,
                len: a.len.unwrap_or(d.len),
                vocab_size: a.vocab_size,
                gap: a.gap.unwrap_or(d.gap),
                answer_len: a.answer_len,
                structures: a.structures,
            })?)
        }
    };
    save_jsonl(path, &data)?;
    emit(
        out,
        &format!("records={} path={}", data.len(), path.display()),
    );
    Ok(())
}
