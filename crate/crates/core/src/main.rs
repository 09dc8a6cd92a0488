use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use dnamask::config::{parse_override, RunConfig};
use dnamask::corpus::{parse_fasta, read_fasta};
use dnamask::masking::MaskingMode;
use dnamask::pipeline::{self, json_error, report_dir, write_json, PipelineError};
use dnamask::tokenizer::Strategy;

#[derive(Parser)]
#[command(name = "dnamask", version, about = "k-mer tokenization, curriculum span masking and MLM pre-training for DNA")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set training.lr=0.0005`. Repeatable.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Threads used for batch preparation; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Print token ids, one line per window.
    Tokenize {
        /// FASTA file, or `-` for standard input.
        #[arg(long, default_value = "-")]
        input: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Window length in nucleotides; whole records when omitted.
        #[arg(long)]
        window: Option<usize>,
        /// Write here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Monte-Carlo masking statistics per curriculum stage.
    MaskStats {
        #[arg(long)]
        probability: Option<f64>,
        #[arg(long)]
        mode: Option<MaskingModeArg>,
        #[arg(long)]
        total_steps: Option<u64>,
        #[arg(long)]
        num_sequences: Option<usize>,
        #[arg(long)]
        seq_len: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Masked-language-model pre-training.
    Pretrain {
        /// Run directory for the checkpoint and reports.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        mode: Option<MaskingModeArg>,
        #[arg(long)]
        total_steps: Option<u64>,
        #[arg(long)]
        stop_after: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Sequence-classification fine-tuning.
    Finetune {
        #[arg(long)]
        out: PathBuf,
        /// Pre-trained checkpoint; random initialization when missing.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Labeled CSV; a synthetic motif task when omitted.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        freeze_backbone: bool,
    },
    /// Attention and embedding metrics of a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write the report here as well as to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MaskingModeArg {
    Randommask,
    Baseline,
}

impl From<MaskingModeArg> for MaskingMode {
    fn from(m: MaskingModeArg) -> Self {
        match m {
            MaskingModeArg::Randommask => MaskingMode::RandomMask,
            MaskingModeArg::Baseline => MaskingMode::Baseline,
        }
    }
}

fn push<T: serde::Serialize>(o: &mut Vec<(String, Value)>, path: &str, v: Option<T>) {
    if let Some(v) = v {
        o.push((path.to_string(), serde_json::to_value(v).expect("serializable flag")));
    }
}

/// Flag overrides in the order file < `--set` < dedicated flags.
fn overrides(cli: &Cli) -> Result<Vec<(String, Value)>, PipelineError> {
    let mut o = Vec::new();
    for s in &cli.common.overrides {
        o.push(parse_override(s)?);
    }
    push(&mut o, "seed", cli.common.seed);
    match &cli.command {
        Command::Tokenize { k, strategy, .. } => {
            push(&mut o, "tokenizer.k", *k);
            push(&mut o, "tokenizer.strategy", *strategy);
        }
        Command::MaskStats { probability, mode, total_steps, num_sequences, seq_len, .. } => {
            push(&mut o, "masking.probability", *probability);
            push(&mut o, "masking.mode", mode.map(MaskingMode::from));
            push(&mut o, "training.total_steps", *total_steps);
            push(&mut o, "mask_stats.num_sequences", *num_sequences);
            push(&mut o, "mask_stats.seq_len", *seq_len);
        }
        Command::Pretrain { mode, total_steps, stop_after, batch_size, lr, .. } => {
            push(&mut o, "masking.mode", mode.map(MaskingMode::from));
            push(&mut o, "training.total_steps", *total_steps);
            push(&mut o, "training.stop_after", *stop_after);
            push(&mut o, "training.batch_size", *batch_size);
            push(&mut o, "training.lr", *lr);
        }
        Command::Finetune { train, eval, epochs, lr, freeze_backbone, .. } => {
            push(&mut o, "finetune.train", train.as_ref());
            push(&mut o, "finetune.eval", eval.as_ref());
            push(&mut o, "finetune.epochs", *epochs);
            push(&mut o, "finetune.lr", *lr);
            push(&mut o, "finetune.freeze_backbone", freeze_backbone.then_some(true));
        }
        Command::Analyze { .. } => {}
    }
    Ok(o)
}

fn print_json(value: &impl serde::Serialize) -> Result<(), PipelineError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|source| PipelineError::Io { path: "<stdout>".into(), source })
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = RunConfig::load(cli.common.config.as_deref(), &overrides(cli)?)?;
    if cli.common.workers == 0 {
        return Err(PipelineError::Usage("--workers must be >= 1".into()));
    }
    let workers = cli.common.workers;
    match &cli.command {
        Command::Tokenize { input, window, output, .. } => {
            let seqs = if input == Path::new("-") {
                parse_fasta(io::stdin().lock(), cfg.corpus.base_mode)?
            } else {
                read_fasta(input, cfg.corpus.base_mode)?
            };
            let lines = pipeline::tokenize_lines(&cfg, &seqs, *window)?;
            let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
            match output {
                Some(path) => std::fs::write(path, text)
                    .map_err(|source| PipelineError::Io { path: path.clone(), source })?,
                None => {
                    let mut out = BufWriter::new(io::stdout().lock());
                    out.write_all(text.as_bytes())
                        .and_then(|_| out.flush())
                        .map_err(|source| PipelineError::Io { path: "<stdout>".into(), source })?;
                }
            }
        }
        Command::MaskStats { output, .. } => {
            let report = pipeline::mask_stats(&cfg, workers)?;
            if let Some(path) = output {
                write_json(path, &report)?;
            } else if let Some(dir) = std::env::var_os(pipeline::REPORT_DIR_ENV) {
                write_json(&PathBuf::from(dir).join("mask_stats.json"), &report)?;
            }
            print_json(&report)?;
        }
        Command::Pretrain { out, resume, .. } => {
            let outcome = pipeline::pretrain(&cfg, out, resume.as_deref(), workers)?;
            let last = outcome.report.records.last();
            print_json(&json!({
                "checkpoint": outcome.checkpoint,
                "report": outcome.report_json,
                "loss_csv": outcome.report_csv,
                "final_step": last.map(|r| r.step),
                "final_loss": last.map(|r| r.loss),
                "attention": outcome.report.attention,
                "silhouette": outcome.report.silhouette,
                "stage_jumps": outcome.report.stage_jumps,
            }))?;
        }
        Command::Finetune { out, checkpoint, .. } => {
            let outcome = pipeline::finetune(&cfg, checkpoint.as_deref(), out)?;
            print_json(&json!({
                "report": outcome.report_json,
                "metrics_csv": outcome.metrics_csv,
                "initialization": outcome.report.initialization,
                "epochs": outcome.report.epochs,
            }))?;
        }
        Command::Analyze { checkpoint, out } => {
            let report = pipeline::analyze(&cfg, checkpoint)?;
            let dir = match out {
                Some(dir) => Some(report_dir(dir)),
                None => std::env::var_os(pipeline::REPORT_DIR_ENV).map(PathBuf::from),
            };
            if let Some(dir) = dir {
                write_json(&dir.join("analyze.json"), &report)?;
            }
            print_json(&report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let err = json!({"error": {"kind": "usage", "message": e.to_string(), "exit_code": 2}});
            eprintln!("{err}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json_error(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
