//! `proto-nmt`: data generation, training, prototype extraction, decoding,
//! evaluation, and the prototype-count ablation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Environment fallback for `--threads`.
const THREADS_ENV: &str = "PROTO_NMT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "proto-nmt", version, about = "Transformer NMT with per-token prototype attention")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic benchmark and its vocabularies.
    GenData,
    /// Train a model and write checkpoints and metrics to the run directory.
    Train {
        /// baseline, one-pass, two-pass or random-proto.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Cluster a checkpoint's training-set representations into a prototype table.
    ExtractProtos {
        /// Defaults to the run directory's final checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Beam-search one split with the run directory's final model.
    Decode {
        #[arg(long)]
        split: Option<String>,
    },
    /// Score hypothesis files and write report CSVs.
    Evaluate {
        /// Comma-separated splits.
        #[arg(long)]
        splits: Option<String>,
        #[arg(long)]
        model_name: Option<String>,
    },
    /// Train and score one run per prototype count; k=0 is the baseline.
    AblateK {
        /// Comma-separated prototype counts.
        #[arg(long)]
        k: Option<String>,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let c = &cli.common;
    let mut config = RunConfig::default();
    if let Some(path) = &c.config {
        config.merge_file(path)?;
    }
    let env_threads = std::env::var(THREADS_ENV).ok();
    let threads = c.threads.map(|t| t.to_string()).or(env_threads);
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
    let mut flags: Vec<(&str, Option<String>)> = vec![
        ("seed", c.seed.map(|s| s.to_string())),
        ("threads", threads),
        ("data_dir", path(&c.data_dir)),
        ("run_dir", path(&c.run_dir)),
        ("out_dir", path(&c.out_dir)),
    ];
    match &cli.command {
        Command::GenData => {}
        Command::Train { mode } => flags.push(("mode", mode.clone())),
        Command::ExtractProtos { checkpoint, k } => {
            flags.push(("checkpoint", path(checkpoint)));
            flags.push(("num_prototypes", k.map(|k| k.to_string())));
        }
        Command::Decode { split } => flags.push(("split", split.clone())),
        Command::Evaluate { splits, model_name } => {
            flags.push(("eval_splits", splits.clone()));
            flags.push(("model_name", model_name.clone()));
        }
        Command::AblateK { k } => flags.push(("k_list", k.clone())),
    }
    for (key, value) in flags {
        if let Some(v) = value {
            config.set(key, &v)?;
        }
    }
    for o in &c.overrides {
        config.merge_override(o).with_context(|| format!("--set {o}"))?;
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    let config = resolve(cli)?;
    let threads: usize = config.get("threads")?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring the thread pool")?;
    match cli.command {
        Command::GenData => commands::gen_data(&config),
        Command::Train { .. } => commands::train(&config),
        Command::ExtractProtos { .. } => commands::extract_protos(&config),
        Command::Decode { .. } => commands::decode(&config),
        Command::Evaluate { .. } => commands::evaluate(&config),
        Command::AblateK { .. } => commands::ablate_k(&config),
    }
}

/// 2 for mismatched or corrupt inputs, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let incompatible =
        err.chain().any(|e| e.downcast_ref::<proto_nmt::Error>().is_some_and(|e| e.is_incompatibility()));
    if incompatible {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
