//! `analogy-lab`: corpus generation, training, evaluation, ablation and
//! self-check from one config file plus flags.

mod commands;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use analogy_core::config::RunConfig;
use analogy_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "analogy-lab", version, about = "Visual-analogy embedding laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Shared {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory of the timestamped run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Corpus file path.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Suffix for the run directory name.
    #[arg(long, global = true)]
    run_name: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
struct LossFlags {
    /// single or double.
    #[arg(long)]
    loss: Option<String>,
    /// Single-margin m.
    #[arg(long)]
    m: Option<f64>,
    /// Double-margin m_P.
    #[arg(long)]
    mp: Option<f64>,
    /// Double-margin m_N.
    #[arg(long)]
    mn: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Baseline {
    Classifier,
    Random,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the corpus and write it to the `corpus` path.
    GenCorpus {
        #[command(flatten)]
        shared: Shared,
    },
    /// Train an encoder; writes a checkpoint and the training log.
    Train {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        loss: LossFlags,
    },
    /// Evaluate a checkpoint or a baseline on analogy questions.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        loss: LossFlags,
        #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Single/double margin x freeze depth x regime comparison.
    Ablate {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        loss: LossFlags,
    },
    /// Gradient checks, loss identities, counting and sampler sweeps.
    Selfcheck {
        #[command(flatten)]
        shared: Shared,
        /// Test hook: corrupt the backward pass of this layer.
        #[arg(long, hide = true)]
        corrupt_layer: Option<String>,
    },
}

fn resolve(shared: &Shared, loss: Option<&LossFlags>) -> Result<RunConfig> {
    let mut cfg = match &shared.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for kv in &shared.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = shared.seed {
        cfg.seed = s;
    }
    if let Some(o) = &shared.out {
        cfg.out = o.clone();
    }
    if let Some(t) = shared.threads {
        cfg.set("threads", &t.to_string())?;
    }
    if let Some(c) = &shared.corpus {
        cfg.corpus = c.clone();
    }
    if let Some(l) = loss {
        if let Some(v) = &l.loss {
            cfg.set("loss", v)?;
        }
        for (key, v) in [("m", l.m), ("mp", l.mp), ("mn", l.mn)] {
            if let Some(v) = v {
                cfg.set(key, &v.to_string())?;
            }
        }
        if let Some(s) = l.steps {
            cfg.steps = s;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { shared } => {
            let cfg = resolve(&shared, None)?;
            commands::gen_corpus(&cfg, shared.run_name.as_deref())
        }
        Command::Train { shared, loss } => {
            let cfg = resolve(&shared, Some(&loss))?;
            commands::train(&cfg, shared.run_name.as_deref())
        }
        Command::Eval {
            shared,
            loss,
            checkpoint,
            baseline,
        } => {
            let cfg = resolve(&shared, Some(&loss))?;
            let source = match (checkpoint, baseline) {
                (Some(p), _) => commands::EvalSource::Checkpoint(p),
                (None, Some(Baseline::Classifier)) => commands::EvalSource::Classifier,
                (None, Some(Baseline::Random)) => commands::EvalSource::Random,
                (None, None) => unreachable!("clap requires one of --checkpoint or --baseline"),
            };
            commands::eval(&cfg, &source, shared.run_name.as_deref())
        }
        Command::Ablate { shared, loss } => {
            let cfg = resolve(&shared, Some(&loss))?;
            commands::ablate(&cfg, shared.run_name.as_deref())
        }
        Command::Selfcheck { shared, corrupt_layer } => {
            let cfg = resolve(&shared, None)?;
            commands::selfcheck(&cfg, corrupt_layer.as_deref(), shared.run_name.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
