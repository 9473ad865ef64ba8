//! `cpcd`: one binary with a subcommand per stage of the pipeline.
//!
//! Exit codes: 0 success, 1 rejected input or configuration, 2 failure while
//! running, 3 a verification check failed.

mod commands;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpcd_core::experiment::RunConfig;
use cpcd_core::loss::LossArm;
use cpcd_core::CpcdError;

#[derive(Parser)]
#[command(name = "cpcd", version, about = "Composite pretext-class discrimination at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic texture dataset.
    Synth(Common),
    /// Pretrain an encoder with the composite contrastive loss.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `synth`; generated from the config
        /// when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Cross-validate a linear probe on frozen features of a checkpoint.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run gradient, oracle, clustering and memory-bank self-checks.
    Verify {
        /// Directory for the report; printed only when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        /// Plant a known bug to show the checks catch it.
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Compare the loss arms over paired seeds and sweep (λ, τ).
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Skip the (λ, τ) grid.
        #[arg(long)]
        no_sweep: bool,
        /// Skip the loss-arm comparison.
        #[arg(long)]
        no_arms: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    MarginSign,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossFlag {
    #[value(name = "nce", alias = "nce-only")]
    Nce,
    #[value(name = "nce+gcld")]
    NceGcld,
    #[value(name = "cpcd")]
    Cpcd,
}

impl From<LossFlag> for LossArm {
    fn from(f: LossFlag) -> Self {
        match f {
            LossFlag::Nce => LossArm::Nce,
            LossFlag::NceGcld => LossArm::NceGcld,
            LossFlag::Cpcd => LossArm::Cpcd,
        }
    }
}

/// Config file plus overrides shared by the working subcommands.
#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed: the dataset seed for `synth`, the training seed for
    /// `pretrain`, the probe seed for `probe`, the first paired seed for
    /// `ablate`.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    loss: Option<LossFlag>,
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    margin: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    scale: Option<f64>,
    /// Clusters per level.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Write into a non-empty run directory.
    #[arg(long)]
    force: bool,
}

impl Common {
    /// Config file, then flag overrides, then the loss arm on top.
    fn resolve(&self) -> Result<(RunConfig, Option<LossArm>), CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
            None => RunConfig::default(),
        };
        let loss = &mut cfg.train.loss;
        if let Some(v) = self.lambda {
            loss.lambda = v;
        }
        if let Some(v) = self.tau {
            loss.tau = v;
        }
        if let Some(v) = self.margin {
            loss.margin = v;
        }
        if let Some(v) = self.scale {
            loss.scale = v;
        }
        if let Some(v) = self.k {
            loss.k_clusters = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.max_epochs = v;
        }
        let arm = self.loss.map(LossArm::from);
        if let Some(a) = arm {
            cfg.train.loss = cfg.train.loss.with_arm(a);
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        Ok((cfg, arm))
    }
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
    Verification(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "run failed: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<CpcdError> for CliError {
    fn from(e: CpcdError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Caps the global rayon pool from `CPCD_THREADS`.
fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("CPCD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("CPCD_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Synth(c) => commands::synth(&c),
        Command::Pretrain { common, data } => commands::pretrain(&common, data.as_deref()),
        Command::Probe {
            common,
            checkpoint,
            data,
        } => commands::probe(&common, &checkpoint, data.as_deref()),
        Command::Verify {
            out,
            force,
            inject_fault,
        } => commands::verify(out.as_deref(), force, inject_fault.is_some()),
        Command::Ablate {
            common,
            data,
            no_sweep,
            no_arms,
        } => commands::ablate(&common, data.as_deref(), !no_arms, !no_sweep),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cpcd: {e}");
            ExitCode::from(e.code())
        }
    }
}
