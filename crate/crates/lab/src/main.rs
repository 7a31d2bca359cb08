//! `maglab`: runs one experiment, writes `<out>/<experiment>.csv`, and prints
//! one PASS/FAIL line per harness check.
//!
//! Exit status: 0 when every gating check passes, 2 when a gating check
//! fails, 1 on errors (invalid configuration, I/O).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use magnituder_lab::config::{ExperimentConfig, ExperimentKind};
use magnituder_lab::experiments::{self, ExperimentError};

#[derive(Parser)]
#[command(name = "maglab", version, about = "Magnituder layer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// MAG layers approximating frozen ReLU and Softplus dense layers.
    SynthApprox(Common),
    /// Kernel estimator variance with iid vs orthogonal features.
    Variance(Common),
    /// Image and signed-distance coordinate networks, dense vs MAG.
    ToyInr(Common),
    /// Closed-form distillation of a trained image-network layer.
    Distill(Common),
    /// MAC counts and quality of dense, reduced, MAG and fused SDF networks.
    FuseBench(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Args)]
struct Common {
    /// TOML file whose keys override the experiment's defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Command::SynthApprox(c) => (ExperimentKind::SynthApprox, c),
            Command::Variance(c) => (ExperimentKind::VarianceStudy, c),
            Command::ToyInr(c) => (ExperimentKind::ToyInr, c),
            Command::Distill(c) => (ExperimentKind::DistillBench, c),
            Command::FuseBench(c) => (ExperimentKind::FuseBench, c),
        }
    }
}

fn resolve(kind: ExperimentKind, args: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::defaults(kind),
    };
    if cfg.experiment != kind {
        return Err(ExperimentError::WrongExperiment {
            expected: kind,
            found: cfg.experiment,
        });
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    let result = resolve(kind, &args).and_then(|cfg| {
        let report = experiments::run(&cfg)?;
        let path = match args.format {
            Format::Csv => report.save(&cfg.output)?,
        };
        Ok((report, path))
    });
    match result {
        Ok((report, path)) => {
            print!("{}", report.summary());
            println!("wrote {}", path.display());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("maglab: {e}");
            ExitCode::FAILURE
        }
    }
}
