//! The five studies run by `maglab`. Each takes a validated
//! [`ExperimentConfig`] and returns a [`Report`] of CSV rows and check lines.
//!
//! Repetitions run one after another; every random draw comes from an
//! [`RngStream`](magnituder::RngStream) keyed by the run seed, so results do
//! not depend on execution order.

use std::time::Instant;

use crate::config::{ConfigError, ExperimentConfig, ExperimentKind};
use crate::formats::FormatError;
use crate::results::{Report, ResultError};

mod distill_bench;
mod fuse_bench;
mod synth;
pub mod toy_inr;
mod variance;

pub use distill_bench::{run_distill_bench, DISTILL_SLACK_DB};
pub use fuse_bench::run_fuse_bench;
pub use synth::run_synth_approx;
pub use toy_inr::run_toy_inr;
pub use variance::run_variance_study;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] magnituder::Error),
    #[error(transparent)]
    Results(#[from] ResultError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config is for experiment '{found}', expected '{expected}'")]
    WrongExperiment {
        expected: ExperimentKind,
        found: ExperimentKind,
    },
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Validates `cfg` and runs its experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::SynthApprox => run_synth_approx(cfg),
        ExperimentKind::VarianceStudy => run_variance_study(cfg),
        ExperimentKind::ToyInr => run_toy_inr(cfg),
        ExperimentKind::DistillBench => run_distill_bench(cfg),
        ExperimentKind::FuseBench => run_fuse_bench(cfg),
    }
}

fn expect_kind(cfg: &ExperimentConfig, expected: ExperimentKind) -> Result<()> {
    cfg.validate()?;
    if cfg.experiment != expected {
        return Err(ExperimentError::WrongExperiment {
            expected,
            found: cfg.experiment,
        });
    }
    Ok(())
}

/// Runs `f` and returns its result with the elapsed seconds.
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
