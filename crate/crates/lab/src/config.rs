//! Experiment configuration: a TOML file whose keys mirror [`ExperimentConfig`],
//! merged over per-experiment defaults and validated before any work starts.
//!
//! ```toml
//! experiment = "synth-approx"   # synth-approx | variance | toy-inr | distill | fuse-bench
//! seed = 0                      # base seed; run s uses seed + s
//! seeds = 10
//! d = 128
//! l = 128
//! rf_sweep = [8, 16, 32, 64, 128]
//! epochs = 1000
//! targets = ["relu", "softplus"]
//! ensembles = ["orthogonal", "iid"]
//! output = "results"
//! ```
//!
//! Unknown keys are rejected so that typos do not silently fall back to defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use magnituder::layers::presets::ColorActivation;
use magnituder::{Activation, EnsembleKind};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentKind {
    SynthApprox,
    VarianceStudy,
    ToyInr,
    DistillBench,
    FuseBench,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        Self::SynthApprox,
        Self::VarianceStudy,
        Self::ToyInr,
        Self::DistillBench,
        Self::FuseBench,
    ];

    /// Identifier used for subcommands, config files and the CSV `experiment` column.
    pub fn id(self) -> &'static str {
        match self {
            Self::SynthApprox => "synth-approx",
            Self::VarianceStudy => "variance",
            Self::ToyInr => "toy-inr",
            Self::DistillBench => "distill",
            Self::FuseBench => "fuse-bench",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ExperimentKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| invalid(format!("unknown experiment '{s}'")))
    }
}

/// Activation of the frozen dense layer that synthetic approximation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TargetActivation {
    Relu,
    Softplus,
}

impl TargetActivation {
    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Softplus => "softplus",
        }
    }

    pub fn activation(self) -> Activation {
        match self {
            Self::Relu => Activation::Relu,
            Self::Softplus => Activation::Softplus { beta: 1.0 },
        }
    }
}

impl FromStr for TargetActivation {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            "softplus" => Ok(Self::Softplus),
            other => Err(invalid(format!("unknown target activation '{other}'"))),
        }
    }
}

/// Fully resolved configuration of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Base seed; the `s`-th repetition runs with seed `seed + s`.
    pub seed: u64,
    /// Number of repetitions (independent seeds).
    pub seeds: usize,
    /// Input dimension of synthetic layers / variance vectors.
    pub d: usize,
    /// Output dimension of synthetic layers.
    pub l: usize,
    /// Random-feature counts to sweep; nonempty and strictly increasing.
    pub rf_sweep: Vec<usize>,
    /// Training epochs (synthetic readouts and image fits).
    pub epochs: usize,
    /// Synthetic sample count.
    pub samples: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub targets: Vec<TargetActivation>,
    pub ensembles: Vec<EnsembleKind>,
    /// Include SNNK rows in the synthetic study.
    pub snnk: bool,
    /// Ensemble resamplings per variance estimate.
    pub trials: usize,
    /// Independent draws averaged per coordinate in the unbiasedness check
    /// (the check averages that many m = d estimates).
    pub unbiased_repetitions: usize,
    pub image_side: usize,
    pub color: ColorActivation,
    pub sdf_side: usize,
    pub sdf_epochs: usize,
    /// Random features of the MAG layer in the signed-distance variants.
    pub sdf_features: usize,
    /// Last hidden width of the dimension-reduced signed-distance variant.
    pub dr_width: usize,
    /// Layer of the trained image baseline replaced by distillation.
    pub distill_layer: usize,
    /// Fraction of captured rows kept for the distillation solve.
    pub subsample: f64,
    pub ridge: f64,
    pub output: PathBuf,
}

impl ExperimentConfig {
    /// Defaults for `experiment`, sized to finish in minutes on one CPU core.
    pub fn defaults(experiment: ExperimentKind) -> Self {
        let base = Self {
            experiment,
            seed: 0,
            seeds: 1,
            d: 128,
            l: 128,
            rf_sweep: vec![8, 16, 32, 64, 128],
            epochs: 1000,
            samples: 10_000,
            batch_size: 1000,
            learning_rate: 1e-2,
            targets: vec![TargetActivation::Relu, TargetActivation::Softplus],
            ensembles: vec![EnsembleKind::BlockOrthogonal, EnsembleKind::IidGaussian],
            snnk: false,
            trials: 100_000,
            unbiased_repetitions: 100_000,
            image_side: 64,
            color: ColorActivation::Sigmoid,
            sdf_side: 128,
            sdf_epochs: 10,
            sdf_features: 32,
            dr_width: 32,
            distill_layer: 7,
            subsample: 1.0,
            ridge: magnituder::distill::DEFAULT_RIDGE,
            output: PathBuf::from("results"),
        };
        match experiment {
            ExperimentKind::SynthApprox => Self { seeds: 10, ..base },
            ExperimentKind::VarianceStudy => Self {
                d: 16,
                rf_sweep: vec![16, 32, 64, 128],
                ..base
            },
            ExperimentKind::ToyInr => Self {
                seeds: 3,
                rf_sweep: vec![256],
                epochs: 50,
                batch_size: 512,
                learning_rate: 1e-3,
                ensembles: vec![EnsembleKind::BlockOrthogonal],
                ..base
            },
            ExperimentKind::DistillBench => Self {
                rf_sweep: vec![32, 64, 128, 256, 512],
                ensembles: vec![EnsembleKind::BlockOrthogonal],
                epochs: 50,
                batch_size: 512,
                learning_rate: 1e-3,
                ..base
            },
            ExperimentKind::FuseBench => Self {
                rf_sweep: vec![32],
                batch_size: 512,
                learning_rate: 1e-3,
                ensembles: vec![EnsembleKind::BlockOrthogonal],
                ..base
            },
        }
    }

    /// Parses TOML text and merges it over the defaults of its `experiment`.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text)?;
        let kind: ExperimentKind = file
            .experiment
            .as_deref()
            .ok_or_else(|| invalid("config must name an `experiment`"))?
            .parse()?;
        let cfg = file.merge(Self::defaults(kind))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Seed of repetition `s`.
    pub fn run_seed(&self, s: usize) -> u64 {
        self.seed.wrapping_add(s as u64)
    }

    pub fn run_seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.seeds).map(|s| self.run_seed(s))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rf_sweep.is_empty() {
            return Err(invalid("rf_sweep must be nonempty"));
        }
        if self.rf_sweep.contains(&0) || self.rf_sweep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(format!(
                "rf_sweep must be positive and strictly increasing, got {:?}",
                self.rf_sweep
            )));
        }
        let positive = [
            ("seeds", self.seeds),
            ("d", self.d),
            ("l", self.l),
            ("samples", self.samples),
            ("batch_size", self.batch_size),
            ("image_side", self.image_side),
            ("sdf_side", self.sdf_side),
            ("sdf_features", self.sdf_features),
            ("dr_width", self.dr_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("{name} must be at least 1")));
        }
        if self.targets.is_empty() || self.ensembles.is_empty() {
            return Err(invalid("targets and ensembles must be nonempty"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(invalid(format!(
                "subsample must lie in (0, 1], got {}",
                self.subsample
            )));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(invalid(format!(
                "ridge must be nonnegative, got {}",
                self.ridge
            )));
        }
        match self.experiment {
            ExperimentKind::VarianceStudy if self.trials < magnituder::kernels::MIN_VARIANCE_TRIALS => Err(invalid(format!(
                "variance study needs at least {} trials, got {}",
                magnituder::kernels::MIN_VARIANCE_TRIALS,
                self.trials
            ))),
            ExperimentKind::VarianceStudy if self.unbiased_repetitions < magnituder::kernels::MIN_VARIANCE_TRIALS => Err(invalid(format!(
                "unbiased_repetitions must be at least {}",
                magnituder::kernels::MIN_VARIANCE_TRIALS
            ))),
            ExperimentKind::VarianceStudy if !self.trials.is_multiple_of(2) => {
                Err(invalid("variance study needs an even trial count (it also reports the half-sample estimate)"))
            }
            ExperimentKind::DistillBench if self.distill_layer >= 10 => Err(invalid(format!(
                "distill_layer must name a hidden layer of the image baseline (0..=9), got {}",
                self.distill_layer
            ))),
            _ => Ok(()),
        }
    }
}

/// On-disk form: every key optional, merged over defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    experiment: Option<String>,
    seed: Option<u64>,
    seeds: Option<usize>,
    d: Option<usize>,
    l: Option<usize>,
    rf_sweep: Option<Vec<usize>>,
    epochs: Option<usize>,
    samples: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    targets: Option<Vec<String>>,
    ensembles: Option<Vec<String>>,
    snnk: Option<bool>,
    trials: Option<usize>,
    unbiased_repetitions: Option<usize>,
    image_side: Option<usize>,
    color: Option<String>,
    sdf_side: Option<usize>,
    sdf_epochs: Option<usize>,
    sdf_features: Option<usize>,
    dr_width: Option<usize>,
    distill_layer: Option<usize>,
    subsample: Option<f64>,
    ridge: Option<f64>,
    output: Option<PathBuf>,
}

fn parse_all<T: FromStr>(items: &[String]) -> Result<Vec<T>, T::Err> {
    items.iter().map(|s| s.parse()).collect()
}

impl ConfigFile {
    fn merge(self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        take!(
            seed,
            seeds,
            d,
            l,
            rf_sweep,
            epochs,
            samples,
            batch_size,
            learning_rate,
            snnk,
            trials,
            unbiased_repetitions,
            image_side,
            sdf_side,
            sdf_epochs,
            sdf_features,
            dr_width,
            distill_layer,
            subsample,
            ridge,
            output
        );
        if let Some(t) = &self.targets {
            cfg.targets = parse_all(t)?;
        }
        if let Some(e) = &self.ensembles {
            cfg.ensembles = parse_all(e).map_err(|e: magnituder::Error| invalid(e.to_string()))?;
        }
        if let Some(c) = &self.color {
            cfg.color = match c.to_ascii_lowercase().as_str() {
                "sigmoid" => ColorActivation::Sigmoid,
                "softmax" => ColorActivation::Softmax,
                other => return Err(invalid(format!("unknown color activation '{other}'"))),
            };
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_keys_override_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            experiment = "synth-approx"
            seeds = 2
            rf_sweep = [4, 8]
            targets = ["softplus"]
            ensembles = ["iid"]
            output = "out"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seeds, 2);
        assert_eq!(cfg.rf_sweep, vec![4, 8]);
        assert_eq!(cfg.targets, vec![TargetActivation::Softplus]);
        assert_eq!(cfg.ensembles, vec![EnsembleKind::IidGaussian]);
        assert_eq!(cfg.epochs, 1000);
        assert_eq!(cfg.output, PathBuf::from("out"));
    }

    #[test]
    fn every_default_is_valid() {
        for kind in ExperimentKind::ALL {
            ExperimentConfig::defaults(kind).validate().unwrap();
            assert_eq!(kind.id().parse::<ExperimentKind>().unwrap(), kind);
        }
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        for bad in [
            "experiment = \"variance\"\nrf_sweep = []",
            "experiment = \"variance\"\nrf_sweep = [8, 8]",
            "experiment = \"variance\"\nrf_sweep = [16, 8]",
            "experiment = \"variance\"\nseeds = 0",
            "experiment = \"variance\"\ntrials = 10",
            "experiment = \"synth-approx\"\nsubsample = 1.5",
            "experiment = \"synth-approx\"\ntargets = [\"tanh\"]",
            "experiment = \"synth-approx\"\nepoch = 3",
            "seeds = 3",
            "experiment = \"nerf\"",
        ] {
            assert!(ExperimentConfig::from_toml(bad).is_err(), "{bad}");
        }
    }
}
