//! Synthetic layer approximation: MAG layers with growing feature counts
//! regress the outputs of a frozen random dense layer.

use magnituder::kernels::{train_snnk, SnnkInstantiation, SnnkLayer};
use magnituder::layers::{train_readout_with_stats, LrSchedule, ReadoutBatches, ReadoutConfig};
use magnituder::{Activation, DenseLayer, EnsembleKind, MagLayer, Matrix, RngStream};
use rand::Rng;

use super::{expect_kind, mean, timed, Result};
use crate::config::{ExperimentConfig, ExperimentKind, TargetActivation};
use crate::metrics::spearman;
use crate::results::{Check, Method, Report};

/// Spearman correlation of MSE against m that every seed must reach.
pub const SPEARMAN_BOUND: f64 = -0.9;

const DATA_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 2;
/// Layer streams are `LAYER_STREAM_BASE + m`, shared by both ensembles.
const LAYER_STREAM_BASE: u64 = 3;
const SNNK_STREAM_BASE: u64 = 1 << 32;

pub fn metric_name(target: TargetActivation) -> String {
    format!("{}_final_mse", target.name())
}

/// Inputs uniform in (0,1)^d.
fn uniform_inputs(n: usize, d: usize, rng: RngStream) -> Matrix {
    let mut r = rng.rng();
    Matrix::from_fn(n, d, |_, _| r.random::<f64>())
}

fn readout_config(cfg: &ExperimentConfig) -> ReadoutConfig {
    ReadoutConfig {
        batch_size: cfg.batch_size,
        schedule: LrSchedule::Cosine { floor: 0.0 },
        ..ReadoutConfig::new(cfg.epochs, cfg.learning_rate)
    }
}

/// Per seed and target: `samples` inputs uniform in (0,1)^d, a frozen random
/// d→l dense target with the target activation, and for every ensemble and
/// m a ReLU MAG layer (with bias) whose readout is trained by mini-batch Adam
/// with a cosine schedule. Records the final MSE over all samples.
pub fn run_synth_approx(cfg: &ExperimentConfig) -> Result<Report> {
    expect_kind(cfg, ExperimentKind::SynthApprox)?;
    let mut report = Report::new(ExperimentKind::SynthApprox);
    let train = readout_config(cfg);
    for seed in cfg.run_seeds() {
        let x = uniform_inputs(cfg.samples, cfg.d, RngStream::new(seed, DATA_STREAM));
        for &target in &cfg.targets {
            let teacher = DenseLayer::new(
                cfg.d,
                cfg.l,
                target.activation(),
                RngStream::new(seed, TARGET_STREAM),
            )?;
            let y = teacher.forward(&x)?;
            let metric = metric_name(target);
            for &ensemble in &cfg.ensembles {
                for &m in &cfg.rf_sweep {
                    let stream = RngStream::new(seed, LAYER_STREAM_BASE + m as u64);
                    let (fit, secs) = timed(|| -> Result<(f64, usize)> {
                        let mut layer = MagLayer::new(
                            cfg.d,
                            m,
                            cfg.l,
                            ensemble,
                            Activation::Relu,
                            true,
                            stream,
                        )?;
                        let batches =
                            ReadoutBatches::new(&layer.feature_map(&x)?, &y, cfg.batch_size)?;
                        train_readout_with_stats(&mut layer, &batches, &train)?;
                        Ok((layer.forward(&x)?.mse(&y)?, layer.trainable_params()))
                    });
                    let (mse, params) = fit?;
                    report.push(seed, m, Method::mag(ensemble), &metric, mse, secs, params)?;
                }
            }
            if cfg.snnk {
                for &m in &cfg.rf_sweep {
                    let stream = RngStream::new(seed, SNNK_STREAM_BASE + m as u64);
                    let (fit, secs) = timed(|| -> Result<(f64, usize)> {
                        let mut layer = SnnkLayer::new(
                            cfg.d,
                            m,
                            cfg.l,
                            EnsembleKind::BlockOrthogonal,
                            SnnkInstantiation::Trigonometric.pairs(),
                            1.0 / (cfg.d as f64).sqrt(),
                            stream,
                        )?;
                        let batches =
                            ReadoutBatches::new(&layer.feature_map(&x)?, &y, cfg.batch_size)?;
                        train_snnk(&mut layer, &batches, &train)?;
                        Ok((layer.forward(&x)?.mse(&y)?, layer.trainable_params()))
                    });
                    let (mse, params) = fit?;
                    report.push(seed, m, Method::Snnk, &metric, mse, secs, params)?;
                }
            }
        }
    }
    add_checks(cfg, &mut report);
    Ok(report)
}

/// MSE per m for one (method, seed, metric), in sweep order.
fn curve(
    report: &Report,
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    metric: &str,
) -> Vec<f64> {
    cfg.rf_sweep
        .iter()
        .filter_map(|&m| report.value(method, seed, m, metric))
        .collect()
}

fn add_checks(cfg: &ExperimentConfig, report: &mut Report) {
    let ms: Vec<f64> = cfg.rf_sweep.iter().map(|&m| m as f64).collect();
    let mut checks = Vec::new();
    for &target in &cfg.targets {
        let metric = metric_name(target);
        for &ensemble in &cfg.ensembles {
            let method = Method::mag(ensemble);
            let mut strict = 0;
            let mut worst = f64::NEG_INFINITY;
            for seed in cfg.run_seeds() {
                let mse = curve(report, cfg, method, seed, &metric);
                if mse.windows(2).all(|w| w[1] < w[0]) {
                    strict += 1;
                }
                // A single-point sweep has no rank correlation; treat it as vacuous.
                let rho = spearman(&ms, &mse).unwrap_or(-1.0);
                worst = worst.max(rho);
            }
            checks.push(Check::new(
                format!("{} {method}: final MSE strictly decreasing in m for every seed", target.name()),
                strict == cfg.seeds && worst <= SPEARMAN_BOUND,
                format!(
                    "{strict}/{} seeds strictly decreasing; largest Spearman {worst:.3} (bound {SPEARMAN_BOUND})",
                    cfg.seeds
                ),
            ));
        }
        if cfg.ensembles.contains(&EnsembleKind::BlockOrthogonal)
            && cfg.ensembles.contains(&EnsembleKind::IidGaussian)
        {
            let mut violations = Vec::new();
            let mut margins = Vec::new();
            for &m in &cfg.rf_sweep {
                let avg = |method| {
                    mean(
                        &cfg.run_seeds()
                            .filter_map(|s| report.value(method, s, m, &metric))
                            .collect::<Vec<_>>(),
                    )
                };
                let (orf, iid) = (avg(Method::MagOrf), avg(Method::MagIid));
                margins.push(format!("m={m}: {:+.2}%", 100.0 * (orf - iid) / iid));
                if orf > iid {
                    violations.push(m);
                }
            }
            checks.push(Check::new(
                format!(
                    "{}: mean final MSE with orthogonal features ≤ iid at every m",
                    target.name()
                ),
                violations.is_empty(),
                format!(
                    "ORF vs IID {}; violations at m = {violations:?}",
                    margins.join(", ")
                ),
            ));
        }
        if cfg.snnk
            && cfg.ensembles.contains(&EnsembleKind::BlockOrthogonal)
            && cfg.rf_sweep.contains(&cfg.d)
        {
            // MAG with m = d features and SNNK both train l·d + l parameters.
            let avg = |method| {
                mean(
                    &cfg.run_seeds()
                        .filter_map(|s| report.value(method, s, cfg.d, &metric))
                        .collect::<Vec<_>>(),
                )
            };
            let (mag, snnk) = (avg(Method::MagOrf), avg(Method::Snnk));
            checks.push(
                Check::new(
                    format!(
                        "{}: MAG MSE < SNNK MSE at matched parameter count (m = d = {})",
                        target.name(),
                        cfg.d
                    ),
                    mag < snnk,
                    format!("MAG_ORF {mag:.4e} vs SNNK {snnk:.4e} (trigonometric SNNK)"),
                )
                .informational(),
            );
        }
    }
    for c in checks {
        report.check(c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            seeds: 2,
            d: 6,
            l: 4,
            rf_sweep: vec![2, 4, 8],
            samples: 200,
            epochs: 0,
            batch_size: 50,
            ..ExperimentConfig::defaults(ExperimentKind::SynthApprox)
        }
    }

    #[test]
    fn zero_epochs_reports_the_untrained_layer_reproducibly() {
        let cfg = small();
        let a = run_synth_approx(&cfg).unwrap();
        let b = run_synth_approx(&cfg).unwrap();
        // seeds × targets × ensembles × sweep
        assert_eq!(a.rows().len(), 2 * 2 * 2 * 3);
        let strip = |r: &Report| crate::results::deterministic_columns(&r.to_csv_string().unwrap());
        assert_eq!(strip(&a), strip(&b));

        let x = uniform_inputs(cfg.samples, cfg.d, RngStream::new(0, DATA_STREAM));
        let y = DenseLayer::new(
            cfg.d,
            cfg.l,
            Activation::Relu,
            RngStream::new(0, TARGET_STREAM),
        )
        .unwrap()
        .forward(&x)
        .unwrap();
        let untrained = MagLayer::new(
            cfg.d,
            4,
            cfg.l,
            EnsembleKind::IidGaussian,
            Activation::Relu,
            true,
            RngStream::new(0, 7),
        )
        .unwrap()
        .forward(&x)
        .unwrap()
        .mse(&y)
        .unwrap();
        assert_eq!(
            a.value(Method::MagIid, 0, 4, "relu_final_mse"),
            Some(untrained)
        );
    }

    #[test]
    fn snnk_rows_are_added_when_enabled() {
        let cfg = ExperimentConfig {
            snnk: true,
            seeds: 1,
            targets: vec![TargetActivation::Softplus],
            rf_sweep: vec![6],
            epochs: 2,
            ..small()
        };
        let r = run_synth_approx(&cfg).unwrap();
        assert_eq!(r.values(Method::Snnk, "softplus_final_mse").len(), 1);
        assert_eq!(
            r.values(Method::Snnk, "softplus_final_mse")[0].trainable_params,
            6 * 4 + 4
        );
        assert!(r
            .checks
            .iter()
            .any(|c| c.informational && c.name.contains("SNNK")));
    }

    #[test]
    fn wrong_experiment_is_rejected_before_work() {
        let cfg = ExperimentConfig::defaults(ExperimentKind::VarianceStudy);
        assert!(run_synth_approx(&cfg).is_err());
    }
}
