//! Variance of the MAG kernel estimator under iid and block-orthogonal features.

use magnituder::kernels::{
    estimator_variance, kernel_mag_exact, KernelEstimator, ScalarFunction, VarianceReport,
};
use magnituder::{EnsembleKind, RngStream};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{expect_kind, timed, Result};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::metrics::slope;
use crate::results::{Check, Method, Report};

/// Minimum gap between iid and orthogonal variances, in combined standard errors.
pub const GAP_STANDARD_ERRORS: f64 = 2.0;
/// Relative error allowed for the large-m unbiasedness check.
pub const UNBIASED_TOLERANCE: f64 = 0.01;
/// Doubling trials must scale the squared jackknife error by 1/2 within this fraction.
pub const SCALING_TOLERANCE: f64 = 0.3;

const U_STREAM: u64 = 1;
const V_STREAM: u64 = 2;
/// Feature streams are `FEATURE_STREAM_BASE + m`, shared by both ensembles.
const FEATURE_STREAM_BASE: u64 = 16;
const UNBIASED_STREAM: u64 = 3;

/// Functions studied, with their CSV names.
pub fn functions() -> [(&'static str, ScalarFunction); 3] {
    [
        ("exp", ScalarFunction::Exp(1.0)),
        ("relu", ScalarFunction::Relu),
        ("const", ScalarFunction::Constant(1.0)),
    ]
}

/// `u` uniform in [0,1)^d (nonnegative) and `v` a uniformly random unit vector.
pub fn probe_vectors(d: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut ru = RngStream::new(seed, U_STREAM).rng();
    let u = (0..d).map(|_| ru.random::<f64>()).collect();
    let mut rv = RngStream::new(seed, V_STREAM).rng();
    let g: Vec<f64> = (0..d).map(|_| rv.sample(StandardNormal)).collect();
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    (u, g.into_iter().map(|x| x / norm).collect())
}

fn gap_in_standard_errors(orf: &VarianceReport, iid: &VarianceReport) -> f64 {
    let se = orf
        .variance_standard_error
        .hypot(iid.variance_standard_error);
    if se == 0.0 {
        return if iid.variance > orf.variance {
            f64::INFINITY
        } else {
            0.0
        };
    }
    (iid.variance - orf.variance) / se
}

pub fn run_variance_study(cfg: &ExperimentConfig) -> Result<Report> {
    expect_kind(cfg, ExperimentKind::VarianceStudy)?;
    let mut report = Report::new(ExperimentKind::VarianceStudy);
    for seed in cfg.run_seeds() {
        let (u, v) = probe_vectors(cfg.d, seed);
        for (name, f) in functions() {
            let exact = kernel_mag_exact(&u, &v, &[f])?;
            let mut by_m = Vec::new();
            for &m in &cfg.rf_sweep {
                let mut pair = Vec::new();
                for ensemble in [EnsembleKind::BlockOrthogonal, EnsembleKind::IidGaussian] {
                    let template = KernelEstimator::magnituder(
                        ensemble,
                        m,
                        vec![f],
                        RngStream::new(seed, FEATURE_STREAM_BASE + m as u64),
                    )?;
                    let (r, secs) = timed(|| estimator_variance(&u, &v, &template, cfg.trials));
                    let r = r?;
                    let method = Method::mag(ensemble);
                    report.push(seed, m, method, format!("{name}_exact"), exact, 0.0, 0)?;
                    report.push(seed, m, method, format!("{name}_mean"), r.mean, secs, 0)?;
                    report.push(
                        seed,
                        m,
                        method,
                        format!("{name}_mean_se"),
                        r.mean_standard_error,
                        secs,
                        0,
                    )?;
                    report.push(
                        seed,
                        m,
                        method,
                        format!("{name}_variance"),
                        r.variance,
                        secs,
                        0,
                    )?;
                    report.push(
                        seed,
                        m,
                        method,
                        format!("{name}_variance_se"),
                        r.variance_standard_error,
                        secs,
                        0,
                    )?;
                    pair.push(r);
                }
                let iid = pair.pop().expect("two ensembles");
                let orf = pair.pop().expect("two ensembles");
                by_m.push((m, orf, iid));
            }
            variance_checks(&mut report, seed, name, f, &by_m);
        }
        scaling_check(cfg, &mut report, seed, &u, &v)?;
        unbiasedness_checks(cfg, &mut report, seed, &u, &v)?;
    }
    Ok(report)
}

fn variance_checks(
    report: &mut Report,
    seed: u64,
    name: &str,
    f: ScalarFunction,
    by_m: &[(usize, VarianceReport, VarianceReport)],
) {
    if let ScalarFunction::Constant(_) = f {
        let zero = by_m
            .iter()
            .all(|(_, o, i)| o.variance == 0.0 && i.variance == 0.0);
        report.check(Check::new(
            format!("seed {seed} {name}: both variances are zero"),
            zero,
            format!("{} sweep points", by_m.len()),
        ));
        return;
    }
    let hard = matches!(f, ScalarFunction::Exp(_));
    let detail: Vec<String> = by_m
        .iter()
        .map(|(m, o, i)| {
            format!(
                "m={m}: {:.4e} vs {:.4e} ({:+.1} SE)",
                o.variance,
                i.variance,
                gap_in_standard_errors(o, i)
            )
        })
        .collect();
    let ordered = by_m.iter().all(|(_, o, i)| o.variance <= i.variance);
    let check = Check::new(
        format!("seed {seed} {name}: Var_ort ≤ Var_iid at every m"),
        ordered,
        detail.join("; "),
    );
    report.check(if hard { check } else { check.informational() });
    if hard {
        let (m, o, i) = &by_m[0];
        let gap = gap_in_standard_errors(o, i);
        report.check(Check::new(
            format!("seed {seed} {name}: Var_iid − Var_ort ≥ {GAP_STANDARD_ERRORS} combined jackknife SE at m={m}"),
            gap >= GAP_STANDARD_ERRORS,
            format!("gap {gap:.2} SE"),
        ));
    }
    if by_m.len() >= 2 {
        let log_m: Vec<f64> = by_m.iter().map(|(m, _, _)| (*m as f64).ln()).collect();
        let log_var: Vec<f64> = by_m.iter().map(|(_, _, i)| i.variance.ln()).collect();
        let s = slope(&log_m, &log_var);
        report.check(
            Check::new(
                format!("seed {seed} {name}: iid variance ∝ 1/m"),
                (-1.2..=-0.8).contains(&s),
                format!("log-log slope {s:.3}"),
            )
            .informational(),
        );
    }
}

/// Doubling the trial count halves the squared jackknife error of the variance.
fn scaling_check(
    cfg: &ExperimentConfig,
    report: &mut Report,
    seed: u64,
    u: &[f64],
    v: &[f64],
) -> Result<()> {
    let m = cfg.rf_sweep[0];
    let template = KernelEstimator::magnituder(
        EnsembleKind::IidGaussian,
        m,
        vec![ScalarFunction::Exp(1.0)],
        RngStream::new(seed, FEATURE_STREAM_BASE + m as u64),
    )?;
    let half = estimator_variance(u, v, &template, cfg.trials / 2)?;
    let full = estimator_variance(u, v, &template, cfg.trials)?;
    report.push(
        seed,
        m,
        Method::MagIid,
        "exp_variance_se_half_trials",
        half.variance_standard_error,
        0.0,
        0,
    )?;
    let ratio = (full.variance_standard_error / half.variance_standard_error).powi(2);
    report.check(Check::new(
        format!("seed {seed} exp: doubling trials halves the variance-of-variance estimate"),
        (ratio - 0.5).abs() <= SCALING_TOLERANCE * 0.5,
        format!("SE²({}) / SE²({}) = {ratio:.3}", cfg.trials, cfg.trials / 2),
    ));
    Ok(())
}

/// Averaging `unbiased_repetitions` independent m = d estimates — every
/// coordinate's expectation is then averaged over that many features — lands
/// within 1% of the closed form.
fn unbiasedness_checks(
    cfg: &ExperimentConfig,
    report: &mut Report,
    seed: u64,
    u: &[f64],
    v: &[f64],
) -> Result<()> {
    let n = cfg.unbiased_repetitions;
    for (name, f) in functions().into_iter().take(2) {
        let exact = kernel_mag_exact(u, v, &[f])?;
        for ensemble in [EnsembleKind::BlockOrthogonal, EnsembleKind::IidGaussian] {
            let template = KernelEstimator::magnituder(
                ensemble,
                cfg.d,
                vec![f],
                RngStream::new(seed, UNBIASED_STREAM),
            )?;
            let r = estimator_variance(u, v, &template, n)?;
            let rel = (r.mean - exact).abs() / exact.abs();
            let method = Method::mag(ensemble);
            report.push(
                seed,
                cfg.d * n,
                method,
                format!("{name}_estimate"),
                r.mean,
                0.0,
                0,
            )?;
            report.push(
                seed,
                cfg.d * n,
                method,
                format!("{name}_relative_error"),
                rel,
                0.0,
                0,
            )?;
            report.check(Check::new(
                format!("seed {seed} {name} {method}: estimate averaging {n} features per coordinate within 1% of the closed form"),
                rel <= UNBIASED_TOLERANCE,
                format!(
                    "estimate {:.6} vs exact {exact:.6} ({:.3}%, {:.2} SE)",
                    r.mean,
                    100.0 * rel,
                    (r.mean - exact) / r.mean_standard_error
                ),
            ));
        }
    }
    Ok(())
}
