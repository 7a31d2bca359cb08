//! Acceptance criteria, one PASS/FAIL line each. Runs the harness at its
//! default desk-scale settings (several minutes on one core) and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use magnituder::distill::{distill_closed_form, CaptureDataset, CaptureProvenance};
use magnituder::fusion::fuse_network;
use magnituder::layers::presets::{radiance_baseline, radiance_mag, ColorActivation};
use magnituder::layers::{train_readout, ReadoutConfig};
use magnituder::numerics::sample_gaussian_matrix;
use magnituder::{Activation, DenseLayer, EnsembleKind, MagLayer, Matrix, RngStream};
use magnituder_lab::config::{ExperimentConfig, ExperimentKind};
use magnituder_lab::encoding::positional_encoding;
use magnituder_lab::experiments::{
    run_distill_bench, run_synth_approx, run_toy_inr, run_variance_study, DISTILL_SLACK_DB,
};
use magnituder_lab::metrics::{non_decreasing_with_slack, spearman};
use magnituder_lab::results::{Method, Report};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// MSE against m for one seed, target and method.
fn curve(
    report: &Report,
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    metric: &str,
) -> Vec<f64> {
    cfg.rf_sweep
        .iter()
        .map(|&m| report.value(method, seed, m, metric).expect("row present"))
        .collect()
}

fn monotone_mse(report: &Report, cfg: &ExperimentConfig) -> Outcome {
    let ms: Vec<f64> = cfg.rf_sweep.iter().map(|&m| m as f64).collect();
    let mut failures = Vec::new();
    let mut worst: f64 = -1.0;
    for target in ["relu", "softplus"] {
        let metric = format!("{target}_final_mse");
        for method in [Method::MagOrf, Method::MagIid] {
            for seed in cfg.run_seeds() {
                let mse = curve(report, cfg, method, seed, &metric);
                let rho = spearman(&ms, &mse).expect("nonconstant");
                worst = worst.max(rho);
                if !mse.windows(2).all(|w| w[1] < w[0]) || rho > -0.9 {
                    failures.push(format!("{target}/{method}/seed {seed}"));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("{} seeds × 2 targets × 2 ensembles; largest Spearman {worst:.3}; failures {failures:?}", cfg.seeds),
    )
}

fn orf_advantage(report: &Report, cfg: &ExperimentConfig) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for target in ["relu", "softplus"] {
        let metric = format!("{target}_final_mse");
        for &m in &cfg.rf_sweep {
            let avg = |method| {
                mean(
                    &cfg.run_seeds()
                        .map(|s| report.value(method, s, m, &metric).unwrap())
                        .collect::<Vec<_>>(),
                )
            };
            let (orf, iid) = (avg(Method::MagOrf), avg(Method::MagIid));
            ok &= orf <= iid;
            parts.push(format!("{target} m={m} {:+.3}%", 100.0 * (orf - iid) / iid));
        }
    }
    outcome(ok, format!("mean ORF vs IID: {}", parts.join(", ")))
}

fn variance_reduction(report: &Report) -> Outcome {
    let get = |method, metric| report.value(method, 0, 16, metric).unwrap();
    let (vo, so) = (
        get(Method::MagOrf, "exp_variance"),
        get(Method::MagOrf, "exp_variance_se"),
    );
    let (vi, si) = (
        get(Method::MagIid, "exp_variance"),
        get(Method::MagIid, "exp_variance_se"),
    );
    let gap = (vi - vo) / so.hypot(si);
    outcome(
        vo <= vi && gap >= 2.0,
        format!("Var_ort {vo:.4} ± {so:.4}, Var_iid {vi:.4} ± {si:.4}, gap {gap:.2} SE"),
    )
}

fn unbiasedness(report: &Report, cfg: &ExperimentConfig) -> Outcome {
    let m = cfg.d * cfg.unbiased_repetitions;
    let mut parts = Vec::new();
    let mut ok = true;
    for f in ["relu", "exp"] {
        for method in [Method::MagOrf, Method::MagIid] {
            let rel = report
                .value(method, 0, m, &format!("{f}_relative_error"))
                .unwrap();
            ok &= rel <= 0.01;
            parts.push(format!("{f}/{method} {:.3}%", 100.0 * rel));
        }
    }
    outcome(
        ok,
        format!(
            "relative error at {} features per coordinate: {}",
            cfg.unbiased_repetitions,
            parts.join(", ")
        ),
    )
}

fn bundling() -> Outcome {
    let net = radiance_mag(
        256,
        EnsembleKind::BlockOrthogonal,
        ColorActivation::Sigmoid,
        RngStream::new(5, 0),
    )
    .unwrap();
    let mut r = RngStream::new(5, 1).rng();
    let coords = Matrix::from_fn(1000, 2, |_, _| r.random_range(-1.0..1.0));
    let x = positional_encoding(&coords);
    let fused = fuse_network(&net).unwrap();
    let diff = fused
        .forward_raw(&x)
        .unwrap()
        .max_abs_diff(&net.forward_raw(&x).unwrap())
        .unwrap();
    let (before, after) = (net.mac_count(), fused.mac_count());
    outcome(
        diff <= 1e-9 && after < before,
        format!("max |Δ| {diff:.2e} over 1000 inputs; MACs {before} → {after}"),
    )
}

fn closed_form_optimality() -> Outcome {
    let (n, d, m, l) = (50_000, 64, 64, 8);
    let x = sample_gaussian_matrix(n, d, RngStream::new(6, 0)).unwrap();
    let y = DenseLayer::new(d, l, Activation::Relu, RngStream::new(6, 1))
        .unwrap()
        .forward(&x)
        .unwrap();
    let ds = CaptureDataset::new(x, y, CaptureProvenance::default()).unwrap();
    let start = Instant::now();
    let (closed, report) = distill_closed_form(
        &ds,
        m,
        EnsembleKind::BlockOrthogonal,
        RngStream::new(6, 2),
        0.0,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut gd = MagLayer::from_parts(
        Matrix::zeros(l, m),
        closed.features().clone(),
        Activation::Relu,
        None,
    )
    .unwrap();
    train_readout(&mut gd, ds.x(), ds.y(), &ReadoutConfig::new(1000, 1e-2)).unwrap();
    let gd_mse = gd.forward(ds.x()).unwrap().mse(ds.y()).unwrap();
    let design = closed.feature_map(ds.x()).unwrap();
    let residual = closed.readout(&design).unwrap().sub(ds.y()).unwrap();
    let orth = design.t_matmul(&residual).unwrap().frobenius_norm()
        / design.t_matmul(ds.y()).unwrap().frobenius_norm();
    outcome(
        report.fit_mse <= gd_mse + 1e-10 && orth <= 1e-8 && secs < 2.0,
        format!(
            "closed {:.6e} vs Adam {gd_mse:.6e}; ‖Fᵀr‖/‖FᵀY‖ {orth:.1e}; solve {secs:.3} s",
            report.fit_mse
        ),
    )
}

fn parameter_reduction() -> Outcome {
    let base = radiance_baseline(ColorActivation::Sigmoid, RngStream::from_seed(0))
        .unwrap()
        .param_count()
        .0;
    let mag = radiance_mag(
        256,
        EnsembleKind::BlockOrthogonal,
        ColorActivation::Sigmoid,
        RngStream::from_seed(0),
    )
    .unwrap()
    .param_count()
    .0;
    let ratio = mag as f64 / base as f64;
    outcome(
        (0.65..=0.75).contains(&ratio),
        format!("{mag} / {base} = {ratio:.4}"),
    )
}

fn psnr_parity(report: &Report, cfg: &ExperimentConfig) -> Outcome {
    let avg = |method, m| {
        mean(
            &cfg.run_seeds()
                .map(|s| report.value(method, s, m, "image_psnr").unwrap())
                .collect::<Vec<_>>(),
        )
    };
    let (base, mag) = (avg(Method::Baseline, 0), avg(Method::MagOrf, 256));
    outcome(
        (mag - base).abs() <= 1.0,
        format!(
            "mean PSNR over {} seeds: baseline {base:.2} dB, MAG {mag:.2} dB (Δ {:+.2} dB)",
            cfg.seeds,
            mag - base
        ),
    )
}

fn distillation_trend(report: &Report, cfg: &ExperimentConfig) -> Outcome {
    let psnr: Vec<f64> = cfg
        .rf_sweep
        .iter()
        .map(|&m| report.value(Method::MagOrf, 0, m, "image_psnr").unwrap())
        .collect();
    let listed = psnr
        .iter()
        .map(|p| format!("{p:.2}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        non_decreasing_with_slack(&psnr, 1, DISTILL_SLACK_DB),
        format!("PSNR at m = {:?}: {listed} dB", cfg.rf_sweep),
    )
}

fn main() -> ExitCode {
    let out = tempfile::tempdir().expect("temporary output directory");
    let mut all_passed = true;
    let mut report_line = |n: usize, name: &str, o: Outcome, secs: f64| {
        all_passed &= o.passed;
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict}: criterion {n} — {name} — {} [{secs:.1} s]",
            o.detail
        );
    };
    let timed = |f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        (o, start.elapsed().as_secs_f64())
    };

    let synth_cfg = ExperimentConfig {
        output: out.path().to_path_buf(),
        ..ExperimentConfig::defaults(ExperimentKind::SynthApprox)
    };
    let start = Instant::now();
    let synth = run_synth_approx(&synth_cfg).expect("synthetic study runs");
    let synth_secs = start.elapsed().as_secs_f64();
    report_line(
        1,
        "MAG final MSE strictly decreasing in m per seed",
        monotone_mse(&synth, &synth_cfg),
        synth_secs,
    );
    report_line(
        2,
        "orthogonal features no worse than iid on mean MSE",
        orf_advantage(&synth, &synth_cfg),
        0.0,
    );

    let var_cfg = ExperimentConfig {
        rf_sweep: vec![16],
        output: out.path().to_path_buf(),
        ..ExperimentConfig::defaults(ExperimentKind::VarianceStudy)
    };
    let start = Instant::now();
    let variance = run_variance_study(&var_cfg).expect("variance study runs");
    let var_secs = start.elapsed().as_secs_f64();
    report_line(
        3,
        "orthogonal features reduce exp-kernel estimator variance",
        variance_reduction(&variance),
        var_secs,
    );
    report_line(
        4,
        "kernel estimates match closed forms",
        unbiasedness(&variance, &var_cfg),
        0.0,
    );

    let (o, s) = timed(&mut bundling);
    report_line(5, "fused network equals unfused with fewer MACs", o, s);
    let (o, s) = timed(&mut closed_form_optimality);
    report_line(6, "closed-form distillation optimal and fast", o, s);
    let (o, s) = timed(&mut parameter_reduction);
    report_line(7, "MAG (m=256) to baseline trainable-parameter ratio", o, s);

    // The SDF task is not part of this criterion; keep it to a forward pass.
    let inr_cfg = ExperimentConfig {
        sdf_side: 16,
        sdf_epochs: 0,
        output: out.path().to_path_buf(),
        ..ExperimentConfig::defaults(ExperimentKind::ToyInr)
    };
    let start = Instant::now();
    let inr = run_toy_inr(&inr_cfg).expect("toy INR runs");
    report_line(
        8,
        "MAG image PSNR within 1 dB of the dense baseline",
        psnr_parity(&inr, &inr_cfg),
        start.elapsed().as_secs_f64(),
    );

    // Shares the output directory, so the seed-0 image baseline trained above is reused.
    let distill_cfg = ExperimentConfig {
        output: out.path().to_path_buf(),
        ..ExperimentConfig::defaults(ExperimentKind::DistillBench)
    };
    let start = Instant::now();
    let distill = run_distill_bench(&distill_cfg).expect("distillation bench runs");
    report_line(
        9,
        "post-replacement PSNR non-decreasing in m",
        distillation_trend(&distill, &distill_cfg),
        start.elapsed().as_secs_f64(),
    );

    println!(
        "INFO: criterion 10 — full-scale radiance-field and SDF benchmark numbers are out of scope at desk scale; criteria 1–9 stand in for them"
    );
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
