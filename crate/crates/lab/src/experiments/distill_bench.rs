//! Closed-form distillation of a hidden layer of the trained image baseline
//! into MAG layers of growing width.

use magnituder::distill::{
    capture, distill_closed_form, distill_with_provenance, replace_layer, subsample,
    CaptureDataset, CaptureProvenance,
};
use magnituder::fusion::fuse_network;
use magnituder::layers::FeatureProvenance;
use magnituder::{EnsembleKind, Matrix, RngStream};
use rand::Rng;
use rand_distr::StandardNormal;

use super::toy_inr::{trained_image_baseline, ImageData, FUSION_TOLERANCE};
use super::{expect_kind, timed, Result};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::formats::save_capture;
use crate::metrics::non_decreasing_with_slack;
use crate::results::{Check, Method, Report};

/// PSNR may drop once along the sweep by at most this much.
pub const DISTILL_SLACK_DB: f64 = 0.1;
/// Shape of the solve-time benchmark: rows, input width, features.
pub const BENCHMARK_SHAPE: (usize, usize, usize) = (50_000, 64, 64);
/// Solve-time target for the benchmark, in seconds (informational).
pub const BENCHMARK_SECONDS: f64 = 2.0;

const SUBSAMPLE_STREAM: u64 = 4;
const FEATURE_STREAM: u64 = 5;
const BENCHMARK_STREAM: u64 = 6;

pub fn run_distill_bench(cfg: &ExperimentConfig) -> Result<Report> {
    expect_kind(cfg, ExperimentKind::DistillBench)?;
    let mut report = Report::new(ExperimentKind::DistillBench);
    let data = ImageData::new(cfg.image_side);
    let largest = *cfg.rf_sweep.last().expect("validated nonempty");
    for seed in cfg.run_seeds() {
        let (base, secs) = trained_image_baseline(cfg, &data, seed)?;
        let base_params = base.param_count().0;
        report.push(
            seed,
            0,
            Method::Baseline,
            "image_psnr",
            data.psnr(&base)?,
            secs,
            base_params,
        )?;

        let full =
            capture(&base, cfg.distill_layer, &data.inputs)?.with_provenance(CaptureProvenance {
                network_id: format!("image-baseline-seed{seed}"),
                layer_index: cfg.distill_layer,
                probe: format!("{0}x{0} training grid", cfg.image_side),
            });
        let ds = if cfg.subsample < 1.0 {
            subsample(&full, cfg.subsample, RngStream::new(seed, SUBSAMPLE_STREAM))?
        } else {
            full
        };
        save_capture(
            &ds,
            &cfg.output.join(format!(
                "capture_layer{}_seed{seed}.magcap",
                cfg.distill_layer
            )),
        )?;

        for &ensemble in &cfg.ensembles {
            let method = Method::mag(ensemble);
            // One draw of `largest` rows; every m uses a prefix, so feature sets are nested.
            let provenance = FeatureProvenance {
                ensemble,
                stream: RngStream::new(seed, FEATURE_STREAM),
                drawn_rows: largest,
            };
            let mut fit_mse = Vec::new();
            let mut quality = Vec::new();
            for &m in &cfg.rf_sweep {
                let (mag, fit) = distill_with_provenance(&ds, provenance, m, cfg.ridge)?;
                let net = replace_layer(&base, cfg.distill_layer, mag)?;
                let params = net.param_count().0;
                let fused = fuse_network(&net)?;
                let diff = fused
                    .forward_raw(&data.inputs)?
                    .max_abs_diff(&net.forward_raw(&data.inputs)?)?;
                let psnr = data.psnr(&net)?;
                report.push(
                    seed,
                    m,
                    method,
                    "fit_mse",
                    fit.fit_mse,
                    fit.solve_seconds,
                    params,
                )?;
                report.push(
                    seed,
                    m,
                    method,
                    "feature_rank",
                    fit.rank as f64,
                    0.0,
                    params,
                )?;
                report.push(seed, m, method, "image_psnr", psnr, 0.0, params)?;
                report.push(
                    seed,
                    m,
                    method,
                    "image_psnr_fused",
                    data.psnr(&fused)?,
                    0.0,
                    params,
                )?;
                report.push(seed, m, method, "macs", net.mac_count() as f64, 0.0, params)?;
                report.push(
                    seed,
                    m,
                    method,
                    "macs_fused",
                    fused.mac_count() as f64,
                    0.0,
                    params,
                )?;
                report.check(Check::new(
                    format!("seed {seed} {method} m={m}: distilled network fuses exactly"),
                    diff <= FUSION_TOLERANCE,
                    format!("max |Δ| {diff:.2e}"),
                ));
                fit_mse.push(fit.fit_mse);
                quality.push(psnr);
            }
            let sweep = |v: &[f64], digits: usize| {
                v.iter()
                    .map(|x| format!("{x:.digits$e}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            report.check(Check::new(
                format!("seed {seed} {method}: fit MSE non-increasing in m (nested features)"),
                fit_mse.windows(2).all(|w| w[1] <= w[0]),
                format!("m = {:?}: {}", cfg.rf_sweep, sweep(&fit_mse, 3)),
            ));
            report.check(Check::new(
                format!("seed {seed} {method}: post-replacement PSNR non-decreasing in m (one drop ≤ {DISTILL_SLACK_DB} dB allowed)"),
                non_decreasing_with_slack(&quality, 1, DISTILL_SLACK_DB),
                format!(
                    "m = {:?}: {} dB",
                    cfg.rf_sweep,
                    quality.iter().map(|q| format!("{q:.2}")).collect::<Vec<_>>().join(", ")
                ),
            ));
        }
        solve_benchmark(cfg, &mut report, seed)?;
    }
    Ok(report)
}

/// Times one solve at the benchmark shape on a synthetic capture whose
/// targets are a ReLU of a random linear map.
fn solve_benchmark(cfg: &ExperimentConfig, report: &mut Report, seed: u64) -> Result<()> {
    let (n, d, m) = BENCHMARK_SHAPE;
    let mut r = RngStream::new(seed, BENCHMARK_STREAM).rng();
    let x = Matrix::from_fn(n, d, |_, _| r.sample(StandardNormal));
    let a = Matrix::from_fn(d, d, |_, _| {
        r.sample::<f64, _>(StandardNormal) / (d as f64).sqrt()
    });
    let y = x.matmul(&a)?.map(|v| v.max(0.0));
    let ds = CaptureDataset::new(x, y, CaptureProvenance::default())?;
    let (fit, secs) = timed(|| {
        distill_closed_form(
            &ds,
            m,
            EnsembleKind::BlockOrthogonal,
            RngStream::new(seed, FEATURE_STREAM),
            cfg.ridge,
        )
    });
    let (_, fit) = fit?;
    report.push(
        seed,
        m,
        Method::MagOrf,
        "benchmark_fit_mse",
        fit.fit_mse,
        secs,
        0,
    )?;
    report.check(
        Check::new(
            format!("seed {seed}: closed-form solve for n={n}, d={d}, m={m} under {BENCHMARK_SECONDS} s"),
            secs < BENCHMARK_SECONDS,
            format!("{secs:.3} s"),
        )
        .informational(),
    );
    Ok(())
}
