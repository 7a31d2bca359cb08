//! Cost and quality of the signed-distance network with a dense last hidden
//! layer, a narrowed one (dimension reduction), and a MAG one before and
//! after fusion.

use magnituder::fusion::fuse_network;
use magnituder::layers::presets::{sdf_baseline, sdf_mag, sdf_reduced};
use magnituder::{NetworkSpec, RngStream};

use super::toy_inr::{fit_sdf, SdfData, FUSION_TOLERANCE};
use super::{expect_kind, timed, Result};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::results::{Check, Method, Report};

const BASELINE_INIT: u64 = 1;
const MAG_INIT: u64 = 2;
const DR_INIT: u64 = 7;

/// Seconds for one forward pass over the grid.
fn forward_seconds(net: &NetworkSpec, data: &SdfData) -> Result<f64> {
    let (out, secs) = timed(|| net.forward_raw(&data.inputs));
    out?;
    Ok(secs)
}

/// Rows for one variant; `forward_seconds` goes in the wall-time column of the MAC row.
#[allow(clippy::too_many_arguments)]
fn variant_rows(
    report: &mut Report,
    seed: u64,
    m: usize,
    method: Method,
    suffix: &str,
    net: &NetworkSpec,
    data: &SdfData,
    params: usize,
    train_secs: f64,
) -> Result<(f64, usize)> {
    let e = data.errors(net)?;
    report.push(
        seed,
        m,
        method,
        format!("sdf_l1_avg{suffix}"),
        e.avg,
        train_secs,
        params,
    )?;
    report.push(
        seed,
        m,
        method,
        format!("sdf_l1_surf{suffix}"),
        e.surf,
        0.0,
        params,
    )?;
    report.push(
        seed,
        m,
        method,
        format!("sdf_l1_band{suffix}"),
        e.band,
        0.0,
        params,
    )?;
    report.push(
        seed,
        m,
        method,
        format!("macs{suffix}"),
        net.mac_count() as f64,
        forward_seconds(net, data)?,
        params,
    )?;
    Ok((e.avg, net.mac_count()))
}

pub fn run_fuse_bench(cfg: &ExperimentConfig) -> Result<Report> {
    expect_kind(cfg, ExperimentKind::FuseBench)?;
    let mut report = Report::new(ExperimentKind::FuseBench);
    let data = SdfData::new(cfg.sdf_side);
    for seed in cfg.run_seeds() {
        let mut base = sdf_baseline(RngStream::new(seed, BASELINE_INIT))?;
        let secs = fit_sdf(&mut base, &data, cfg, seed)?;
        let (_, base_macs) = variant_rows(
            &mut report,
            seed,
            0,
            Method::Baseline,
            "",
            &base,
            &data,
            base.param_count().0,
            secs,
        )?;

        let mut dr = sdf_reduced(cfg.dr_width, RngStream::new(seed, DR_INIT))?;
        let secs = fit_sdf(&mut dr, &data, cfg, seed)?;
        let (dr_err, dr_macs) = variant_rows(
            &mut report,
            seed,
            0,
            Method::DenseDr,
            "",
            &dr,
            &data,
            dr.param_count().0,
            secs,
        )?;
        report.push(
            seed,
            0,
            Method::DenseDr,
            "last_hidden_width",
            cfg.dr_width as f64,
            0.0,
            dr.param_count().0,
        )?;

        for &ensemble in &cfg.ensembles {
            let method = Method::mag(ensemble);
            for &m in &cfg.rf_sweep {
                let mut mag = sdf_mag(m, ensemble, RngStream::new(seed, MAG_INIT))?;
                let secs = fit_sdf(&mut mag, &data, cfg, seed)?;
                let params = mag.param_count().0;
                let (mag_err, mag_macs) =
                    variant_rows(&mut report, seed, m, method, "", &mag, &data, params, secs)?;
                let fused = fuse_network(&mag)?;
                let (_, fused_macs) = variant_rows(
                    &mut report,
                    seed,
                    m,
                    method,
                    "_fused",
                    &fused,
                    &data,
                    params,
                    0.0,
                )?;
                let diff = fused
                    .forward_raw(&data.inputs)?
                    .max_abs_diff(&mag.forward_raw(&data.inputs)?)?;
                report.push(seed, m, method, "fusion_max_abs_diff", diff, 0.0, params)?;
                report.check(Check::new(
                    format!(
                        "seed {seed} {method} m={m}: fused MACs < unfused MACs < baseline MACs"
                    ),
                    fused_macs < mag_macs && mag_macs < base_macs,
                    format!("{fused_macs} < {mag_macs} < {base_macs}"),
                ));
                report.check(Check::new(
                    format!("seed {seed} {method} m={m}: fused output equals unfused"),
                    diff <= FUSION_TOLERANCE,
                    format!("max |Δ| {diff:.2e}"),
                ));
                report.check(
                    Check::new(
                        format!("seed {seed} {method} m={m}: DR (width {}) has higher SDF error than MAG", cfg.dr_width),
                        dr_err > mag_err,
                        format!("L1_avg DR {dr_err:.4e} vs MAG {mag_err:.4e}; MACs DR {dr_macs} vs fused MAG {fused_macs}"),
                    )
                    .informational(),
                );
            }
        }
    }
    Ok(report)
}
