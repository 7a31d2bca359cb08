//! Coordinate-network analogues of radiance and signed-distance fitting.
//!
//! Task A fits the procedural RGB image with the radiance presets (only the
//! `rgb` head is supervised). Task B fits the composite-shape signed distance
//! with the signed-distance presets.

use std::io::Write;
use std::path::{Path, PathBuf};

use magnituder::fusion::fuse_network;
use magnituder::layers::presets::{
    radiance_baseline, radiance_mag, sdf_baseline, sdf_mag, ColorActivation,
};
use magnituder::layers::{train, Targets, TrainConfig};
use magnituder::{Matrix, NetworkSpec, RngStream};

use super::{expect_kind, mean, timed, Result};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::encoding::{grid_coords, positional_encoding};
use crate::formats::{load_network, save_network};
use crate::metrics::{mean_abs_error, psnr};
use crate::results::{Check, Method, Report};
use crate::scenes::{procedural_image, CompositeShape};

/// Largest PSNR deficit of the MAG variant, in dB, averaged over seeds.
pub const PSNR_PARITY_DB: f64 = 1.0;
/// Largest fused-vs-unfused output difference.
pub const FUSION_TOLERANCE: f64 = 1e-9;
/// Zero-level-set points used for the surface error.
pub const SURFACE_POINTS: usize = 1024;

const BASELINE_INIT: u64 = 1;
const MAG_INIT: u64 = 2;
const SHUFFLE: u64 = 3;

/// Encoded pixel grid and RGB targets of the procedural image.
#[derive(Debug, Clone)]
pub struct ImageData {
    pub side: usize,
    pub inputs: Matrix,
    pub rgb: Matrix,
}

impl ImageData {
    pub fn new(side: usize) -> Self {
        Self {
            side,
            inputs: positional_encoding(&grid_coords(side)),
            rgb: procedural_image(side),
        }
    }

    /// PSNR of the network's `rgb` head against the image.
    pub fn psnr(&self, net: &NetworkSpec) -> Result<f64> {
        Ok(psnr(&self.predict(net)?, &self.rgb))
    }

    pub fn predict(&self, net: &NetworkSpec) -> Result<Matrix> {
        let out = net.forward(&self.inputs)?;
        Ok(out
            .head("rgb")
            .expect("radiance presets have an rgb head")
            .clone())
    }
}

/// Encoded grid with exact signed distances, plus encoded surface points.
#[derive(Debug, Clone)]
pub struct SdfData {
    pub inputs: Matrix,
    pub distances: Matrix,
    pub surface_inputs: Matrix,
    /// Grid rows within one grid spacing of the surface.
    pub band: Vec<usize>,
}

/// Signed-distance errors of a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfErrors {
    /// Mean |error| over the grid.
    pub avg: f64,
    /// Mean |prediction| at points on the zero level set (off the training grid).
    pub surf: f64,
    /// Mean |error| over grid points within one spacing of the surface.
    pub band: f64,
}

impl SdfData {
    pub fn new(side: usize) -> Self {
        let shape = CompositeShape::default();
        let coords = grid_coords(side);
        let distances = shape.distances(&coords);
        let spacing = 2.0 / (side - 1) as f64;
        let band = (0..distances.rows())
            .filter(|&i| distances.get(i, 0).abs() < spacing)
            .collect();
        Self {
            inputs: positional_encoding(&coords),
            distances,
            surface_inputs: positional_encoding(&shape.surface_points(SURFACE_POINTS)),
            band,
        }
    }

    pub fn errors(&self, net: &NetworkSpec) -> Result<SdfErrors> {
        let pred = net.forward_raw(&self.inputs)?;
        let avg = mean_abs_error(&pred, &self.distances);
        let band = self
            .band
            .iter()
            .map(|&i| (pred.get(i, 0) - self.distances.get(i, 0)).abs())
            .sum::<f64>()
            / self.band.len().max(1) as f64;
        let surf = net.forward_raw(&self.surface_inputs)?;
        let surf = surf.as_slice().iter().map(|v| v.abs()).sum::<f64>() / surf.rows() as f64;
        Ok(SdfErrors { avg, surf, band })
    }
}

fn train_config(epochs: usize, cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig::new(
        epochs,
        cfg.batch_size,
        cfg.learning_rate,
        RngStream::new(seed, SHUFFLE),
    )
}

/// Trains `net` on the image's `rgb` head; returns the wall time.
pub fn fit_image(
    net: &mut NetworkSpec,
    data: &ImageData,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<f64> {
    let targets = Targets::Named(vec![("rgb", &data.rgb)]);
    let (r, secs) = timed(|| {
        train(
            net,
            &data.inputs,
            &targets,
            &train_config(cfg.epochs, cfg, seed),
        )
    });
    r?;
    Ok(secs)
}

/// Trains `net` on the signed distances; returns the wall time.
pub fn fit_sdf(
    net: &mut NetworkSpec,
    data: &SdfData,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<f64> {
    let targets = Targets::All(&data.distances);
    let (r, secs) = timed(|| {
        train(
            net,
            &data.inputs,
            &targets,
            &train_config(cfg.sdf_epochs, cfg, seed),
        )
    });
    r?;
    Ok(secs)
}

pub fn image_baseline(color: ColorActivation, seed: u64) -> Result<NetworkSpec> {
    Ok(radiance_baseline(
        color,
        RngStream::new(seed, BASELINE_INIT),
    )?)
}

fn color_name(color: ColorActivation) -> &'static str {
    match color {
        ColorActivation::Sigmoid => "sigmoid",
        ColorActivation::Softmax => "softmax",
    }
}

/// Cache path of the trained image baseline; the name encodes every setting
/// that influences training, so a cached file is only reused when it matches.
pub fn baseline_path(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output.join(format!(
        "image_baseline_seed{seed}_side{}_epochs{}_batch{}_lr{:e}_{}.magnet",
        cfg.image_side,
        cfg.epochs,
        cfg.batch_size,
        cfg.learning_rate,
        color_name(cfg.color)
    ))
}

/// Loads the trained image baseline for `seed` from the output directory, or
/// trains and saves it. Returns the network and its training time (0 if loaded).
pub fn trained_image_baseline(
    cfg: &ExperimentConfig,
    data: &ImageData,
    seed: u64,
) -> Result<(NetworkSpec, f64)> {
    let path = baseline_path(cfg, seed);
    if path.exists() {
        return Ok((load_network(&path)?, 0.0));
    }
    let mut net = image_baseline(cfg.color, seed)?;
    let secs = fit_image(&mut net, data, cfg, seed)?;
    std::fs::create_dir_all(&cfg.output)?;
    save_network(&net, &path)?;
    Ok((net, secs))
}

/// Binary PPM (P6) of an n×3 image with values clamped to [0, 1].
pub fn write_ppm(path: &Path, side: usize, rgb: &Matrix) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P6\n{side} {side}\n255\n")?;
    let bytes: Vec<u8> = rgb
        .as_slice()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    out.write_all(&bytes)?;
    Ok(out.flush()?)
}

/// CSV of the signed-distance grid: `x,y,truth,prediction`.
fn write_sdf_csv(path: &Path, side: usize, data: &SdfData, net: &NetworkSpec) -> Result<()> {
    let coords = grid_coords(side);
    let pred = net.forward_raw(&data.inputs)?;
    let mut w = csv::Writer::from_path(path).map_err(crate::results::ResultError::from)?;
    w.write_record(["x", "y", "truth", "prediction"])
        .map_err(crate::results::ResultError::from)?;
    for i in 0..coords.rows() {
        w.write_record(
            [
                coords.get(i, 0),
                coords.get(i, 1),
                data.distances.get(i, 0),
                pred.get(i, 0),
            ]
            .map(|v| v.to_string()),
        )
        .map_err(crate::results::ResultError::from)?;
    }
    w.flush()?;
    Ok(())
}

/// Records MACs and fused-vs-unfused agreement of `net`; returns the fused network.
fn fusion_rows(
    report: &mut Report,
    seed: u64,
    m: usize,
    method: Method,
    prefix: &str,
    net: &NetworkSpec,
    probe: &Matrix,
) -> Result<NetworkSpec> {
    let params = net.param_count().0;
    let (fused, fuse_secs) = timed(|| fuse_network(net));
    let fused = fused?;
    let diff = fused
        .forward_raw(probe)?
        .max_abs_diff(&net.forward_raw(probe)?)?;
    report.push(
        seed,
        m,
        method,
        format!("{prefix}_macs"),
        net.mac_count() as f64,
        0.0,
        params,
    )?;
    report.push(
        seed,
        m,
        method,
        format!("{prefix}_macs_fused"),
        fused.mac_count() as f64,
        fuse_secs,
        params,
    )?;
    report.push(
        seed,
        m,
        method,
        format!("{prefix}_fusion_max_abs_diff"),
        diff,
        0.0,
        params,
    )?;
    report.check(Check::new(
        format!(
            "seed {seed} {prefix} {method} m={m}: fused output equals unfused and costs fewer MACs"
        ),
        diff <= FUSION_TOLERANCE && fused.mac_count() < net.mac_count(),
        format!(
            "max |Δ| {diff:.2e}; MACs {} → {}",
            net.mac_count(),
            fused.mac_count()
        ),
    ));
    Ok(fused)
}

pub fn run_toy_inr(cfg: &ExperimentConfig) -> Result<Report> {
    expect_kind(cfg, ExperimentKind::ToyInr)?;
    let mut report = Report::new(ExperimentKind::ToyInr);
    std::fs::create_dir_all(&cfg.output)?;
    image_task(cfg, &mut report)?;
    sdf_task(cfg, &mut report)?;
    Ok(report)
}

fn image_task(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let data = ImageData::new(cfg.image_side);
    write_ppm(&cfg.output.join("image_target.ppm"), data.side, &data.rgb)?;
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
        report.push(
            seed,
            0,
            Method::Baseline,
            "image_macs",
            base.mac_count() as f64,
            0.0,
            base_params,
        )?;
        write_ppm(
            &cfg.output.join(format!("image_baseline_seed{seed}.ppm")),
            data.side,
            &data.predict(&base)?,
        )?;
        for &ensemble in &cfg.ensembles {
            let method = Method::mag(ensemble);
            for &m in &cfg.rf_sweep {
                let mut net = radiance_mag(m, ensemble, cfg.color, RngStream::new(seed, MAG_INIT))?;
                let secs = fit_image(&mut net, &data, cfg, seed)?;
                let params = net.param_count().0;
                report.push(
                    seed,
                    m,
                    method,
                    "image_psnr",
                    data.psnr(&net)?,
                    secs,
                    params,
                )?;
                let fused = fusion_rows(report, seed, m, method, "image", &net, &data.inputs)?;
                report.push(
                    seed,
                    m,
                    method,
                    "image_psnr_fused",
                    data.psnr(&fused)?,
                    0.0,
                    params,
                )?;
                write_ppm(
                    &cfg.output.join(format!(
                        "image_{}_m{m}_seed{seed}.ppm",
                        method.tag().to_lowercase()
                    )),
                    data.side,
                    &data.predict(&net)?,
                )?;
                if m < magnituder::layers::presets::HIDDEN {
                    report.check(Check::new(
                        format!("seed {seed} {method} m={m}: fewer trainable parameters than the baseline"),
                        params < base_params,
                        format!("{params} vs {base_params} ({:.4})", params as f64 / base_params as f64),
                    ));
                }
            }
        }
    }
    for &ensemble in &cfg.ensembles {
        let method = Method::mag(ensemble);
        for &m in &cfg.rf_sweep {
            let per_seed = |method, m| -> Vec<f64> {
                cfg.run_seeds()
                    .filter_map(|s| report.value(method, s, m, "image_psnr"))
                    .collect()
            };
            let (mag, base) = (
                mean(&per_seed(method, m)),
                mean(&per_seed(Method::Baseline, 0)),
            );
            report.check(Check::new(
                format!(
                    "{method} m={m}: mean image PSNR within {PSNR_PARITY_DB} dB of the baseline"
                ),
                (mag - base).abs() <= PSNR_PARITY_DB,
                format!(
                    "{mag:.2} dB vs {base:.2} dB over {} seeds (Δ {:+.2} dB)",
                    cfg.seeds,
                    mag - base
                ),
            ));
        }
    }
    Ok(())
}

fn sdf_rows(
    report: &mut Report,
    seed: u64,
    m: usize,
    method: Method,
    e: SdfErrors,
    secs: f64,
    params: usize,
) -> Result<()> {
    report.push(seed, m, method, "sdf_l1_avg", e.avg, secs, params)?;
    report.push(seed, m, method, "sdf_l1_surf", e.surf, 0.0, params)?;
    report.push(seed, m, method, "sdf_l1_band", e.band, 0.0, params)?;
    Ok(())
}

fn sdf_task(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let data = SdfData::new(cfg.sdf_side);
    for seed in cfg.run_seeds() {
        let mut base = sdf_baseline(RngStream::new(seed, BASELINE_INIT))?;
        let secs = fit_sdf(&mut base, &data, cfg, seed)?;
        let params = base.param_count().0;
        sdf_rows(
            report,
            seed,
            0,
            Method::Baseline,
            data.errors(&base)?,
            secs,
            params,
        )?;
        report.push(
            seed,
            0,
            Method::Baseline,
            "sdf_macs",
            base.mac_count() as f64,
            0.0,
            params,
        )?;
        write_sdf_csv(
            &cfg.output.join(format!("sdf_baseline_seed{seed}.csv")),
            cfg.sdf_side,
            &data,
            &base,
        )?;
        for &ensemble in &cfg.ensembles {
            let method = Method::mag(ensemble);
            let m = cfg.sdf_features;
            let mut net = sdf_mag(m, ensemble, RngStream::new(seed, MAG_INIT))?;
            let secs = fit_sdf(&mut net, &data, cfg, seed)?;
            let params = net.param_count().0;
            sdf_rows(report, seed, m, method, data.errors(&net)?, secs, params)?;
            fusion_rows(report, seed, m, method, "sdf", &net, &data.inputs)?;
            write_sdf_csv(
                &cfg.output.join(format!(
                    "sdf_{}_m{m}_seed{seed}.csv",
                    method.tag().to_lowercase()
                )),
                cfg.sdf_side,
                &data,
                &net,
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_clamping() {
        let dir = std::env::temp_dir().join(format!("maglab-ppm-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("x.ppm");
        let img = Matrix::from_rows(&[&[0.0, 0.5, 1.0], &[-1.0, 2.0, 0.2], &[0.0; 3], &[1.0; 3]])
            .unwrap();
        write_ppm(&path, 2, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n2 2\n255\n"));
        assert_eq!(&bytes[11..17], &[0, 128, 255, 0, 255, 51]);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn sdf_grid_straddles_the_surface() {
        let data = SdfData::new(8);
        assert_eq!(data.inputs.rows(), 64);
        assert!(data.distances.as_slice().iter().any(|&d| d < 0.0));
        assert!(data.distances.as_slice().iter().any(|&d| d > 0.0));
        assert!(!data.band.is_empty() && data.band.len() < 64);
    }
}
