//! Backprop-free replacement of a trained layer by a magnituder layer.
//!
//! The layer's inputs and outputs are recorded on probe data, random features
//! are drawn, and the readout is the least-squares fit of the recorded outputs.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{invalid, shape, Result};
use crate::layers::{Activation, FeatureProvenance, MagLayer, NetworkSpec};
use crate::numerics::{least_squares, EnsembleKind, Matrix, RngStream};

/// Default ridge used for distillation solves.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Where a capture came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CaptureProvenance {
    pub network_id: String,
    pub layer_index: usize,
    pub probe: String,
}

/// Recorded inputs `X` (n×d) and post-activation outputs `Y` (n×l) of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureDataset {
    x: Matrix,
    y: Matrix,
    provenance: CaptureProvenance,
}

impl CaptureDataset {
    pub fn new(x: Matrix, y: Matrix, provenance: CaptureProvenance) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(shape(
                "CaptureDataset",
                format!("{} output rows", x.rows()),
                format!("{}", y.rows()),
            ));
        }
        if x.rows() == 0 || x.cols() == 0 || y.cols() == 0 {
            return Err(invalid("capture datasets must be non-empty"));
        }
        Ok(Self { x, y, provenance })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn provenance(&self) -> &CaptureProvenance {
        &self.provenance
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn with_provenance(mut self, provenance: CaptureProvenance) -> Self {
        self.provenance = provenance;
        self
    }
}

/// Runs `probe_inputs` through `net` and records layer `layer_index`'s input
/// (after any skip concatenation) and activated output. `net` is not modified.
pub fn capture(
    net: &NetworkSpec,
    layer_index: usize,
    probe_inputs: &Matrix,
) -> Result<CaptureDataset> {
    let (x, y) = net.layer_io(layer_index, probe_inputs)?;
    CaptureDataset::new(
        x,
        y,
        CaptureProvenance {
            network_id: String::new(),
            layer_index,
            probe: format!("{} probe rows", probe_inputs.rows()),
        },
    )
}

/// Uniform row subsample without replacement keeping `round(fraction·n)` rows,
/// in random order. `fraction = 1` yields a permutation.
pub fn subsample(ds: &CaptureDataset, fraction: f64, rng: RngStream) -> Result<CaptureDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = ds.rows();
    let k = libm::round(fraction * n as f64) as usize;
    if k == 0 {
        return Err(invalid(format!(
            "fraction {fraction} of {n} rows keeps none"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let (chosen, _) = idx.partial_shuffle(&mut rng.rng(), k);
    let chosen = chosen.to_vec();
    CaptureDataset::new(
        ds.x.select_rows(&chosen)?,
        ds.y.select_rows(&chosen)?,
        ds.provenance.clone(),
    )
}

/// Outcome of a distillation solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillReport {
    /// Mean squared error of the fitted layer on the capture.
    pub fit_mse: f64,
    /// Wall time of feature drawing and the solve; zero without `std`.
    pub solve_seconds: f64,
    pub m: usize,
    pub ridge: f64,
    /// Numerical rank of the feature matrix `f(X·Gᵀ)`.
    pub rank: usize,
    /// Set when the feature matrix lacked full column rank.
    pub rank_deficient: bool,
}

/// Draws `G` (m×d) from `ensemble` on `rng` and fits the readout of a ReLU
/// magnituder layer to the capture.
pub fn distill_closed_form(
    ds: &CaptureDataset,
    m: usize,
    ensemble: EnsembleKind,
    rng: RngStream,
    ridge: f64,
) -> Result<(MagLayer, DistillReport)> {
    let provenance = FeatureProvenance {
        ensemble,
        stream: rng,
        drawn_rows: m,
    };
    distill_with_provenance(ds, provenance, m, ridge)
}

/// As [`distill_closed_form`], using the first `m` rows of the features
/// described by `provenance`. Sharing one provenance across several `m`
/// gives nested feature sets.
pub fn distill_with_provenance(
    ds: &CaptureDataset,
    provenance: FeatureProvenance,
    m: usize,
    ridge: f64,
) -> Result<(MagLayer, DistillReport)> {
    if m == 0 {
        return Err(invalid("distillation needs m ≥ 1"));
    }
    let clock = Clock::start();
    let features = provenance.regenerate(m, ds.x.cols())?;
    let (layer, mut report) = fit(ds, features, Activation::Relu, ridge, clock)?;
    report.m = m;
    Ok((layer.with_provenance(provenance), report))
}

/// Fits the readout for a given feature matrix and activation.
pub fn distill_with_features(
    ds: &CaptureDataset,
    features: Matrix,
    activation: Activation,
    ridge: f64,
) -> Result<(MagLayer, DistillReport)> {
    fit(ds, features, activation, ridge, Clock::start())
}

fn fit(
    ds: &CaptureDataset,
    features: Matrix,
    activation: Activation,
    ridge: f64,
    clock: Clock,
) -> Result<(MagLayer, DistillReport)> {
    if features.cols() != ds.x.cols() {
        return Err(shape(
            "distill",
            format!("features with {} columns", ds.x.cols()),
            format!("{}", features.cols()),
        ));
    }
    let design = activation.apply_matrix(&ds.x.matmul_t(&features)?);
    let solved = least_squares(&design, &ds.y, ridge)?;
    let weight = solved.solution.transpose();
    let solve_seconds = clock.elapsed();
    let layer = MagLayer::from_parts(weight, features, activation, None)?;
    let fit_mse = layer.readout(&design)?.mse(&ds.y)?;
    let report = DistillReport {
        fit_mse,
        solve_seconds,
        m: layer.feature_count(),
        ridge,
        rank: solved.rank,
        rank_deficient: solved.rank_deficient,
    };
    Ok((layer, report))
}

/// Swaps layer `layer_index` of `net` for `mag`; the interface must match.
pub fn replace_layer(net: &NetworkSpec, layer_index: usize, mag: MagLayer) -> Result<NetworkSpec> {
    net.replace_layer(layer_index, mag)
}

struct Clock {
    #[cfg(feature = "std")]
    start: std::time::Instant,
}

impl Clock {
    fn start() -> Self {
        Self {
            #[cfg(feature = "std")]
            start: std::time::Instant::now(),
        }
    }

    fn elapsed(&self) -> f64 {
        #[cfg(feature = "std")]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(not(feature = "std"))]
        {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::DenseLayer;
    use crate::numerics::sample_gaussian_matrix;
    use alloc::vec;

    fn small_net() -> NetworkSpec {
        NetworkSpec::sequential(
            3,
            vec![
                DenseLayer::new(3, 5, Activation::Relu, RngStream::from_seed(1))
                    .unwrap()
                    .into(),
                DenseLayer::new(5, 4, Activation::Identity, RngStream::from_seed(2))
                    .unwrap()
                    .into(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn capture_first_layer_records_probe() {
        let net = small_net();
        let probe = sample_gaussian_matrix(10, 3, RngStream::from_seed(3)).unwrap();
        let before = net.forward_raw(&probe).unwrap();
        let ds = capture(&net, 0, &probe).unwrap();
        assert_eq!(ds.x(), &probe);
        assert_eq!(ds.provenance().layer_index, 0);
        assert_eq!(net.forward_raw(&probe).unwrap(), before);
    }

    #[test]
    fn capture_identity_layer_is_affine() {
        let net = small_net();
        let probe = sample_gaussian_matrix(6, 3, RngStream::from_seed(4)).unwrap();
        let ds = capture(&net, 1, &probe).unwrap();
        let crate::layers::Layer::Dense(l) = &net.layers()[1] else {
            panic!()
        };
        let mut direct = ds.x().matmul_t(l.weight()).unwrap();
        direct.add_row_broadcast(l.bias()).unwrap();
        assert!(direct.max_abs_diff(ds.y()).unwrap() < 1e-14);
        assert!(capture(&net, 2, &probe).is_err());
    }

    #[test]
    fn subsample_sizes_and_alignment() {
        let x = Matrix::from_fn(1000, 2, |i, j| (i * 2 + j) as f64);
        let y = Matrix::from_fn(1000, 1, |i, _| i as f64);
        let ds = CaptureDataset::new(x, y, CaptureProvenance::default()).unwrap();
        let s = subsample(&ds, 0.1, RngStream::from_seed(1)).unwrap();
        assert_eq!(s.rows(), 100);
        for r in 0..s.rows() {
            assert_eq!(s.x().get(r, 0), 2.0 * s.y().get(r, 0));
        }
        let t = subsample(&ds, 0.1, RngStream::from_seed(2)).unwrap();
        assert_ne!(s.y(), t.y());
        let full = subsample(&ds, 1.0, RngStream::from_seed(3)).unwrap();
        let mut seen: Vec<usize> = full.y().as_slice().iter().map(|&v| v as usize).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..1000).collect::<Vec<_>>());
        assert!(subsample(&ds, 0.0001, RngStream::from_seed(0)).is_err());
        assert!(subsample(&ds, 1.5, RngStream::from_seed(0)).is_err());
    }

    #[test]
    fn realizable_target_is_recovered() {
        let teacher = MagLayer::new(
            4,
            10,
            3,
            EnsembleKind::BlockOrthogonal,
            Activation::Relu,
            false,
            RngStream::from_seed(9),
        )
        .unwrap();
        let x = sample_gaussian_matrix(200, 4, RngStream::from_seed(10)).unwrap();
        let ds = CaptureDataset::new(
            x.clone(),
            teacher.forward(&x).unwrap(),
            CaptureProvenance::default(),
        )
        .unwrap();
        let (student, report) =
            distill_with_provenance(&ds, *teacher.provenance().unwrap(), 10, 0.0).unwrap();
        assert!(report.fit_mse <= 1e-12);
        assert!(!report.rank_deficient);
        assert!(student.weight().max_abs_diff(teacher.weight()).unwrap() < 1e-8);
    }

    #[test]
    fn all_zero_features_give_zero_readout() {
        let x = Matrix::zeros(5, 3);
        let y = Matrix::filled(5, 2, 1.0);
        let ds = CaptureDataset::new(x, y, CaptureProvenance::default()).unwrap();
        let (layer, report) = distill_closed_form(
            &ds,
            4,
            EnsembleKind::IidGaussian,
            RngStream::from_seed(0),
            0.0,
        )
        .unwrap();
        assert!(report.rank_deficient);
        assert_eq!(layer.weight().max_abs(), 0.0);
        assert!((report.fit_mse - 1.0).abs() < 1e-15);
    }

    #[test]
    fn distillation_is_deterministic() {
        let x = sample_gaussian_matrix(50, 3, RngStream::from_seed(1)).unwrap();
        let y = sample_gaussian_matrix(50, 2, RngStream::from_seed(2)).unwrap();
        let ds = CaptureDataset::new(x, y, CaptureProvenance::default()).unwrap();
        let a = distill_closed_form(
            &ds,
            16,
            EnsembleKind::BlockOrthogonal,
            RngStream::from_seed(3),
            DEFAULT_RIDGE,
        )
        .unwrap()
        .0;
        let b = distill_closed_form(
            &ds,
            16,
            EnsembleKind::BlockOrthogonal,
            RngStream::from_seed(3),
            DEFAULT_RIDGE,
        )
        .unwrap()
        .0;
        assert_eq!(a, b);
        assert_eq!(a.verify_features(), Some(true));
    }

    #[test]
    fn replace_checks_interface() {
        let net = small_net();
        let good = MagLayer::new(
            5,
            8,
            4,
            EnsembleKind::IidGaussian,
            Activation::Relu,
            false,
            RngStream::from_seed(0),
        )
        .unwrap();
        let bad = MagLayer::new(
            5,
            8,
            3,
            EnsembleKind::IidGaussian,
            Activation::Relu,
            false,
            RngStream::from_seed(0),
        )
        .unwrap();
        assert!(replace_layer(&net, 1, good.clone()).is_ok());
        assert!(replace_layer(&net, 1, bad).is_err());
        assert!(replace_layer(&net, 7, good).is_err());
    }
}
