use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::Activation;
use crate::error::{invalid, shape, Result};
use crate::numerics::{EnsembleKind, Matrix, RngStream};

/// How a frozen feature matrix was drawn, so it can be regenerated and checked.
///
/// The stored matrix is the first `rows` rows of `ensemble.sample(drawn_rows, d, stream)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureProvenance {
    pub ensemble: EnsembleKind,
    pub stream: RngStream,
    pub drawn_rows: usize,
}

impl FeatureProvenance {
    pub fn regenerate(&self, rows: usize, cols: usize) -> Result<Matrix> {
        if rows > self.drawn_rows {
            return Err(invalid(format!(
                "provenance drew {} rows, {rows} requested",
                self.drawn_rows
            )));
        }
        self.ensemble
            .sample(self.drawn_rows, cols, self.stream)?
            .slice_rows(0, rows)
    }
}

/// Magnituder layer `x ↦ W·f(G·x) (+ b)` with trainable `W` (l×m) and frozen `G` (m×d).
#[derive(Debug, Clone, PartialEq)]
pub struct MagLayer {
    pub(crate) weight: Matrix,
    pub(crate) features: Matrix,
    pub(crate) activation: Activation,
    pub(crate) bias: Option<Vec<f64>>,
    pub(crate) provenance: Option<FeatureProvenance>,
}

impl MagLayer {
    /// Draws `G` from `ensemble` on `rng.substream(0)` and initialises `W` (and `b`)
    /// uniformly in `±1/√(m·d)` from `rng.substream(1)`.
    ///
    /// Features `f(gᵀx)` scale with `‖x‖`, roughly `√d` times a single input
    /// coordinate; the extra `1/√d` gives outputs the scale of a dense layer's
    /// output, so stacked MAG layers neither explode nor vanish at initialisation.
    pub fn new(
        d: usize,
        m: usize,
        l: usize,
        ensemble: EnsembleKind,
        activation: Activation,
        with_bias: bool,
        rng: RngStream,
    ) -> Result<Self> {
        if d == 0 || m == 0 || l == 0 {
            return Err(invalid(format!(
                "MAG dims must be positive, got d={d}, m={m}, l={l}"
            )));
        }
        let provenance = FeatureProvenance {
            ensemble,
            stream: rng.substream(0),
            drawn_rows: m,
        };
        let features = ensemble.sample(m, d, provenance.stream)?;
        let bound = 1.0 / libm::sqrt((m * d) as f64);
        let mut r = rng.substream(1).rng();
        let weight = Matrix::from_fn(l, m, |_, _| r.random_range(-bound..bound));
        let bias = with_bias.then(|| (0..l).map(|_| r.random_range(-bound..bound)).collect());
        let mut layer = Self::from_parts(weight, features, activation, bias)?;
        layer.provenance = Some(provenance);
        Ok(layer)
    }

    pub fn from_parts(
        weight: Matrix,
        features: Matrix,
        activation: Activation,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        if weight.cols() != features.rows() {
            return Err(shape(
                "MagLayer::from_parts",
                format!("W with {} columns (= feature count)", features.rows()),
                format!("{}", weight.cols()),
            ));
        }
        if weight.rows() == 0 || features.rows() == 0 || features.cols() == 0 {
            return Err(invalid("MAG layer matrices must be non-empty"));
        }
        if let Some(b) = &bias {
            if b.len() != weight.rows() {
                return Err(shape(
                    "MagLayer::from_parts",
                    format!("bias of length {}", weight.rows()),
                    format!("{}", b.len()),
                ));
            }
        }
        if !weight.is_finite() || !features.is_finite() {
            return Err(invalid("MAG layer parameters must be finite"));
        }
        activation.validate()?;
        Ok(Self {
            weight,
            features,
            activation,
            bias,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: FeatureProvenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    /// Input dimension `d`.
    pub fn in_dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of random features `m`.
    pub fn feature_count(&self) -> usize {
        self.features.rows()
    }

    /// Output dimension `l`.
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn provenance(&self) -> Option<&FeatureProvenance> {
        self.provenance.as_ref()
    }

    pub fn set_weight(&mut self, weight: Matrix) -> Result<()> {
        if weight.shape() != self.weight.shape() {
            return Err(shape(
                "MagLayer::set_weight",
                format!("{}x{}", self.weight.rows(), self.weight.cols()),
                format!("{}x{}", weight.rows(), weight.cols()),
            ));
        }
        self.weight = weight;
        Ok(())
    }

    /// `X·Gᵀ`
    pub fn projections(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(shape(
                "mag_forward",
                format!("{} input columns", self.in_dim()),
                format!("{}", x.cols()),
            ));
        }
        x.matmul_t(&self.features)
    }

    /// Random-feature map `f(X·Gᵀ)`.
    pub fn feature_map(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = self.projections(x)?;
        let act = self.activation;
        h.map_inplace(|v| act.apply(v));
        Ok(h)
    }

    /// `f(X·Gᵀ)·Wᵀ (+ b)`
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let feats = self.feature_map(x)?;
        self.readout(&feats)
    }

    /// Applies the trainable readout to precomputed features.
    pub fn readout(&self, feats: &Matrix) -> Result<Matrix> {
        let mut y = feats.matmul_t(&self.weight)?;
        if let Some(b) = &self.bias {
            y.add_row_broadcast(b)?;
        }
        Ok(y)
    }

    /// True when `G` is bit-identical to a regeneration from its provenance.
    pub fn verify_features(&self) -> Option<bool> {
        let p = self.provenance?;
        Some(
            p.regenerate(self.feature_count(), self.in_dim())
                .map(|g| g == self.features)
                .unwrap_or(false),
        )
    }

    pub fn trainable_params(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    pub fn frozen_params(&self) -> usize {
        self.features.rows() * self.features.cols()
    }
}

/// Free-function form of [`MagLayer::forward`].
pub fn mag_forward(layer: &MagLayer, x: &Matrix) -> Result<Matrix> {
    layer.forward(x)
}
