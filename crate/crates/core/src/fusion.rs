//! Bundling: folding the affine layers that follow a MAG layer into its readout.
//!
//! `W₂·(W₁·f(Gx) + b₁) + b₂ = (W₂W₁)·f(Gx) + (W₂b₁ + b₂)`, so a MAG layer followed by
//! any run of affine maps collapses to one readout `Ŵ` over the same random features.
//! When a following layer also reads a skip concatenation `[x₀ | h]`, its weight is
//! split column-wise and the `x₀` block is carried as a separate concat weight.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape, Result};
use crate::layers::{
    Activation, DenseLayer, FeatureProvenance, Layer, MagLayer, NetworkSpec, SkipConcat,
};
use crate::numerics::Matrix;

/// `act(Ŵ·f(G·x) + W_c·x₀ + b)`: a MAG layer with absorbed affine successors.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedLayer {
    pub(crate) features: Matrix,
    pub(crate) feature_activation: Activation,
    pub(crate) weight: Matrix,
    pub(crate) bias: Vec<f64>,
    pub(crate) concat_weight: Option<Matrix>,
    pub(crate) activation: Activation,
    pub(crate) provenance: Option<FeatureProvenance>,
}

impl FusedLayer {
    /// The MAG layer itself, with nothing absorbed yet.
    pub fn from_mag(mag: &MagLayer) -> Self {
        Self {
            features: mag.features.clone(),
            feature_activation: mag.activation,
            weight: mag.weight.clone(),
            bias: mag.bias.clone().unwrap_or_else(|| vec![0.0; mag.out_dim()]),
            concat_weight: None,
            activation: Activation::Identity,
            provenance: mag.provenance,
        }
    }

    pub fn from_parts(
        features: Matrix,
        feature_activation: Activation,
        weight: Matrix,
        bias: Vec<f64>,
        concat_weight: Option<Matrix>,
        activation: Activation,
    ) -> Result<Self> {
        if weight.cols() != features.rows() {
            return Err(shape(
                "FusedLayer::from_parts",
                format!("{} weight columns", features.rows()),
                format!("{}", weight.cols()),
            ));
        }
        if bias.len() != weight.rows() {
            return Err(shape(
                "FusedLayer::from_parts",
                format!("bias of length {}", weight.rows()),
                format!("{}", bias.len()),
            ));
        }
        if let Some(c) = &concat_weight {
            if c.rows() != weight.rows() {
                return Err(shape(
                    "FusedLayer::from_parts",
                    format!("{} concat rows", weight.rows()),
                    format!("{}", c.rows()),
                ));
            }
        }
        Ok(Self {
            features,
            feature_activation,
            weight,
            bias,
            concat_weight,
            activation,
            provenance: None,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn feature_count(&self) -> usize {
        self.features.rows()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_activation(&self) -> Activation {
        self.feature_activation
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn concat_weight(&self) -> Option<&Matrix> {
        self.concat_weight.as_ref()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn provenance(&self) -> Option<&FeatureProvenance> {
        self.provenance.as_ref()
    }

    pub fn with_provenance(mut self, p: Option<FeatureProvenance>) -> Self {
        self.provenance = p;
        self
    }

    pub fn mac_count(&self) -> usize {
        let m = self.feature_count();
        m * self.in_dim()
            + self.out_dim() * m
            + self
                .concat_weight
                .as_ref()
                .map_or(0, |c| c.rows() * c.cols())
    }

    pub fn param_count(&self) -> usize {
        self.features.rows() * self.features.cols()
            + self.weight.rows() * self.weight.cols()
            + self.bias.len()
            + self
                .concat_weight
                .as_ref()
                .map_or(0, |c| c.rows() * c.cols())
    }

    /// `original` must be given when a concat weight is present.
    pub fn forward(&self, x: &Matrix, original: Option<&Matrix>) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(shape(
                "fused_forward",
                format!("{} input columns", self.in_dim()),
                format!("{}", x.cols()),
            ));
        }
        let mut feats = x.matmul_t(&self.features)?;
        let fa = self.feature_activation;
        feats.map_inplace(|v| fa.apply(v));
        let mut z = feats.matmul_t(&self.weight)?;
        if let Some(c) = &self.concat_weight {
            let x0 = original.ok_or_else(|| {
                invalid("fused layer with concat weight needs the concatenated source")
            })?;
            if x0.rows() != x.rows() || x0.cols() != c.cols() {
                return Err(shape(
                    "fused_forward",
                    format!("{}x{} concat source", x.rows(), c.cols()),
                    format!("{}x{}", x0.rows(), x0.cols()),
                ));
            }
            crate::numerics::gemm(1.0, x0, false, c, true, 1.0, &mut z);
        }
        z.add_row_broadcast(&self.bias)?;
        let act = self.activation;
        if !act.is_identity() {
            z.map_inplace(|v| act.apply(v));
        }
        Ok(z)
    }

    /// Folds `next` in. `next` reads `[x₀ (concat_dim) | this layer's output]`.
    pub fn absorb(&self, next: &DenseLayer, concat_dim: usize) -> Result<FusedLayer> {
        if !self.activation.is_identity() {
            return Err(invalid("cannot absorb through a nonlinearity"));
        }
        if next.in_dim() != concat_dim + self.out_dim() {
            return Err(shape(
                "bundle",
                format!("next layer input {} + {}", concat_dim, self.out_dim()),
                format!("{}", next.in_dim()),
            ));
        }
        if let (Some(c), true) = (&self.concat_weight, concat_dim > 0) {
            if c.cols() != concat_dim {
                return Err(shape(
                    "bundle",
                    format!("concat width {}", c.cols()),
                    format!("{concat_dim}"),
                ));
            }
        }
        let w_cat = next.weight.slice_cols(0, concat_dim)?;
        let w_mag = next.weight.slice_cols(concat_dim, self.out_dim())?;
        let weight = w_mag.matmul(&self.weight)?;
        let mut bias = next.bias.clone();
        for (i, b) in bias.iter_mut().enumerate() {
            *b += w_mag
                .row(i)
                .iter()
                .zip(&self.bias)
                .map(|(w, v)| w * v)
                .sum::<f64>();
        }
        let carried = match &self.concat_weight {
            Some(c) => Some(w_mag.matmul(c)?),
            None => None,
        };
        let concat_weight = match (carried, concat_dim > 0) {
            (Some(c), true) => Some(c.add(&w_cat)?),
            (Some(c), false) => Some(c),
            (None, true) => Some(w_cat),
            (None, false) => None,
        };
        Ok(FusedLayer {
            features: self.features.clone(),
            feature_activation: self.feature_activation,
            weight,
            bias,
            concat_weight,
            activation: next.activation,
            provenance: self.provenance,
        })
    }
}

/// Collapses `mag` with the following layer: `Ŵ₂ = W₂·W₁`, bias `W₂·b₁ + b₂`,
/// with `next`'s activation applied after the fused affine map.
pub fn bundle(mag: &MagLayer, next: &DenseLayer) -> Result<FusedLayer> {
    FusedLayer::from_mag(mag).absorb(next, 0)
}

/// Column split of a layer reading `[x_concat | mag output]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConcatSplit {
    pub concat_dim: usize,
    pub mag_out_dim: usize,
}

/// Like [`bundle`] when `next` reads `[x_concat | mag output]`. Returns the fused layer
/// (which carries `W_concat`) and the `W_concat` slice as a bias-free identity layer,
/// `None` when `concat_dim == 0`.
pub fn bundle_with_concat(
    mag: &MagLayer,
    next: &DenseLayer,
    split: ConcatSplit,
) -> Result<(FusedLayer, Option<DenseLayer>)> {
    if split.concat_dim + split.mag_out_dim != next.in_dim() || split.mag_out_dim != mag.out_dim() {
        return Err(invalid(format!(
            "split {}+{} inconsistent with next input {} / MAG output {}",
            split.concat_dim,
            split.mag_out_dim,
            next.in_dim(),
            mag.out_dim()
        )));
    }
    let fused = FusedLayer::from_mag(mag).absorb(next, split.concat_dim)?;
    let slice = if split.concat_dim > 0 {
        Some(DenseLayer::from_parts(
            next.weight.slice_cols(0, split.concat_dim)?,
            vec![0.0; next.out_dim()],
            Activation::Identity,
        )?)
    } else {
        None
    };
    Ok((fused, slice))
}

/// Rewrites every MAG → affine run into a fused layer. Returns the network and the number of sites.
pub fn fuse_network_with_count(net: &NetworkSpec) -> Result<(NetworkSpec, usize)> {
    let src = net.layers();
    let mut layers: Vec<Layer> = Vec::with_capacity(src.len());
    let mut skips: Vec<SkipConcat> = Vec::new();
    let mut sites = 0;
    let mut k = 0;
    while k < src.len() {
        if net.has_skip(k) {
            skips.push(SkipConcat::input_at(layers.len()));
        }
        let start = match &src[k] {
            Layer::Mag(mag) => Some(FusedLayer::from_mag(mag)),
            Layer::Fused(f) if f.activation.is_identity() => Some(f.clone()),
            _ => None,
        };
        let Some(mut acc) = start else {
            layers.push(src[k].clone());
            k += 1;
            continue;
        };
        let mut j = k + 1;
        while j < src.len() && acc.activation.is_identity() {
            let Layer::Dense(next) = &src[j] else { break };
            let concat = if net.has_skip(j) { net.input_dim() } else { 0 };
            acc = acc.absorb(next, concat)?;
            j += 1;
        }
        if j == k + 1 {
            layers.push(src[k].clone());
        } else {
            sites += 1;
            layers.push(Layer::Fused(acc));
        }
        k = j;
    }
    Ok((net.with_layers(layers, skips)?, sites))
}

/// Behaviour-preserving rewrite of all fusable MAG sites; a no-op without any.
pub fn fuse_network(net: &NetworkSpec) -> Result<NetworkSpec> {
    fuse_network_with_count(net).map(|(n, _)| n)
}
