use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{DenseLayer, HeadActivation, MagLayer};
use crate::error::{invalid, shape, Result};
use crate::fusion::FusedLayer;
use crate::numerics::Matrix;

/// One node of a layer chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    Mag(MagLayer),
    /// Inference-only product of bundling.
    Fused(FusedLayer),
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Dense(l) => l.in_dim(),
            Layer::Mag(l) => l.in_dim(),
            Layer::Fused(l) => l.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Dense(l) => l.out_dim(),
            Layer::Mag(l) => l.out_dim(),
            Layer::Fused(l) => l.out_dim(),
        }
    }

    /// Forward pass; `original` is the network input, needed by fused layers that absorbed a skip.
    pub fn forward(&self, x: &Matrix, original: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Mag(l) => l.forward(x),
            Layer::Fused(l) => l.forward(x, Some(original)),
        }
    }

    /// Multiply-accumulate operations per input row.
    pub fn mac_count(&self) -> usize {
        match self {
            Layer::Dense(l) => l.in_dim() * l.out_dim(),
            Layer::Mag(l) => l.feature_count() * (l.in_dim() + l.out_dim()),
            Layer::Fused(l) => l.mac_count(),
        }
    }

    /// `(trainable, frozen)` scalar counts.
    pub fn param_count(&self) -> (usize, usize) {
        match self {
            Layer::Dense(l) => (l.param_count(), 0),
            Layer::Mag(l) => (l.trainable_params(), l.frozen_params()),
            Layer::Fused(l) => (0, l.param_count()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Mag(_) => "mag",
            Layer::Fused(_) => "fused",
        }
    }
}

impl From<DenseLayer> for Layer {
    fn from(l: DenseLayer) -> Self {
        Layer::Dense(l)
    }
}

impl From<MagLayer> for Layer {
    fn from(l: MagLayer) -> Self {
        Layer::Mag(l)
    }
}

impl From<FusedLayer> for Layer {
    fn from(l: FusedLayer) -> Self {
        Layer::Fused(l)
    }
}

/// Source of a skip concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConcatSource {
    OriginalInput,
}

/// The input of layer `at_layer` is `[source | previous output]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkipConcat {
    pub at_layer: usize,
    pub source: ConcatSource,
}

impl SkipConcat {
    pub fn input_at(at_layer: usize) -> Self {
        Self {
            at_layer,
            source: ConcatSource::OriginalInput,
        }
    }
}

/// Named slice `[start, start + len)` of the final layer output with its own activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub name: String,
    pub start: usize,
    pub len: usize,
    pub activation: HeadActivation,
}

impl Head {
    pub fn new(
        name: &str,
        start: usize,
        len: usize,
        activation: impl Into<HeadActivation>,
    ) -> Self {
        Self {
            name: name.to_string(),
            start,
            len,
            activation: activation.into(),
        }
    }
}

/// Validated layer chain with skip concatenations and output heads.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    input_dim: usize,
    layers: Vec<Layer>,
    skips: Vec<SkipConcat>,
    heads: Vec<Head>,
}

/// Activated head outputs in declaration order.
#[derive(Debug, Clone)]
pub struct NetworkOutput {
    pub raw: Matrix,
    pub heads: Vec<(String, Matrix)>,
}

impl NetworkOutput {
    pub fn head(&self, name: &str) -> Option<&Matrix> {
        self.heads.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}

impl NetworkSpec {
    /// Checks the topology. Without heads, a single identity head `"output"` covers the final layer.
    pub fn new(
        input_dim: usize,
        layers: Vec<Layer>,
        skips: Vec<SkipConcat>,
        heads: Vec<Head>,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(invalid("network input dimension must be positive"));
        }
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        let mut seen = BTreeSet::new();
        for s in &skips {
            if s.at_layer >= layers.len() {
                return Err(invalid(format!(
                    "skip at layer {} but network has {} layers",
                    s.at_layer,
                    layers.len()
                )));
            }
            if !seen.insert(s.at_layer) {
                return Err(invalid(format!("duplicate skip at layer {}", s.at_layer)));
            }
        }
        let mut width = input_dim;
        for (k, layer) in layers.iter().enumerate() {
            let expected = width + if seen.contains(&k) { input_dim } else { 0 };
            if layer.in_dim() != expected {
                return Err(shape(
                    "NetworkSpec::new",
                    format!("layer {k} input dim {expected}"),
                    format!("{}", layer.in_dim()),
                ));
            }
            if let Layer::Fused(f) = layer {
                if let Some(c) = f.concat_weight() {
                    if c.cols() != input_dim {
                        return Err(shape(
                            "NetworkSpec::new",
                            format!("fused layer {k} concat width {input_dim}"),
                            format!("{}", c.cols()),
                        ));
                    }
                }
            }
            width = layer.out_dim();
        }
        let heads = if heads.is_empty() {
            vec![Head::new("output", 0, width, super::Activation::Identity)]
        } else {
            heads
        };
        let mut names = BTreeSet::new();
        for h in &heads {
            if h.len == 0 || h.start + h.len > width {
                return Err(invalid(format!(
                    "head '{}' [{}, {}) exceeds output width {width}",
                    h.name,
                    h.start,
                    h.start + h.len
                )));
            }
            if !names.insert(h.name.as_str()) {
                return Err(invalid(format!("duplicate head name '{}'", h.name)));
            }
        }
        let mut skips = skips;
        skips.sort_by_key(|s| s.at_layer);
        Ok(Self {
            input_dim,
            layers,
            skips,
            heads,
        })
    }

    /// Plain chain with no skips and a single identity head.
    pub fn sequential(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        Self::new(input_dim, layers, Vec::new(), Vec::new())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn skips(&self) -> &[SkipConcat] {
        &self.skips
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn has_skip(&self, layer: usize) -> bool {
        self.skips.iter().any(|s| s.at_layer == layer)
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn layer_input(&self, k: usize, prev: Matrix, original: &Matrix) -> Result<Matrix> {
        if self.has_skip(k) {
            original.hstack(&prev)
        } else {
            Ok(prev)
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(shape(
                "network_forward",
                format!("{} input columns", self.input_dim),
                format!("{}", x.cols()),
            ));
        }
        Ok(())
    }

    /// Output of the last layer before head activations.
    pub fn forward_raw(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let input = self.layer_input(k, h, x)?;
            h = layer.forward(&input, x)?;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Matrix) -> Result<NetworkOutput> {
        let raw = self.forward_raw(x)?;
        let heads = self
            .heads
            .iter()
            .map(|h| {
                Ok((
                    h.name.clone(),
                    h.activation.apply(&raw.slice_cols(h.start, h.len)?),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkOutput { raw, heads })
    }

    /// Input (after skip concatenation) and output of layer `index`.
    pub fn layer_io(&self, index: usize, x: &Matrix) -> Result<(Matrix, Matrix)> {
        if index >= self.layers.len() {
            return Err(invalid(format!(
                "layer index {index} out of range for {} layers",
                self.layers.len()
            )));
        }
        self.check_input(x)?;
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate().take(index + 1) {
            let input = self.layer_input(k, h, x)?;
            let out = layer.forward(&input, x)?;
            if k == index {
                return Ok((input, out));
            }
            h = out;
        }
        unreachable!("index checked above")
    }

    /// `(trainable, frozen)` parameter counts.
    pub fn param_count(&self) -> (usize, usize) {
        self.layers.iter().fold((0, 0), |(t, f), l| {
            let (lt, lf) = l.param_count();
            (t + lt, f + lf)
        })
    }

    /// Multiply-accumulate operations per input row, excluding element-wise activations.
    pub fn mac_count(&self) -> usize {
        self.layers.iter().map(Layer::mac_count).sum()
    }

    pub fn is_fused(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Fused(_)))
    }

    /// Swaps layer `index`, keeping skips and heads. Interface dims must match.
    pub fn replace_layer(&self, index: usize, layer: impl Into<Layer>) -> Result<NetworkSpec> {
        let layer = layer.into();
        let old = self.layers.get(index).ok_or_else(|| {
            invalid(format!(
                "layer index {index} out of range for {} layers",
                self.layers.len()
            ))
        })?;
        if old.in_dim() != layer.in_dim() || old.out_dim() != layer.out_dim() {
            return Err(shape(
                "replace_layer",
                format!("{} -> {}", old.in_dim(), old.out_dim()),
                format!("{} -> {}", layer.in_dim(), layer.out_dim()),
            ));
        }
        let mut layers = self.layers.clone();
        layers[index] = layer;
        NetworkSpec::new(
            self.input_dim,
            layers,
            self.skips.clone(),
            self.heads.clone(),
        )
    }

    /// Rebuilds with new layers and skips, keeping heads.
    pub(crate) fn with_layers(
        &self,
        layers: Vec<Layer>,
        skips: Vec<SkipConcat>,
    ) -> Result<NetworkSpec> {
        NetworkSpec::new(self.input_dim, layers, skips, self.heads.clone())
    }
}

/// Free-function form of [`NetworkSpec::forward`].
pub fn network_forward(net: &NetworkSpec, x: &Matrix) -> Result<NetworkOutput> {
    net.forward(x)
}
