//! Reference architectures for coordinate networks on a 60-dimensional encoding.

use alloc::vec;
use alloc::vec::Vec;

use super::{
    Activation, DenseLayer, Head, HeadActivation, Layer, MagLayer, NetworkSpec, SkipConcat,
};
use crate::error::Result;
use crate::numerics::{EnsembleKind, RngStream};

/// Width of the positional encoding fed to the preset networks.
pub const ENCODED_DIM: usize = 60;
/// Hidden width of the preset networks.
pub const HIDDEN: usize = 256;

/// Activation used for the three colour channels of the radiance presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorActivation {
    #[default]
    Sigmoid,
    Softmax,
}

impl ColorActivation {
    fn head(self) -> HeadActivation {
        match self {
            ColorActivation::Sigmoid => HeadActivation::Elementwise(Activation::Sigmoid),
            ColorActivation::Softmax => HeadActivation::Softmax,
        }
    }
}

fn dense(i: usize, o: usize, act: Activation, rng: RngStream, k: u64) -> Result<Layer> {
    Ok(DenseLayer::new(i, o, act, rng.substream(k))?.into())
}

fn mag(
    d: usize,
    m: usize,
    l: usize,
    ensemble: EnsembleKind,
    rng: RngStream,
    k: u64,
) -> Result<Layer> {
    Ok(MagLayer::new(d, m, l, ensemble, Activation::Relu, false, rng.substream(k))?.into())
}

fn radiance_heads(color: ColorActivation) -> Vec<Head> {
    vec![
        Head::new("density", 0, 1, Activation::Relu),
        Head::new("rgb", 1, 3, color.head()),
    ]
}

/// Radiance-field MLP: eight ReLU layers of width 256 with the encoding
/// re-injected before the sixth, an identity feature layer, a 128-wide ReLU
/// layer, and a 4-wide output split into density and colour heads.
pub fn radiance_baseline(color: ColorActivation, rng: RngStream) -> Result<NetworkSpec> {
    let mut layers = Vec::new();
    layers.push(dense(ENCODED_DIM, HIDDEN, Activation::Relu, rng, 0)?);
    for k in 1..8 {
        let input = if k == 5 { ENCODED_DIM + HIDDEN } else { HIDDEN };
        layers.push(dense(input, HIDDEN, Activation::Relu, rng, k)?);
    }
    layers.push(dense(HIDDEN, HIDDEN, Activation::Identity, rng, 8)?);
    layers.push(dense(HIDDEN, 128, Activation::Relu, rng, 9)?);
    layers.push(dense(128, 4, Activation::Identity, rng, 10)?);
    NetworkSpec::new(
        ENCODED_DIM,
        layers,
        vec![SkipConcat::input_at(5)],
        radiance_heads(color),
    )
}

/// Radiance-field MLP in which ReLU layers are replaced by MAG layers with
/// `m` random features, each followed by an affine layer it can be fused into.
pub fn radiance_mag(
    m: usize,
    ensemble: EnsembleKind,
    color: ColorActivation,
    rng: RngStream,
) -> Result<NetworkSpec> {
    let layers = vec![
        dense(ENCODED_DIM, HIDDEN, Activation::Relu, rng, 0)?,
        mag(HIDDEN, m, HIDDEN, ensemble, rng, 1)?,
        dense(HIDDEN, HIDDEN, Activation::Identity, rng, 2)?,
        dense(ENCODED_DIM + HIDDEN, HIDDEN, Activation::Relu, rng, 3)?,
        mag(HIDDEN, m, HIDDEN, ensemble, rng, 4)?,
        dense(HIDDEN, HIDDEN, Activation::Identity, rng, 5)?,
        mag(HIDDEN, m, 128, ensemble, rng, 6)?,
        dense(128, 4, Activation::Identity, rng, 7)?,
    ];
    NetworkSpec::new(
        ENCODED_DIM,
        layers,
        vec![SkipConcat::input_at(3)],
        radiance_heads(color),
    )
}

/// Index of the last hidden layer of the signed-distance presets.
pub const SDF_LAST_HIDDEN: usize = 5;

fn sdf_network(last: Layer, last_width: usize, rng: RngStream) -> Result<NetworkSpec> {
    let layers = vec![
        dense(ENCODED_DIM, HIDDEN, Activation::Relu, rng, 0)?,
        dense(HIDDEN, HIDDEN, Activation::Relu, rng, 1)?,
        dense(HIDDEN, HIDDEN, Activation::Relu, rng, 2)?,
        dense(ENCODED_DIM + HIDDEN, HIDDEN, Activation::Relu, rng, 3)?,
        dense(HIDDEN, HIDDEN, Activation::Relu, rng, 4)?,
        last,
        dense(last_width, 1, Activation::Identity, rng, 6)?,
    ];
    NetworkSpec::new(
        ENCODED_DIM,
        layers,
        vec![SkipConcat::input_at(3)],
        vec![Head::new("sdf", 0, 1, Activation::Identity)],
    )
}

/// Signed-distance MLP: six ReLU layers of width 256, the encoding
/// re-injected before the fourth, and a scalar output.
pub fn sdf_baseline(rng: RngStream) -> Result<NetworkSpec> {
    sdf_network(
        dense(HIDDEN, HIDDEN, Activation::Relu, rng, 5)?,
        HIDDEN,
        rng,
    )
}

/// Signed-distance MLP whose last hidden layer is a MAG layer with `m` features.
pub fn sdf_mag(m: usize, ensemble: EnsembleKind, rng: RngStream) -> Result<NetworkSpec> {
    sdf_network(mag(HIDDEN, m, HIDDEN, ensemble, rng, 5)?, HIDDEN, rng)
}

/// Signed-distance MLP with the last hidden layer narrowed to `width`.
pub fn sdf_reduced(width: usize, rng: RngStream) -> Result<NetworkSpec> {
    sdf_network(dense(HIDDEN, width, Activation::Relu, rng, 5)?, width, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::fuse_network_with_count;
    use crate::numerics::{sample_gaussian_matrix, Matrix};

    #[test]
    fn radiance_heads_have_expected_shapes() {
        let net = radiance_baseline(ColorActivation::Sigmoid, RngStream::from_seed(1)).unwrap();
        let x = sample_gaussian_matrix(7, ENCODED_DIM, RngStream::from_seed(2)).unwrap();
        let out = net.forward(&x).unwrap();
        assert_eq!(out.head("density").unwrap().shape(), (7, 1));
        assert_eq!(out.head("rgb").unwrap().shape(), (7, 3));
        assert_eq!(net.layers()[5].in_dim(), ENCODED_DIM + HIDDEN);
    }

    #[test]
    fn mag_variant_shrinks_trainable_parameters() {
        let base = radiance_baseline(ColorActivation::Sigmoid, RngStream::from_seed(1)).unwrap();
        let mag = radiance_mag(
            256,
            EnsembleKind::BlockOrthogonal,
            ColorActivation::Sigmoid,
            RngStream::from_seed(1),
        )
        .unwrap();
        assert_eq!(base.param_count().0, 590_724);
        assert_eq!(mag.param_count().0, 392_708);
        let ratio = mag.param_count().0 as f64 / base.param_count().0 as f64;
        assert!((0.65..=0.75).contains(&ratio));
    }

    #[test]
    fn mag_variant_fuses_three_sites_exactly() {
        let mag = radiance_mag(
            256,
            EnsembleKind::BlockOrthogonal,
            ColorActivation::Softmax,
            RngStream::from_seed(3),
        )
        .unwrap();
        let (fused, sites) = fuse_network_with_count(&mag).unwrap();
        assert_eq!(sites, 3);
        assert!(fused.mac_count() < mag.mac_count());
        let x = sample_gaussian_matrix(20, ENCODED_DIM, RngStream::from_seed(4)).unwrap();
        let a = mag.forward_raw(&x).unwrap();
        let b = fused.forward_raw(&x).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
    }

    #[test]
    fn sdf_variants_share_interface() {
        let x = Matrix::zeros(2, ENCODED_DIM);
        for net in [
            sdf_baseline(RngStream::from_seed(0)).unwrap(),
            sdf_mag(32, EnsembleKind::IidGaussian, RngStream::from_seed(0)).unwrap(),
            sdf_reduced(32, RngStream::from_seed(0)).unwrap(),
        ] {
            assert_eq!(net.forward_raw(&x).unwrap().shape(), (2, 1));
        }
        let dr = sdf_reduced(32, RngStream::from_seed(0)).unwrap();
        assert_eq!(dr.layers()[SDF_LAST_HIDDEN].out_dim(), 32);
    }
}
