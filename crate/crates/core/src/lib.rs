//! Magnituder (MAG) random-feature layers.
//!
//! A MAG layer computes `W·f(G·x) (+ b)` where `G` (m×d) is a frozen random
//! matrix — iid Gaussian or block-orthogonal — and only `W` (and `b`) train.
//! Because `G` is frozen, a MAG layer followed by an affine layer can be
//! *bundled* into a single matrix `Ŵ = W₂·W₁`, and a trained dense layer can
//! be replaced by a MAG layer in closed form by least squares.
//!
//! - [`numerics`]: dense matrices, seeded random streams, random ensembles, least squares.
//! - [`layers`]: dense and MAG layers, networks with skip-concats and named heads, training.
//! - [`kernels`]: MAG and SNNK kernel estimators, closed forms, variance studies, SNNK layers.
//! - [`fusion`]: bundling MAG layers into their successors.
//! - [`distill`]: capturing layer activations and closed-form distillation.
//!
//! The crate is `no_std` + `alloc` when the default `std` feature is disabled.

#![cfg_attr(not(feature = "std"), no_std)]
extern crate alloc;

pub mod distill;
pub mod error;
pub mod fusion;
pub mod kernels;
pub mod layers;
pub mod numerics;

pub use error::{Error, Result};
pub use layers::{Activation, DenseLayer, Layer, MagLayer, NetworkSpec};
pub use numerics::{EnsembleKind, Matrix, RngStream};
