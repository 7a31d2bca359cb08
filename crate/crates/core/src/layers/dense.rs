use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::Activation;
use crate::error::{invalid, shape, Result};
use crate::numerics::{Matrix, RngStream};

/// Affine map followed by an element-wise activation: `f(X·Wᵀ + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub(crate) weight: Matrix,
    pub(crate) bias: Vec<f64>,
    pub(crate) activation: Activation,
}

impl DenseLayer {
    /// Weights and bias uniform in `±1/√in`.
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: RngStream,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(invalid(format!(
                "dense layer dims must be positive, got {in_dim}->{out_dim}"
            )));
        }
        activation.validate()?;
        let bound = 1.0 / libm::sqrt(in_dim as f64);
        let mut r = rng.rng();
        let weight = Matrix::from_fn(out_dim, in_dim, |_, _| r.random_range(-bound..bound));
        let bias = (0..out_dim)
            .map(|_| r.random_range(-bound..bound))
            .collect();
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn from_parts(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(shape(
                "DenseLayer::from_parts",
                format!("bias of length {}", weight.rows()),
                format!("{}", bias.len()),
            ));
        }
        if weight.rows() == 0 || weight.cols() == 0 {
            return Err(invalid("dense layer weight must be non-empty"));
        }
        if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(invalid("dense layer parameters must be finite"));
        }
        activation.validate()?;
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `X·Wᵀ + b` without the activation.
    pub fn pre_activation(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(shape(
                "dense_forward",
                format!("{} input columns", self.in_dim()),
                format!("{}", x.cols()),
            ));
        }
        let mut z = x.matmul_t(&self.weight)?;
        z.add_row_broadcast(&self.bias)?;
        Ok(z)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = self.pre_activation(x)?;
        if !self.activation.is_identity() {
            let act = self.activation;
            z.map_inplace(|v| act.apply(v));
        }
        Ok(z)
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// Free-function form of [`DenseLayer::forward`].
pub fn dense_forward(layer: &DenseLayer, x: &Matrix) -> Result<Matrix> {
    layer.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer::from_parts(Matrix::identity(3), vec![0.0; 3], Activation::Identity)
            .unwrap();
        let x = Matrix::from_fn(4, 3, |i, j| i as f64 - j as f64 * 0.5);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn relu_kills_negative_preactivations() {
        let layer =
            DenseLayer::from_parts(Matrix::filled(2, 3, -1.0), vec![-0.5; 2], Activation::Relu)
                .unwrap();
        let x = Matrix::filled(5, 3, 0.3);
        assert_eq!(layer.forward(&x).unwrap(), Matrix::zeros(5, 2));
    }

    #[test]
    fn softplus_at_zero_preactivation() {
        let layer = DenseLayer::from_parts(
            Matrix::zeros(2, 2),
            vec![0.0; 2],
            Activation::Softplus { beta: 1.0 },
        )
        .unwrap();
        let y = layer.forward(&Matrix::filled(3, 2, 1.7)).unwrap();
        for v in y.as_slice() {
            assert!((v - core::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let layer = DenseLayer::new(3, 2, Activation::Relu, RngStream::from_seed(1)).unwrap();
        assert!(layer.forward(&Matrix::zeros(1, 4)).is_err());
        assert!(
            DenseLayer::from_parts(Matrix::zeros(2, 2), vec![0.0; 3], Activation::Relu).is_err()
        );
        assert!(DenseLayer::new(0, 2, Activation::Relu, RngStream::from_seed(1)).is_err());
    }
}
