use alloc::format;

use crate::error::{invalid, Result};
use crate::numerics::Matrix;

/// Element-wise activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    /// `(1/β)·ln(1 + e^{βx})`
    Softplus {
        beta: f64,
    },
    Identity,
    Sigmoid,
}

impl Activation {
    pub fn softplus(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid(format!(
                "softplus beta must be positive, got {beta}"
            )));
        }
        Ok(Activation::Softplus { beta })
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Softplus { beta } => softplus(beta * x) / beta,
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus { beta } => sigmoid(beta * x),
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    pub fn apply_matrix(self, m: &Matrix) -> Matrix {
        if self == Activation::Identity {
            return m.clone();
        }
        m.map(|v| self.apply(v))
    }

    pub fn is_identity(self) -> bool {
        self == Activation::Identity
    }

    pub fn validate(self) -> Result<()> {
        if let Activation::Softplus { beta } = self {
            Activation::softplus(beta)?;
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        libm::exp(x)
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Activation applied to an output head. Softmax acts on the whole head slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadActivation {
    Elementwise(Activation),
    Softmax,
}

impl HeadActivation {
    pub fn apply(self, z: &Matrix) -> Matrix {
        match self {
            HeadActivation::Elementwise(a) => a.apply_matrix(z),
            HeadActivation::Softmax => {
                let mut out = z.clone();
                for i in 0..out.rows() {
                    let row = out.row_mut(i);
                    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    let mut sum = 0.0;
                    for v in row.iter_mut() {
                        *v = libm::exp(*v - max);
                        sum += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= sum;
                    }
                }
                out
            }
        }
    }

    /// Pulls `grad_out` (w.r.t. the activated head) back to the raw slice `z`.
    pub fn backward(self, z: &Matrix, activated: &Matrix, grad_out: &Matrix) -> Matrix {
        match self {
            HeadActivation::Elementwise(a) => {
                let mut g = grad_out.clone();
                for (gv, &zv) in g.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *gv *= a.derivative(zv);
                }
                g
            }
            HeadActivation::Softmax => {
                let mut g = grad_out.clone();
                for i in 0..g.rows() {
                    let s = activated.row(i);
                    let dot: f64 = s.iter().zip(grad_out.row(i)).map(|(a, b)| a * b).sum();
                    for (gv, sv) in g.row_mut(i).iter_mut().zip(s) {
                        *gv = sv * (*gv - dot);
                    }
                }
                g
            }
        }
    }
}

impl From<Activation> for HeadActivation {
    fn from(a: Activation) -> Self {
        HeadActivation::Elementwise(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_at_zero_is_ln2() {
        assert!(
            (Activation::Softplus { beta: 1.0 }.apply(0.0) - core::f64::consts::LN_2).abs() < 1e-15
        );
        assert!(Activation::softplus(0.0).is_err());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for act in [
            Activation::Softplus { beta: 2.5 },
            Activation::Sigmoid,
            Activation::Identity,
            Activation::Relu,
        ] {
            for x in [-1.3, -0.2, 0.4, 2.0] {
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-6, "{act:?} at {x}");
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let z = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[1000.0, 0.0, -5.0]]).unwrap();
        let s = HeadActivation::Softmax.apply(&z);
        for i in 0..2 {
            assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
