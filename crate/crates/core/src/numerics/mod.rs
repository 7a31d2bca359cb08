//! Matrices, reproducible random streams, random ensembles and least squares.

mod lstsq;
mod matrix;
mod random;
mod rng;

pub use lstsq::{least_squares, solve_least_squares, LeastSquares};
pub(crate) use matrix::gemm;
pub use matrix::Matrix;
pub use random::{sample_gaussian_matrix, sample_orthogonal_matrix, EnsembleKind};
pub use rng::RngStream;
