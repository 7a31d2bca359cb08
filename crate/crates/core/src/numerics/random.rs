use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Matrix, RngStream};
use crate::error::{invalid, Result};

/// Distribution of the rows of a random projection matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnsembleKind {
    /// Rows drawn iid from N(0, I).
    IidGaussian,
    /// Rows exactly orthogonal within blocks of `d`, Gaussian marginals.
    BlockOrthogonal,
}

impl EnsembleKind {
    pub fn sample(self, rows: usize, cols: usize, rng: RngStream) -> Result<Matrix> {
        match self {
            EnsembleKind::IidGaussian => sample_gaussian_matrix(rows, cols, rng),
            EnsembleKind::BlockOrthogonal => sample_orthogonal_matrix(rows, cols, rng),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnsembleKind::IidGaussian => "iid",
            EnsembleKind::BlockOrthogonal => "orthogonal",
        }
    }
}

impl core::str::FromStr for EnsembleKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iid" | "iid_gaussian" | "gaussian" => Ok(Self::IidGaussian),
            "orthogonal" | "ort" | "orf" | "block_orthogonal" => Ok(Self::BlockOrthogonal),
            other => Err(invalid(format!("unknown ensemble '{other}'"))),
        }
    }
}

fn check_dims(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(invalid(format!(
            "random matrix dimensions must be positive, got {rows}x{cols}"
        )));
    }
    Ok(())
}

/// `rows × cols` matrix of iid standard normal entries.
pub fn sample_gaussian_matrix(rows: usize, cols: usize, rng: RngStream) -> Result<Matrix> {
    check_dims(rows, cols)?;
    let mut r = rng.rng();
    let data: Vec<f64> = (0..rows * cols).map(|_| r.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Block-orthogonal random matrix with Gaussian row marginals.
///
/// Rows come in independent blocks of `d`. Within a block a Gaussian block is
/// orthonormalised (Gram-Schmidt, equivalent to a sign-fixed QR) and each row is
/// rescaled to the length of the Gaussian row it came from. Gram-Schmidt sees
/// only row directions, which are independent of the chi(d) row lengths, so
/// every row keeps the N(0, I_d) marginal. The first row of each block equals
/// the corresponding row of [`sample_gaussian_matrix`] on the same stream.
pub fn sample_orthogonal_matrix(m: usize, d: usize, rng: RngStream) -> Result<Matrix> {
    check_dims(m, d)?;
    let mut r = rng.rng();
    let mut out = Matrix::zeros(m, d);
    let mut start = 0;
    while start < m {
        let block = (m - start).min(d);
        let mut rows: Vec<Vec<f64>> = (0..block)
            .map(|_| (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let lengths: Vec<f64> = rows
            .iter()
            .map(|row| libm::sqrt(row.iter().map(|x| x * x).sum::<f64>()))
            .collect();
        orthonormalize_rows(&mut rows);
        for (k, (row, len)) in rows.iter().zip(lengths).enumerate() {
            for (o, v) in out.row_mut(start + k).iter_mut().zip(row) {
                *o = v * len;
            }
        }
        start += block;
    }
    Ok(out)
}

// Modified Gram-Schmidt with one re-orthogonalisation pass.
fn orthonormalize_rows(rows: &mut [Vec<f64>]) {
    for i in 0..rows.len() {
        for _pass in 0..2 {
            for j in 0..i {
                let (done, rest) = rows.split_at_mut(i);
                let q = &done[j];
                let v = &mut rest[0];
                let dot: f64 = q.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                for (x, qv) in v.iter_mut().zip(q) {
                    *x -= dot * qv;
                }
            }
        }
        let norm = libm::sqrt(rows[i].iter().map(|x| x * x).sum::<f64>());
        for x in rows[i].iter_mut() {
            *x /= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_blocks_start_from_the_gaussian_draw() {
        let rng = RngStream::new(12, 3);
        let g = sample_gaussian_matrix(10, 6, rng).unwrap();
        let q = sample_orthogonal_matrix(10, 6, rng).unwrap();
        for (a, b) in g.row(0).iter().zip(q.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
        for i in 0..6 {
            let gn: f64 = g.row(i).iter().map(|x| x * x).sum();
            let qn: f64 = q.row(i).iter().map(|x| x * x).sum();
            assert!((gn - qn).abs() < 1e-10 * gn);
        }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn gaussian_is_deterministic_per_stream() {
        let s = RngStream::new(11, 0);
        assert_eq!(
            sample_gaussian_matrix(1, 1, s).unwrap(),
            sample_gaussian_matrix(1, 1, s).unwrap()
        );
        assert_ne!(
            sample_gaussian_matrix(4, 4, RngStream::new(1, 0)).unwrap(),
            sample_gaussian_matrix(4, 4, RngStream::new(2, 0)).unwrap()
        );
    }

    #[test]
    fn gaussian_moments() {
        let g = sample_gaussian_matrix(1000, 1, RngStream::new(5, 0)).unwrap();
        let n = 1000.0;
        let mean = g.as_slice().iter().sum::<f64>() / n;
        let var = g.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn zero_dimensions_rejected() {
        assert!(sample_gaussian_matrix(0, 3, RngStream::from_seed(0)).is_err());
        assert!(sample_orthogonal_matrix(3, 0, RngStream::from_seed(0)).is_err());
    }

    #[test]
    fn square_orf_rows_are_orthogonal() {
        let g = sample_orthogonal_matrix(4, 4, RngStream::new(3, 1)).unwrap();
        for i in 0..4 {
            for j in 0..i {
                assert!(dot(g.row(i), g.row(j)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn orf_blocks_are_independent() {
        let g = sample_orthogonal_matrix(8, 4, RngStream::new(3, 2)).unwrap();
        let mut cross = 0.0f64;
        for i in 0..8 {
            for j in 0..i {
                let same_block = i / 4 == j / 4;
                let d = dot(g.row(i), g.row(j)).abs();
                if same_block {
                    assert!(d <= 1e-10);
                } else {
                    cross = cross.max(d);
                }
            }
        }
        assert!(cross > 1e-3);
    }

    #[test]
    fn orf_squared_norms_average_to_dimension() {
        let root = RngStream::new(99, 0);
        let mut total = 0.0;
        let mut count = 0.0;
        for t in 0..1000 {
            let g = sample_orthogonal_matrix(16, 16, root.substream(t)).unwrap();
            for i in 0..16 {
                total += dot(g.row(i), g.row(i));
                count += 1.0;
            }
        }
        let avg = total / count;
        assert!((avg - 16.0).abs() < 0.05 * 16.0, "avg {avg}");
    }
}
