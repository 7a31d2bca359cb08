//! Sinusoidal positional encoding of 2-D coordinates.

use magnituder::Matrix;

/// Frequencies `2^k · π` for `k = 0..FREQUENCIES`.
pub const FREQUENCIES: usize = 15;
/// Width of the encoding: sine and cosine per axis per frequency.
pub const ENCODED_DIM: usize = FREQUENCIES * 4;

/// Maps each `(x, y)` row to `[sin(2^k π x), cos(2^k π x), sin(2^k π y), cos(2^k π y)]`
/// for `k = 0..15`.
pub fn positional_encoding(coords: &Matrix) -> Matrix {
    assert_eq!(
        coords.cols(),
        2,
        "positional encoding expects 2-D coordinates"
    );
    Matrix::from_fn(coords.rows(), ENCODED_DIM, |i, j| {
        let k = j / 4;
        let axis = (j % 4) / 2;
        let phase = (1u32 << k) as f64 * std::f64::consts::PI * coords.get(i, axis);
        if j % 2 == 0 {
            phase.sin()
        } else {
            phase.cos()
        }
    })
}

/// Row-major `side × side` grid of points `(x, y)` with both axes evenly spaced over `[-1, 1]`.
///
/// The spacing `2/(side-1)` is not a dyadic fraction, so high encoding
/// frequencies do not collapse onto a few values.
pub fn grid_coords(side: usize) -> Matrix {
    assert!(side >= 2, "grid needs at least two points per axis");
    let step = 2.0 / (side - 1) as f64;
    Matrix::from_fn(side * side, 2, |i, j| {
        let (row, col) = (i / side, i % side);
        -1.0 + step * if j == 0 { col } else { row } as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_layout() {
        let c = Matrix::from_rows(&[&[0.25, -0.5]]).unwrap();
        let e = positional_encoding(&c);
        assert_eq!(e.shape(), (1, 60));
        let pi = std::f64::consts::PI;
        assert!((e.get(0, 0) - (pi * 0.25).sin()).abs() < 1e-15);
        assert!((e.get(0, 1) - (pi * 0.25).cos()).abs() < 1e-15);
        assert!((e.get(0, 2) - (-pi * 0.5).sin()).abs() < 1e-15);
        assert!((e.get(0, 7) - (-2.0 * pi * 0.5).cos()).abs() < 1e-15);
        assert!((e.get(0, 56) - (16384.0 * pi * 0.25).sin()).abs() < 1e-9);
    }

    #[test]
    fn grid_corners() {
        let g = grid_coords(4);
        assert_eq!(g.shape(), (16, 2));
        assert_eq!(g.row(0), &[-1.0, -1.0]);
        assert_eq!(g.row(3), &[1.0, -1.0]);
        assert_eq!(g.row(15), &[1.0, 1.0]);
    }
}
