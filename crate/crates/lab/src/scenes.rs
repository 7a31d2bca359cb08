//! Procedural targets: a checkerboard-plus-gradient image and a 2-D signed
//! distance field of a circle united with a box.

use magnituder::Matrix;

use crate::encoding::grid_coords;

/// Side of the square checker cells, in pixels.
const CHECKER: usize = 8;

/// `side × side` RGB image with values in `[0.1, 0.9]`, row-major, one pixel per row.
pub fn procedural_image(side: usize) -> Matrix {
    Matrix::from_fn(side * side, 3, |i, c| {
        let (row, col) = (i / side, i % side);
        let checker = ((row / CHECKER + col / CHECKER) % 2) as f64;
        let u = col as f64 / (side - 1).max(1) as f64;
        let v = row as f64 / (side - 1).max(1) as f64;
        let value = match c {
            0 => 0.5 * checker + 0.5 * u,
            1 => 0.5 * (1.0 - checker) + 0.5 * v,
            _ => 0.25 + 0.25 * checker + 0.5 * (1.0 - u) * v,
        };
        0.1 + 0.8 * value
    })
}

/// Circle ∪ box in `[-1, 1]²`. The shapes are disjoint, so the minimum of
/// their signed distances is the exact signed distance of the union.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeShape {
    pub circle_center: [f64; 2],
    pub radius: f64,
    pub box_center: [f64; 2],
    pub half_extents: [f64; 2],
}

impl Default for CompositeShape {
    fn default() -> Self {
        Self {
            circle_center: [-0.4, -0.1],
            radius: 0.35,
            box_center: [0.4, 0.15],
            half_extents: [0.3, 0.2],
        }
    }
}

impl CompositeShape {
    pub fn circle_distance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.circle_center[0]).hypot(p[1] - self.circle_center[1]) - self.radius
    }

    pub fn box_distance(&self, p: [f64; 2]) -> f64 {
        let qx = (p[0] - self.box_center[0]).abs() - self.half_extents[0];
        let qy = (p[1] - self.box_center[1]).abs() - self.half_extents[1];
        qx.max(0.0).hypot(qy.max(0.0)) + qx.max(qy).min(0.0)
    }

    pub fn distance(&self, p: [f64; 2]) -> f64 {
        self.circle_distance(p).min(self.box_distance(p))
    }

    /// Signed distance at every row of `coords` (n×2), as an n×1 matrix.
    pub fn distances(&self, coords: &Matrix) -> Matrix {
        Matrix::from_fn(coords.rows(), 1, |i, _| {
            self.distance([coords.get(i, 0), coords.get(i, 1)])
        })
    }

    /// Signed distance sampled on the `side × side` grid over `[-1, 1]²`.
    pub fn grid(&self, side: usize) -> Matrix {
        self.distances(&grid_coords(side))
    }

    /// `count` points spread along the zero level set, split between the two
    /// outlines in proportion to their perimeters.
    pub fn surface_points(&self, count: usize) -> Matrix {
        let circle_len = 2.0 * std::f64::consts::PI * self.radius;
        let [hx, hy] = self.half_extents;
        let box_len = 4.0 * (hx + hy);
        let on_circle = ((count as f64) * circle_len / (circle_len + box_len)).round() as usize;
        let mut data = Vec::with_capacity(count * 2);
        for k in 0..on_circle {
            let t = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / on_circle as f64;
            data.push(self.circle_center[0] + self.radius * t.cos());
            data.push(self.circle_center[1] + self.radius * t.sin());
        }
        let on_box = count - on_circle;
        for k in 0..on_box {
            // Arc length along the outline: bottom, right, top, left edges.
            let s = box_len * (k as f64 + 0.5) / on_box as f64;
            let (bottom, right, top) = (2.0 * hx, 2.0 * hx + 2.0 * hy, 4.0 * hx + 2.0 * hy);
            let (x, y) = if s < bottom {
                (-hx + s, -hy)
            } else if s < right {
                (hx, -hy + (s - bottom))
            } else if s < top {
                (hx - (s - right), hy)
            } else {
                (-hx, hy - (s - top))
            };
            data.push(self.box_center[0] + x);
            data.push(self.box_center[1] + y);
        }
        Matrix::from_vec(count, 2, data).expect("surface sample has count rows")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_range_and_checker() {
        let img = procedural_image(64);
        assert_eq!(img.shape(), (4096, 3));
        assert!(img.as_slice().iter().all(|&v| (0.1..=0.9).contains(&v)));
        // Top-left red channel: checker 0, u 0.
        assert!((img.get(0, 0) - 0.1).abs() < 1e-15);
        // Pixel (0, 8) sits in the next checker cell.
        assert!(img.get(8, 0) > img.get(7, 0) + 0.3);
    }

    #[test]
    fn known_distances() {
        let s = CompositeShape::default();
        assert!((s.distance(s.circle_center) + s.radius).abs() < 1e-15);
        assert!((s.distance(s.box_center) + 0.2).abs() < 1e-15);
        let corner = [s.box_center[0] + 0.3 + 0.03, s.box_center[1] + 0.2 + 0.04];
        assert!((s.distance(corner) - 0.05).abs() < 1e-12);
        assert!(s.circle_distance(s.box_center) > 0.0 && s.box_distance(s.circle_center) > 0.0);
    }

    #[test]
    fn surface_points_lie_on_zero_level() {
        let s = CompositeShape::default();
        let pts = s.surface_points(300);
        assert_eq!(pts.rows(), 300);
        let d = s.distances(&pts);
        assert!(
            d.max_abs() < 1e-12,
            "max level-set distance {}",
            d.max_abs()
        );
    }
}
