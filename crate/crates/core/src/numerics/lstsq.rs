//! Least squares with optional ridge, via column-pivoted Householder QR.
//!
//! Full-rank problems are finished by back-substitution. Rank-deficient problems
//! (ridge = 0) use a complete orthogonal decomposition, which yields the
//! minimum-norm solution, i.e. the Moore-Penrose pseudoinverse applied to `B`.

// The factorisation loops index several arrays in lockstep.
#![allow(clippy::needless_range_loop)]

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Matrix;
use crate::error::{invalid, shape, Result};

/// Solution of a least-squares problem plus rank diagnostics.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: Matrix,
    /// Numerical rank of the design matrix (ridge ignored).
    pub rank: usize,
    pub rank_deficient: bool,
}

/// `argmin_X ‖A·X − B‖_F² + ridge·‖X‖_F²`; minimum-norm when `ridge == 0` and `A` is rank-deficient.
pub fn solve_least_squares(a: &Matrix, b: &Matrix, ridge: f64) -> Result<Matrix> {
    Ok(least_squares(a, b, ridge)?.solution)
}

pub fn least_squares(a: &Matrix, b: &Matrix, ridge: f64) -> Result<LeastSquares> {
    let (n, m) = a.shape();
    let l = b.cols();
    if n == 0 || m == 0 || l == 0 {
        return Err(invalid(format!(
            "least squares needs non-empty operands, got A {n}x{m}, B {}x{l}",
            b.rows()
        )));
    }
    if b.rows() != n {
        return Err(shape(
            "solve_least_squares",
            format!("B with {n} rows"),
            format!("{}", b.rows()),
        ));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(invalid(format!(
            "ridge must be finite and non-negative, got {ridge}"
        )));
    }

    let rows = n.max(m);
    let mut qr = Qr::factor(column_major(a, rows), rows, true);
    let mut rhs = column_major(b, rows);
    for col in rhs.iter_mut() {
        qr.apply_qt(col);
    }
    let rank = qr.rank();

    let y: Vec<Vec<f64>> = if ridge > 0.0 {
        // min ‖R·Y − c‖² + ridge·‖Y‖²  ==  least squares on [R; √ridge·I].
        let s = libm::sqrt(ridge);
        let aug: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                let mut col = vec![0.0; 2 * m];
                for i in 0..=j {
                    col[i] = qr.r(i, j);
                }
                col[m + j] = s;
                col
            })
            .collect();
        let mut aug_qr = Qr::factor(aug, 2 * m, false);
        rhs.iter()
            .map(|c| {
                let mut v = vec![0.0; 2 * m];
                v[..m].copy_from_slice(&c[..m]);
                aug_qr.apply_qt(&mut v);
                aug_qr.back_substitute(&v[..m], m)
            })
            .collect()
    } else if rank == m {
        rhs.iter().map(|c| qr.back_substitute(&c[..m], m)).collect()
    } else {
        min_norm_trapezoidal(&qr, &rhs, rank, m)
    };

    // Undo the column permutation: X[perm[k]] = Y[k].
    let mut solution = Matrix::zeros(m, l);
    for (j, col) in y.iter().enumerate() {
        for (k, &v) in col.iter().enumerate() {
            solution.set(qr.perm[k], j, v);
        }
    }
    if !solution.is_finite() {
        return Err(invalid("least squares produced non-finite values"));
    }
    Ok(LeastSquares {
        solution,
        rank,
        rank_deficient: rank < m,
    })
}

// Minimum-norm solution of R[0..r, :]·Y = c[0..r] via QR of the transposed trapezoid.
fn min_norm_trapezoidal(qr: &Qr, rhs: &[Vec<f64>], r: usize, m: usize) -> Vec<Vec<f64>> {
    if r == 0 {
        return vec![vec![0.0; m]; rhs.len()];
    }
    // Columns of R1ᵀ are the rows of R1.
    let trap_t: Vec<Vec<f64>> = (0..r)
        .map(|i| {
            (0..m)
                .map(|j| if j >= i { qr.r(i, j) } else { 0.0 })
                .collect()
        })
        .collect();
    let lq = Qr::factor(trap_t, m, false);
    rhs.iter()
        .map(|c| {
            // Tᵀ z = c_r, forward substitution with T upper-triangular.
            let mut z = vec![0.0; m];
            for i in 0..r {
                let mut s = c[i];
                for k in 0..i {
                    s -= lq.r(k, i) * z[k];
                }
                z[i] = s / lq.r(i, i);
            }
            lq.apply_q(&mut z);
            z
        })
        .collect()
}

fn column_major(a: &Matrix, rows: usize) -> Vec<Vec<f64>> {
    let (n, m) = a.shape();
    let mut cols = vec![vec![0.0; rows]; m];
    for i in 0..n {
        for (j, &v) in a.row(i).iter().enumerate() {
            cols[j][i] = v;
        }
    }
    cols
}

/// Householder QR stored column-major. `cols[k][k]` holds R_kk, `cols[k][k+1..]`
/// the tail of reflector k whose head is `vhead[k]`.
struct Qr {
    rows: usize,
    cols: Vec<Vec<f64>>,
    vhead: Vec<f64>,
    beta: Vec<f64>,
    perm: Vec<usize>,
    diag: Vec<f64>,
}

impl Qr {
    fn factor(mut cols: Vec<Vec<f64>>, rows: usize, pivot: bool) -> Self {
        let m = cols.len();
        let steps = m.min(rows);
        let mut perm: Vec<usize> = (0..m).collect();
        let mut vhead = vec![0.0; steps];
        let mut beta = vec![0.0; steps];
        let mut diag = vec![0.0; steps];
        let mut norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        let mut norms_ref = norms.clone();

        for k in 0..steps {
            if pivot {
                let p = (k..m).fold(k, |best, j| if norms[j] > norms[best] { j } else { best });
                if p != k {
                    cols.swap(k, p);
                    perm.swap(k, p);
                    norms.swap(k, p);
                    norms_ref.swap(k, p);
                }
            }
            let x = &cols[k][k..];
            let sigma = libm::sqrt(x.iter().map(|v| v * v).sum::<f64>());
            if sigma == 0.0 {
                beta[k] = 0.0;
                diag[k] = 0.0;
                continue;
            }
            let alpha = if x[0] > 0.0 { -sigma } else { sigma };
            let head = x[0] - alpha;
            let vnorm2 = head * head + (sigma * sigma - x[0] * x[0]).max(0.0);
            let bk = if vnorm2 > 0.0 { 2.0 / vnorm2 } else { 0.0 };
            vhead[k] = head;
            beta[k] = bk;
            diag[k] = alpha;
            let (left, right) = cols.split_at_mut(k + 1);
            let v = &left[k];
            for (jj, col) in right.iter_mut().enumerate() {
                let s = head * col[k] + dot(&v[k + 1..], &col[k + 1..]);
                let f = bk * s;
                col[k] -= f * head;
                axpy(-f, &v[k + 1..], &mut col[k + 1..]);
                if pivot {
                    let j = k + 1 + jj;
                    norms[j] -= col[k] * col[k];
                    if norms[j] <= 1e-8 * norms_ref[j] {
                        norms[j] = col[k + 1..].iter().map(|v| v * v).sum();
                        norms_ref[j] = norms[j];
                    }
                }
            }
            cols[k][k] = alpha;
        }
        Qr {
            rows,
            cols,
            vhead,
            beta,
            perm,
            diag,
        }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else {
            self.cols[j][i]
        }
    }

    fn rank(&self) -> usize {
        let top = self.diag.first().map_or(0.0, |d| d.abs());
        if top == 0.0 {
            return 0;
        }
        let tol = top * f64::EPSILON * self.rows.max(self.cols.len()) as f64;
        self.diag.iter().take_while(|d| d.abs() > tol).count()
    }

    fn reflect(&self, k: usize, x: &mut [f64]) {
        if self.beta[k] == 0.0 {
            return;
        }
        let v = &self.cols[k][k + 1..];
        let s = self.vhead[k] * x[k] + dot(v, &x[k + 1..]);
        let f = self.beta[k] * s;
        x[k] -= f * self.vhead[k];
        axpy(-f, v, &mut x[k + 1..]);
    }

    fn apply_qt(&mut self, x: &mut [f64]) {
        for k in 0..self.beta.len() {
            self.reflect(k, x);
        }
    }

    fn apply_q(&self, x: &mut [f64]) {
        for k in (0..self.beta.len()).rev() {
            self.reflect(k, x);
        }
    }

    fn back_substitute(&self, c: &[f64], m: usize) -> Vec<f64> {
        let mut y = vec![0.0; m];
        for i in (0..m).rev() {
            let mut s = c[i];
            for j in i + 1..m {
                s -= self.r(i, j) * y[j];
            }
            y[i] = s / self.diag[i];
        }
        y
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
