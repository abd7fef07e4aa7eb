//! Dense numerical kernels shared across the crate: symmetric storage,
//! Cholesky factorization and solves, small symmetric inverses and
//! eigenvalues, and a central finite-difference Jacobian used as a test
//! oracle. Problem sizes stay small (2k <= ~400), so everything is dense.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// self * v for a vector v of length `cols`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    pub lower: Mat,
    pub dim: usize,
}

/// Cholesky factorization of a symmetric matrix. Fails with the index of
/// the first non-positive pivot when the input is not positive definite.
pub fn spd_factor(m: &Mat) -> Result<SpdFactor, NumError> {
    assert_eq!(m.rows, m.cols, "spd_factor requires a square matrix");
    let n = m.rows;
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(NumError::NotPositiveDefinite { pivot: i });
                }
                l[(i, j)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(SpdFactor { lower: l, dim: n })
}

impl SpdFactor {
    /// Solve (L L^T) x = rhs by forward and back substitution.
    pub fn solve_vec(&self, rhs: &[f64]) -> Result<Vec<f64>, NumError> {
        if rhs.len() != self.dim {
            return Err(NumError::DimensionMismatch { expected: self.dim, got: rhs.len() });
        }
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        Ok(x)
    }

    /// In-place variant of `solve_vec`; the slice length must equal `dim`.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim;
        debug_assert_eq!(x.len(), n);
        let l = &self.lower;
        for i in 0..n {
            let row = l.row(i);
            let mut s = x[i];
            for k in 0..i {
                s -= row[k] * x[k];
            }
            x[i] = s / row[i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
    }

    /// Solve against each row of `rhs`, returning a matrix of the same shape.
    pub fn solve_rows(&self, rhs: &Mat) -> Result<Mat, NumError> {
        if rhs.cols != self.dim {
            return Err(NumError::DimensionMismatch { expected: self.dim, got: rhs.cols });
        }
        let mut out = rhs.clone();
        for i in 0..out.rows {
            self.solve_in_place(out.row_mut(i));
        }
        Ok(out)
    }

    /// Reconstruct L L^T.
    pub fn reconstruct(&self) -> Mat {
        let n = self.dim;
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..=i.min(j) {
                    s += self.lower[(i, k)] * self.lower[(j, k)];
                }
                m[(i, j)] = s;
            }
        }
        m
    }
}

/// Inverse of a symmetric positive definite 4x4 matrix via Cholesky.
pub fn sym4_inverse(m: &[[f64; 4]; 4]) -> Result<[[f64; 4]; 4], NumError> {
    let mat = Mat::from_rows(&m.iter().map(|r| r.to_vec()).collect::<Vec<_>>());
    let f = spd_factor(&mat)?;
    let mut inv = [[0.0; 4]; 4];
    for j in 0..4 {
        let mut e = [0.0; 4];
        e[j] = 1.0;
        f.solve_in_place(&mut e);
        for i in 0..4 {
            inv[i][j] = e[i];
        }
    }
    // symmetrize to kill round-off asymmetry
    for i in 0..4 {
        for j in 0..i {
            let v = 0.5 * (inv[i][j] + inv[j][i]);
            inv[i][j] = v;
            inv[j][i] = v;
        }
    }
    Ok(inv)
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations,
/// returned in ascending order.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    assert_eq!(m.rows, m.cols);
    let n = m.rows;
    let mut a = m.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + a.data.iter().map(|x| x.abs()).fold(0.0, f64::max)) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Central finite-difference Jacobian of a vector-valued function.
///
/// Row i holds the partial derivatives of every output component with
/// respect to parameter i, matching the layout of the analytic
/// derivative matrices in this crate.
pub fn finite_diff_jacobian<F>(f: F, theta: &[f64], step: f64) -> Mat
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let p = theta.len();
    let base = f(theta);
    let m = base.len();
    let mut jac = Mat::zeros(p, m);
    let mut x = theta.to_vec();
    for i in 0..p {
        x[i] = theta[i] + step;
        let up = f(&x);
        x[i] = theta[i] - step;
        let dn = f(&x);
        x[i] = theta[i];
        for j in 0..m {
            jac[(i, j)] = (up[j] - dn[j]) / (2.0 * step);
        }
    }
    jac
}
