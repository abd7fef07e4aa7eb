//! Projected-score machinery on a grid of evaluation points: the moment
//! vector gamma(theta), its 4 x 2k derivative matrix, the 2k x 2k
//! covariance Sigma(theta) of the trigonometric moments, the projected
//! score S~(x; theta) and the approximate information I~(theta).

use num_complex::Complex64;
use thiserror::Error;

use crate::numkit::{spd_factor, Mat, SpdFactor};
use crate::stable_model::{chf, chf_gradient, StableParams};

#[derive(Debug, Error)]
pub enum ProjError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("SPD factorization of Sigma failed at pivot {pivot} even with ridge {max_ridge:e}")]
    FactorizationFailure { pivot: usize, max_ridge: f64 },
}

/// Ridge escalation ladder, as multiples of trace(Sigma)/(2k).
const RIDGE_LEVELS: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Ordered evaluation points (u_1, ..., u_k); all nonzero with pairwise
/// distinct absolute values so that the trigonometric basis stays
/// linearly independent.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    tau: Option<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self, ProjError> {
        if points.is_empty() {
            return Err(ProjError::InvalidGrid("empty grid".into()));
        }
        for (i, &u) in points.iter().enumerate() {
            if u == 0.0 || !u.is_finite() {
                return Err(ProjError::InvalidGrid(format!("u_{i} = {u} must be nonzero and finite")));
            }
            for &v in &points[..i] {
                if u.abs() == v.abs() {
                    return Err(ProjError::InvalidGrid(format!("|u_i| values must be distinct, found {u}")));
                }
            }
        }
        Ok(Grid { points, tau: None })
    }

    /// Equidistant grid u_i = start + i*step, i = 0..k, with tau = step.
    pub fn equidistant(start: f64, step: f64, k: usize) -> Result<Self, ProjError> {
        if step <= 0.0 || k == 0 {
            return Err(ProjError::InvalidGrid(format!("need step > 0 and k > 0, got step={step}, k={k}")));
        }
        let points: Vec<f64> = (0..k).map(|i| start + step * i as f64).collect();
        let mut g = Grid::new(points)?;
        g.tau = Some(step);
        Ok(g)
    }

    /// Default i.i.d. grid: 101 equidistant points 0.01, 0.06, ..., 5.01.
    pub fn paper_iid() -> Self {
        Grid::equidistant(0.01, 0.05, 101).unwrap()
    }

    /// Default OU grid: 101 equidistant points 0.05, 0.10, ..., 5.05.
    pub fn paper_ou() -> Self {
        Grid::equidistant(0.05, 0.05, 101).unwrap()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn k(&self) -> usize {
        self.points.len()
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    /// g(x) = (cos(u_1 x), ..., cos(u_k x), sin(u_1 x), ..., sin(u_k x)).
    pub fn g_of(&self, x: f64) -> Vec<f64> {
        let k = self.k();
        let mut g = vec![0.0; 2 * k];
        for (i, &u) in self.points.iter().enumerate() {
            let (s, c) = (u * x).sin_cos();
            g[i] = c;
            g[k + i] = s;
        }
        g
    }

    /// One-pass mean of g over a sample: 2k accumulators, O(n k).
    pub fn g_mean(&self, data: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut acc = vec![0.0; 2 * k];
        for &x in data {
            for (i, &u) in self.points.iter().enumerate() {
                let (s, c) = (u * x).sin_cos();
                acc[i] += c;
                acc[k + i] += s;
            }
        }
        let n = data.len() as f64;
        for v in acc.iter_mut() {
            *v /= n;
        }
        acc
    }
}

/// gamma for an arbitrary ch.f. evaluator (shared with the conditional
/// OU machinery).
pub fn gamma_from_chf<F>(grid: &Grid, chf_at: F) -> Vec<f64>
where
    F: Fn(f64) -> Complex64,
{
    let k = grid.k();
    let mut gamma = vec![0.0; 2 * k];
    for (i, &u) in grid.points().iter().enumerate() {
        let v = chf_at(u);
        gamma[i] = v.re;
        gamma[k + i] = v.im;
    }
    gamma
}

/// Covariance matrix of (cos(u_i X), sin(u_i X)) for any law given by its
/// ch.f., via the product-to-sum identities. Only one triangle is
/// computed; the result is symmetric by construction.
pub fn sigma_from_chf<F>(grid: &Grid, chf_at: F) -> Mat
where
    F: Fn(f64) -> Complex64,
{
    let k = grid.k();
    let u = grid.points();
    // cache phi at u_i, u_i + u_j and u_i - u_j
    let at: Vec<Complex64> = u.iter().map(|&ui| chf_at(ui)).collect();
    let mut sums = Mat::zeros(k, k);
    let mut sums_im = Mat::zeros(k, k);
    let mut diffs = Mat::zeros(k, k);
    let mut diffs_im = Mat::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let p = chf_at(u[i] + u[j]);
            let m = chf_at(u[i] - u[j]);
            sums[(i, j)] = p.re;
            sums_im[(i, j)] = p.im;
            diffs[(i, j)] = m.re;
            diffs_im[(i, j)] = m.im;
        }
    }
    let sum_re = |i: usize, j: usize| if i >= j { sums[(i, j)] } else { sums[(j, i)] };
    let sum_im = |i: usize, j: usize| if i >= j { sums_im[(i, j)] } else { sums_im[(j, i)] };
    // phi(-(u)) = conj(phi(u))
    let diff_re = |i: usize, j: usize| if i >= j { diffs[(i, j)] } else { diffs[(j, i)] };
    let diff_im = |i: usize, j: usize| if i >= j { diffs_im[(i, j)] } else { -diffs_im[(j, i)] };

    let mut sig = Mat::zeros(2 * k, 2 * k);
    for i in 0..k {
        for j in 0..k {
            // Cov(cos u_i X, cos u_j X)
            sig[(i, j)] = 0.5 * (sum_re(i, j) + diff_re(i, j)) - at[i].re * at[j].re;
            // Cov(sin u_i X, sin u_j X)
            sig[(k + i, k + j)] = 0.5 * (-sum_re(i, j) + diff_re(i, j)) - at[i].im * at[j].im;
            // Cov(cos u_i X, sin u_j X)
            sig[(i, k + j)] = 0.5 * (sum_im(i, j) - diff_im(i, j)) - at[i].re * at[j].im;
        }
    }
    // mirror the cos-sin block
    for i in 0..k {
        for j in 0..k {
            sig[(k + j, i)] = sig[(i, k + j)];
        }
    }
    // enforce exact symmetry of the diagonal blocks
    for i in 0..2 * k {
        for j in 0..i {
            let v = 0.5 * (sig[(i, j)] + sig[(j, i)]);
            sig[(i, j)] = v;
            sig[(j, i)] = v;
        }
    }
    sig
}

/// Factor a trigonometric covariance, escalating the ridge on failure.
pub fn factor_sigma(sigma: &Mat) -> Result<(SpdFactor, f64), ProjError> {
    let n = sigma.rows;
    let trace: f64 = (0..n).map(|i| sigma[(i, i)]).sum();
    let mut last_pivot = 0;
    for &r in &RIDGE_LEVELS {
        let ridge = r * trace / n as f64;
        let mut m = sigma.clone();
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        match spd_factor(&m) {
            Ok(f) => return Ok((f, ridge)),
            Err(crate::numkit::NumError::NotPositiveDefinite { pivot }) => last_pivot = pivot,
            Err(_) => unreachable!(),
        }
    }
    Err(ProjError::FactorizationFailure {
        pivot: last_pivot,
        max_ridge: RIDGE_LEVELS[RIDGE_LEVELS.len() - 1] * trace / n as f64,
    })
}

/// gamma(theta): real parts then imaginary parts of phi at the grid points.
pub fn gamma_vector(grid: &Grid, theta: &StableParams) -> Vec<f64> {
    gamma_from_chf(grid, |u| chf(u, theta))
}

/// 4 x 2k derivative matrix of gamma with respect to theta.
pub fn gamma_jacobian(grid: &Grid, theta: &StableParams) -> Mat {
    let k = grid.k();
    let mut jac = Mat::zeros(4, 2 * k);
    for (i, &u) in grid.points().iter().enumerate() {
        let g = chf_gradient(u, theta);
        for (r, d) in g.partials().iter().enumerate() {
            jac[(r, i)] = d.re;
            jac[(r, k + i)] = d.im;
        }
    }
    jac
}

/// Sigma(theta) for the stable law on a grid.
pub fn sigma_matrix(grid: &Grid, theta: &StableParams) -> Mat {
    sigma_from_chf(grid, |u| chf(u, theta))
}

/// gamma, gamma_theta, Sigma and a cached SPD factorization for one
/// (theta, grid) pair. Immutable after construction.
#[derive(Debug, Clone)]
pub struct TrigMoments {
    pub gamma: Vec<f64>,
    pub gamma_theta: Mat,
    pub sigma: Mat,
    pub factor: SpdFactor,
    pub ridge_used: f64,
}

impl TrigMoments {
    pub fn new(grid: &Grid, theta: &StableParams) -> Result<Self, ProjError> {
        let gamma = gamma_vector(grid, theta);
        let gamma_theta = gamma_jacobian(grid, theta);
        let sigma = sigma_matrix(grid, theta);
        let (factor, ridge_used) = factor_sigma(&sigma)?;
        Ok(TrigMoments { gamma, gamma_theta, sigma, factor, ridge_used })
    }

    /// S~ for an already-centered moment vector: gamma_theta Sigma^{-1} r.
    pub fn score_of_residual(&self, residual: &[f64]) -> [f64; 4] {
        let mut z = residual.to_vec();
        self.factor.solve_in_place(&mut z);
        let mut s = [0.0; 4];
        for r in 0..4 {
            s[r] = self.gamma_theta.row(r).iter().zip(&z).map(|(a, b)| a * b).sum();
        }
        s
    }
}

/// Trigonometric score S~(x; theta) of a single observation.
pub fn trig_score(x: f64, tm: &TrigMoments, grid: &Grid) -> [f64; 4] {
    let g = grid.g_of(x);
    let residual: Vec<f64> = g.iter().zip(&tm.gamma).map(|(a, b)| a - b).collect();
    tm.score_of_residual(&residual)
}

/// Empirical score S~_n(theta): mean of g first, one solve after.
pub fn empirical_score(data: &[f64], tm: &TrigMoments, grid: &Grid) -> [f64; 4] {
    assert!(!data.is_empty());
    let gbar = grid.g_mean(data);
    score_from_gmean(&gbar, tm)
}

/// Empirical score from a precomputed mean of g.
pub fn score_from_gmean(gbar: &[f64], tm: &TrigMoments) -> [f64; 4] {
    let residual: Vec<f64> = gbar.iter().zip(&tm.gamma).map(|(a, b)| a - b).collect();
    tm.score_of_residual(&residual)
}

/// Approximate information I~(theta) = gamma_theta Sigma^{-1} gamma_theta^T.
pub fn info_matrix(tm: &TrigMoments) -> [[f64; 4]; 4] {
    let solved = tm.factor.solve_rows(&tm.gamma_theta).expect("dimension fixed by construction");
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let v: f64 = tm.gamma_theta.row(i).iter().zip(solved.row(j)).map(|(a, b)| a * b).sum();
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}
