//! Fitting theta = (mu, sigma, alpha, beta) from i.i.d. samples: a
//! ch.f.-based preliminary estimator, Fisher-scoring TML iteration with
//! step backtracking, and the explicit GMM cross-check that freezes the
//! weight matrix at a preliminary point.

use num_complex::Complex64;
use thiserror::Error;

use crate::scoring::{self, DriverCfg};
use crate::stable_model::{beta_phase, StableParams};
use crate::trig_projection::{
    gamma_jacobian, gamma_vector, info_matrix, score_from_gmean, Grid, ProjError, TrigMoments,
};

pub use crate::scoring::FitStatus;
pub type IterRecord = crate::scoring::IterRecord<4>;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("degenerate sample: empirical ch.f. modulus {modulus} at u = {u}")]
    DegenerateSample { u: f64, modulus: f64 },
    #[error("sample too small: need at least {need} observations, got {got}")]
    SampleTooSmall { need: usize, got: usize },
    #[error(transparent)]
    Projection(#[from] ProjError),
}

/// Rectangular parameter box for the scoring iteration.
#[derive(Debug, Clone, Copy)]
pub struct ParamBox {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
}

impl Default for ParamBox {
    fn default() -> Self {
        ParamBox {
            lo: [-1e12, 1e-6, 0.1, -1.0],
            hi: [1e12, 1e12, 2.0, 1.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub grid: Grid,
    pub max_iter: usize,
    pub tol_step: f64,
    pub tol_score: f64,
    pub min_delta: f64,
    pub bounds: ParamBox,
}

impl FitConfig {
    pub fn new(grid: Grid) -> Self {
        FitConfig {
            grid,
            max_iter: 200,
            tol_step: 1e-8,
            tol_score: 1e-8,
            min_delta: 1.0 / 64.0,
            bounds: ParamBox::default(),
        }
    }

    /// Paper defaults: the 101-point i.i.d. grid.
    pub fn paper_default() -> Self {
        FitConfig::new(Grid::paper_iid())
    }

    fn driver(&self) -> DriverCfg<4> {
        DriverCfg {
            max_iter: self.max_iter,
            tol_step: self.tol_step,
            tol_score: self.tol_score,
            min_delta: self.min_delta,
            lo: self.bounds.lo,
            hi: self.bounds.hi,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: StableParams,
    pub info: [[f64; 4]; 4],
    pub std_errors: [f64; 4],
    pub iterations: usize,
    pub final_score_norm: f64,
    pub converged: bool,
    pub status: FitStatus,
    pub trace: Vec<IterRecord>,
    pub ridge_events: usize,
}

impl From<scoring::DriverResult<4>> for FitResult {
    fn from(r: scoring::DriverResult<4>) -> Self {
        FitResult {
            theta_hat: StableParams::from_array(r.theta),
            info: r.info,
            std_errors: r.std_errors,
            iterations: r.iterations,
            final_score_norm: r.final_score_norm,
            converged: r.converged,
            status: r.status,
            trace: r.trace,
            ridge_events: r.ridge_events,
        }
    }
}

/// Empirical ch.f. at a single point.
fn empirical_chf(data: &[f64], u: f64) -> Complex64 {
    let n = data.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for &x in data {
        let (s, c) = (u * x).sin_cos();
        re += c;
        im += s;
    }
    Complex64::new(re / n, im / n)
}

const PRELIM_U1: f64 = 0.2;
const PRELIM_U2: f64 = 1.0;

/// Invert the modulus and phase of the ch.f. at two points into a
/// moment-type estimate of theta. Exposed separately so tests can feed
/// exact ch.f. values instead of an empirical one.
pub fn prelim_from_chf_values(
    phi1: Complex64,
    phi2: Complex64,
    u1: f64,
    u2: f64,
) -> Result<StableParams, FitError> {
    for (u, phi) in [(u1, phi1), (u2, phi2)] {
        let m = phi.norm();
        if m >= 1.0 - 1e-12 || m <= 1e-12 {
            return Err(FitError::DegenerateSample { u, modulus: m });
        }
    }
    // |phi(u)| = exp(-(sigma u)^alpha) pins alpha and sigma
    let l1 = -phi1.norm().ln();
    let l2 = -phi2.norm().ln();
    let alpha = ((l1.ln() - l2.ln()) / (u1 / u2).ln()).clamp(0.15, 1.95);
    let sigma = l2.powf(1.0 / alpha) / u2;
    // arg phi(u) = mu u - beta * beta_phase(u) is linear in (mu, beta)
    let a1 = phi1.arg();
    let a2 = phi2.arg();
    let b1 = beta_phase(u1, sigma, alpha);
    let b2 = beta_phase(u2, sigma, alpha);
    let det = -u1 * b2 + u2 * b1;
    let scale = (u1 * b2).abs().max((u2 * b1).abs()).max(1e-12);
    let (mu, beta) = if det.abs() < 1e-10 * scale || scale <= 1e-12 {
        // phase carries no skewness information (e.g. alpha near 2)
        (a2 / u2, 0.0)
    } else {
        let mu = (-a1 * b2 + a2 * b1) / det;
        let beta = (u1 * a2 - u2 * a1) / det;
        (mu, beta.clamp(-0.95, 0.95))
    };
    Ok(StableParams { mu, sigma, alpha, beta })
}

/// Consistent preliminary estimate from the empirical ch.f. at two points.
pub fn preliminary_estimate(data: &[f64]) -> Result<StableParams, FitError> {
    if data.len() < 20 {
        return Err(FitError::SampleTooSmall { need: 20, got: data.len() });
    }
    prelim_from_chf_values(
        empirical_chf(data, PRELIM_U1),
        empirical_chf(data, PRELIM_U2),
        PRELIM_U1,
        PRELIM_U2,
    )
}

/// TML fit: Fisher scoring on the empirical trigonometric score.
pub fn tml_fit(
    data: &[f64],
    cfg: &FitConfig,
    init: Option<StableParams>,
) -> Result<FitResult, FitError> {
    assert!(!data.is_empty());
    let init = match init {
        Some(th) => th,
        None => preliminary_estimate(data)?,
    };
    let gbar = cfg.grid.g_mean(data);
    let grid = &cfg.grid;
    let result = scoring::run(init.as_array(), &cfg.driver(), data.len(), |theta| {
        let tm = TrigMoments::new(grid, &StableParams::from_array(*theta))?;
        let score = score_from_gmean(&gbar, &tm);
        let info = info_matrix(&tm);
        let ridge = usize::from(tm.ridge_used > 0.0);
        Ok((score, info, ridge))
    });
    Ok(result.into())
}

/// Explicit GMM fit: the first-order condition with Sigma frozen at
/// `weight_theta` while gamma and gamma_theta track the running theta.
pub fn explicit_gmm_fit(
    data: &[f64],
    cfg: &FitConfig,
    weight_theta: &StableParams,
    init: Option<StableParams>,
) -> Result<FitResult, FitError> {
    assert!(!data.is_empty());
    let init = init.unwrap_or(*weight_theta);
    let gbar = cfg.grid.g_mean(data);
    let grid = &cfg.grid;
    let weight_tm = TrigMoments::new(grid, weight_theta)?;
    let result = scoring::run(init.as_array(), &cfg.driver(), data.len(), |theta| {
        let th = StableParams::from_array(*theta);
        let gamma = gamma_vector(grid, &th);
        let gamma_theta = gamma_jacobian(grid, &th);
        let mut z: Vec<f64> = gbar.iter().zip(&gamma).map(|(a, b)| a - b).collect();
        weight_tm.factor.solve_in_place(&mut z);
        let mut score = [0.0; 4];
        for r in 0..4 {
            score[r] = gamma_theta.row(r).iter().zip(&z).map(|(a, b)| a * b).sum();
        }
        let solved = weight_tm.factor.solve_rows(&gamma_theta).expect("dims fixed");
        let mut info = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..=i {
                let v: f64 =
                    gamma_theta.row(i).iter().zip(solved.row(j)).map(|(a, b)| a * b).sum();
                info[i][j] = v;
                info[j][i] = v;
            }
        }
        Ok((score, info, 0))
    });
    Ok(result.into())
}

/// Iterate the explicit GMM weight: each round re-freezes Sigma at the
/// previous round's estimate. Converges toward the TML estimator.
pub fn iterated_explicit_gmm(
    data: &[f64],
    cfg: &FitConfig,
    rounds: usize,
) -> Result<FitResult, FitError> {
    assert!(rounds >= 1);
    let mut weight = preliminary_estimate(data)?;
    let mut result = None;
    for _ in 0..rounds {
        let fit = explicit_gmm_fit(data, cfg, &weight, Some(weight))?;
        weight = fit.theta_hat;
        result = Some(fit);
    }
    Ok(result.expect("rounds >= 1"))
}
