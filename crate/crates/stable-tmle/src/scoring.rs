//! Shared Fisher-scoring driver: theta <- theta + delta * I~^{-1} S~_n with
//! step backtracking, box clamping and ridge-escalated information solves.
//! Generic over the parameter dimension (4 for the i.i.d. stable fit, 3
//! for the OU fit).
//!
//! Convergence is judged on the projected score norm: components clamped at
//! a box bound with the score pushing further outward satisfy the boundary
//! first-order condition and are excluded. When the plain scoring direction
//! yields no descent at any step length (the information degenerates near
//! alpha = 2 or |beta| = 1), a Levenberg-style diagonal damping ladder bends
//! the direction toward the raw score before giving up.

use crate::numkit::{spd_factor, Mat};
use crate::trig_projection::ProjError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    /// Score norm or step norm fell under its tolerance.
    Converged,
    /// Iteration budget exhausted.
    MaxIter,
    /// No descent even at the minimal step length.
    Stalled,
    /// Information matrix not positive definite after ridge escalation.
    SingularInformation,
}

#[derive(Debug, Clone, Copy)]
pub struct IterRecord<const N: usize> {
    pub theta: [f64; N],
    pub score_norm: f64,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct DriverCfg<const N: usize> {
    pub max_iter: usize,
    pub tol_step: f64,
    pub tol_score: f64,
    pub min_delta: f64,
    pub lo: [f64; N],
    pub hi: [f64; N],
}

#[derive(Debug, Clone)]
pub(crate) struct DriverResult<const N: usize> {
    pub theta: [f64; N],
    pub info: [[f64; N]; N],
    pub std_errors: [f64; N],
    pub iterations: usize,
    pub final_score_norm: f64,
    pub converged: bool,
    pub status: FitStatus,
    pub trace: Vec<IterRecord<N>>,
    pub ridge_events: usize,
}

/// Sup-norm of the score with KKT-satisfied components projected out: a
/// coordinate clamped at a bound whose score pushes further outward is at a
/// constrained optimum in that direction, so it should not block convergence.
fn projected_norm<const N: usize>(cfg: &DriverCfg<N>, theta: &[f64; N], score: &[f64; N]) -> f64 {
    let mut norm = 0.0f64;
    for i in 0..N {
        let outward = (theta[i] == cfg.hi[i] && score[i] > 0.0)
            || (theta[i] == cfg.lo[i] && score[i] < 0.0);
        if !outward {
            norm = norm.max(score[i].abs());
        }
    }
    norm
}

/// Invert a small symmetric matrix, escalating a diagonal ridge on
/// failure. Returns the inverse and the number of ridge retries used.
pub(crate) fn invert_sym<const N: usize>(m: &[[f64; N]; N]) -> Option<([[f64; N]; N], usize)> {
    let trace: f64 = (0..N).map(|i| m[i][i]).sum();
    for (tries, &r) in [0.0, 1e-12, 1e-10, 1e-8].iter().enumerate() {
        let mut mat = Mat::zeros(N, N);
        for i in 0..N {
            for j in 0..N {
                mat[(i, j)] = m[i][j];
            }
            mat[(i, i)] += r * trace / N as f64;
        }
        if let Ok(f) = spd_factor(&mat) {
            let mut inv = [[0.0; N]; N];
            for j in 0..N {
                let mut e = vec![0.0; N];
                e[j] = 1.0;
                f.solve_in_place(&mut e);
                for i in 0..N {
                    inv[i][j] = e[i];
                }
            }
            for i in 0..N {
                for j in 0..i {
                    let v = 0.5 * (inv[i][j] + inv[j][i]);
                    inv[i][j] = v;
                    inv[j][i] = v;
                }
            }
            return Some((inv, tries));
        }
    }
    None
}

fn clamp<const N: usize>(cfg: &DriverCfg<N>, theta: [f64; N]) -> [f64; N] {
    let mut out = theta;
    for i in 0..N {
        out[i] = out[i].clamp(cfg.lo[i], cfg.hi[i]);
    }
    out
}

/// Run the scoring iteration. `eval` maps theta to the empirical score,
/// the information matrix and the number of ridge events spent.
pub(crate) fn run<const N: usize, E>(
    init: [f64; N],
    cfg: &DriverCfg<N>,
    n_obs: usize,
    mut eval: E,
) -> DriverResult<N>
where
    E: FnMut(&[f64; N]) -> Result<([f64; N], [[f64; N]; N], usize), ProjError>,
{
    let mut theta = clamp(cfg, init);
    let mut trace = Vec::new();
    let mut ridge_events = 0usize;

    let (mut score, mut info, r0) = match eval(&theta) {
        Ok(v) => v,
        Err(_) => {
            return DriverResult {
                theta,
                info: [[f64::NAN; N]; N],
                std_errors: [f64::NAN; N],
                iterations: 0,
                final_score_norm: f64::NAN,
                converged: false,
                status: FitStatus::SingularInformation,
                trace,
                ridge_events: 0,
            };
        }
    };
    ridge_events += r0;
    let mut norm = projected_norm(cfg, &theta, &score);
    trace.push(IterRecord { theta, score_norm: norm, delta: 0.0 });

    let mut status = FitStatus::MaxIter;
    let mut iterations = 0usize;

    for _ in 0..cfg.max_iter {
        if norm <= cfg.tol_score {
            status = FitStatus::Converged;
            break;
        }
        // the plain scoring direction first; if no step length descends,
        // fall back to (a) the active-set reduced system, which drops
        // bound-clamped coordinates whose score points outward, and (b) a
        // Levenberg-style diagonal damping ladder, which bends the direction
        // toward the raw score when the information degenerates
        let info_trace: f64 = (0..N).map(|i| info[i][i]).sum();
        let mut active = [false; N];
        for i in 0..N {
            active[i] = (theta[i] == cfg.hi[i] && score[i] > 0.0)
                || (theta[i] == cfg.lo[i] && score[i] < 0.0);
        }
        let any_active = active.iter().any(|&a| a);
        let mut accepted = None;
        'directions: for damping in [0.0, 1e-4, 1e-2, 1.0] {
            for reduced in [false, true] {
                if reduced && !any_active {
                    continue;
                }
                let mut sys = info;
                let mut rhs = score;
                for i in 0..N {
                    sys[i][i] += damping * info_trace / N as f64;
                    if reduced && active[i] {
                        for j in 0..N {
                            sys[i][j] = 0.0;
                            sys[j][i] = 0.0;
                        }
                        sys[i][i] = 1.0;
                        rhs[i] = 0.0;
                    }
                }
                let Some((inv, tries)) = invert_sym(&sys) else {
                    if damping == 0.0 && !reduced {
                        status = FitStatus::SingularInformation;
                        break 'directions;
                    }
                    continue;
                };
                ridge_events += tries;
                let mut dir = [0.0; N];
                for i in 0..N {
                    for j in 0..N {
                        dir[i] += inv[i][j] * rhs[j];
                    }
                }
                // backtracking: halve delta while the score norm does not
                // decrease
                let mut delta = 1.0;
                loop {
                    let mut cand = theta;
                    for i in 0..N {
                        cand[i] += delta * dir[i];
                    }
                    let cand = clamp(cfg, cand);
                    match eval(&cand) {
                        Ok((s, m, r)) => {
                            let cn = projected_norm(cfg, &cand, &s);
                            if cn < norm {
                                ridge_events += r;
                                accepted = Some((cand, s, m, cn, delta));
                                break 'directions;
                            }
                        }
                        Err(_) => {} // trial point at the box edge: no descent
                    }
                    if delta <= cfg.min_delta {
                        break;
                    }
                    delta = (delta / 2.0).max(cfg.min_delta);
                }
            }
        }
        if status == FitStatus::SingularInformation {
            break;
        }
        iterations += 1;
        match accepted {
            None => {
                status = FitStatus::Stalled;
                break;
            }
            Some((cand, s, m, cn, used_delta)) => {
                let step = (0..N).map(|i| (cand[i] - theta[i]).abs()).fold(0.0, f64::max);
                theta = cand;
                score = s;
                info = m;
                norm = cn;
                trace.push(IterRecord { theta, score_norm: norm, delta: used_delta });
                if step <= cfg.tol_step {
                    status = FitStatus::Converged;
                    break;
                }
            }
        }
    }
    if status == FitStatus::MaxIter && norm <= cfg.tol_score {
        status = FitStatus::Converged;
    }

    let std_errors = match invert_sym(&info) {
        Some((inv, _)) => {
            let n = n_obs as f64;
            let mut se = [0.0; N];
            for i in 0..N {
                se[i] = (inv[i][i] / n).max(0.0).sqrt();
            }
            se
        }
        None => [f64::NAN; N],
    };
    DriverResult {
        theta,
        info,
        std_errors,
        iterations,
        final_score_norm: norm,
        converged: status == FitStatus::Converged,
        status,
        trace,
        ridge_events,
    }
}
