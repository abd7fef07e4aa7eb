//! Characteristic function of the stable law in the continuous
//! (M-)parametrization, its logarithm, and analytic gradients in
//! theta = (mu, sigma, alpha, beta).
//!
//! With w = sigma*|u|, s = sign(u) and T = tan(pi*alpha/2), the log
//! ch.f. for alpha != 1 collapses to
//!
//!   psi(u) = -w^alpha + i*mu*u - i*beta*s * B(w),   B(w) = T*(w - w^alpha),
//!
//! and the alpha = 1 branch is the removable limit B -> (2/pi)*w*ln(w).
//! The gradients follow from the chain rule through w:
//!
//!   psi_mu    = i*u
//!   psi_beta  = -i*s * B
//!   psi_sigma = (-alpha*w^alpha - i*beta*s * C) / sigma,  C = T*(w - alpha*w^alpha)
//!   psi_alpha = -w^alpha*ln(w) - i*beta*s * D,            D = T'*(w - w^alpha) - T*w^alpha*ln(w)
//!
//! with T' = (pi/2)/cos^2(pi*alpha/2). At sigma = 1 these reduce to the
//! standardized forms. B, C and D are 0*inf forms at alpha = 1; inside a
//! small seam around alpha = 1 they are evaluated by their Taylor
//! expansions in (alpha - 1), exact to third order.

use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

/// Half-width of the bridged neighborhood of alpha = 1.
pub const ALPHA_SEAM: f64 = 5e-3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid stable parameters: {0}")]
    InvalidParams(String),
}

/// Parameter vector theta = (mu, sigma, alpha, beta) of the stable law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableParams {
    pub mu: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl StableParams {
    pub fn new(mu: f64, sigma: f64, alpha: f64, beta: f64) -> Result<Self, ModelError> {
        let p = StableParams { mu, sigma, alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(ModelError::InvalidParams(format!("sigma = {} must be > 0", self.sigma)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(ModelError::InvalidParams(format!("alpha = {} must be in (0, 2]", self.alpha)));
        }
        if !(-1.0..=1.0).contains(&self.beta) {
            return Err(ModelError::InvalidParams(format!("beta = {} must be in [-1, 1]", self.beta)));
        }
        if !self.mu.is_finite() {
            return Err(ModelError::InvalidParams("mu must be finite".into()));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.mu, self.sigma, self.alpha, self.beta]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        StableParams { mu: a[0], sigma: a[1], alpha: a[2], beta: a[3] }
    }
}

/// phi(u; theta) together with its four partial derivatives.
#[derive(Debug, Clone, Copy)]
pub struct ChfGradient {
    pub value: Complex64,
    pub d_mu: Complex64,
    pub d_sigma: Complex64,
    pub d_alpha: Complex64,
    pub d_beta: Complex64,
}

impl ChfGradient {
    pub fn partials(&self) -> [Complex64; 4] {
        [self.d_mu, self.d_sigma, self.d_alpha, self.d_beta]
    }
}

/// The three alpha-singular products B, C, D (see module docs), bridged
/// across alpha = 1.
struct SeamTerms {
    b: f64,
    c: f64,
    d: f64,
}

fn seam_terms(w: f64, alpha: f64) -> SeamTerms {
    let l = w.ln();
    let wa = w.powf(alpha);
    let eps = alpha - 1.0;
    if eps.abs() < ALPHA_SEAM {
        // Taylor expansions in eps around the removable singularity.
        let b = w * ((2.0 / PI) * l + (eps / PI) * l * l
            + eps * eps * (l * l * l / (3.0 * PI) - (PI / 6.0) * l));
        let c = b + wa * (2.0 / PI - (PI / 6.0) * eps * eps);
        let d = w * (l * l / PI
            + eps * ((2.0 / (3.0 * PI)) * l * l * l - (PI / 3.0) * l)
            + eps * eps * (l * l * l * l / (4.0 * PI) - (PI / 4.0) * l * l));
        SeamTerms { b, c, d }
    } else {
        let t = (PI * alpha / 2.0).tan();
        let cosv = (PI * alpha / 2.0).cos();
        let tp = (PI / 2.0) / (cosv * cosv);
        SeamTerms {
            b: t * (w - wa),
            c: t * (w - alpha * wa),
            d: tp * (w - wa) - t * wa * l,
        }
    }
}

/// The coefficient of -beta in Im psi(u; theta): sign(u) * B(sigma|u|).
/// Used by the preliminary estimator to invert the phase equations.
pub fn beta_phase(u: f64, sigma: f64, alpha: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    u.signum() * seam_terms(sigma * u.abs(), alpha).b
}

/// Log characteristic function psi(u; theta) = log phi(u; theta).
pub fn log_chf(u: f64, theta: &StableParams) -> Complex64 {
    if u == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let s = u.signum();
    let w = theta.sigma * u.abs();
    let st = seam_terms(w, theta.alpha);
    let re = -w.powf(theta.alpha);
    let im = theta.mu * u - theta.beta * s * st.b;
    Complex64::new(re, im)
}

/// Characteristic function phi(u; theta) = exp(psi(u; theta)).
pub fn chf(u: f64, theta: &StableParams) -> Complex64 {
    log_chf(u, theta).exp()
}

/// phi and its partial derivatives phi_theta_i = psi_theta_i * phi.
pub fn chf_gradient(u: f64, theta: &StableParams) -> ChfGradient {
    if u == 0.0 {
        let zero = Complex64::new(0.0, 0.0);
        return ChfGradient {
            value: Complex64::new(1.0, 0.0),
            d_mu: zero,
            d_sigma: zero,
            d_alpha: zero,
            d_beta: zero,
        };
    }
    let s = u.signum();
    let w = theta.sigma * u.abs();
    let l = w.ln();
    let wa = w.powf(theta.alpha);
    let st = seam_terms(w, theta.alpha);

    let psi = Complex64::new(-wa, theta.mu * u - theta.beta * s * st.b);
    let value = psi.exp();

    let psi_mu = Complex64::new(0.0, u);
    let psi_beta = Complex64::new(0.0, -s * st.b);
    let psi_sigma = Complex64::new(-theta.alpha * wa, -theta.beta * s * st.c) / theta.sigma;
    let psi_alpha = Complex64::new(-wa * l, -theta.beta * s * st.d);

    ChfGradient {
        value,
        d_mu: psi_mu * value,
        d_sigma: psi_sigma * value,
        d_alpha: psi_alpha * value,
        d_beta: psi_beta * value,
    }
}
