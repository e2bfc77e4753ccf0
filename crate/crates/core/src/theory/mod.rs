//! Limit-law predictions: the Gaussian race, CLT moments, the periodic
//! correction `g`, the runtime law and its lattice limits, and the Koenigs
//! cross-check of `g`.

mod export;
mod g;
mod koenigs;
mod law;

use thiserror::Error;

use crate::numeric::{std_normal_cdf, std_normal_pdf};
use crate::update_fn::UpdateFnError;

pub use export::{f_grid_text, g_plot_text, runtime_cdf_csv, z_density_text};
pub use g::{compute_g, compute_g_with, compute_h, GFunctionApprox, GValue, G_GRID, G_INCREMENT};
pub use koenigs::{g_via_koenigs, koenigs_m0, KoenigsApprox, KoenigsValue, KOENIGS_RESIDUAL};
pub use law::{concentration_set, runtime_cdf_prediction, subsequence_limit_pmf, PredictedRuntimeLaw};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("gamma must exceed 1, got {0}")]
    InvalidGamma(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("g did not converge: a_used = {a_used}, b_used = {b_used}, last change {last_change:e}")]
    GNotConverged { a_used: u32, b_used: u32, last_change: f64 },
    #[error("h is not strictly increasing near x = {x}")]
    NonMonotoneH { x: f64 },
    #[error("Koenigs product with {terms} terms leaves residual {residual:e}")]
    KoenigsTruncation { terms: usize, residual: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    UpdateFn(#[from] UpdateFnError),
}

/// `Z ~ N(d, 1/(4(γ²-1)))`, the limit of the rescaled bias after the
/// initial Gaussian phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianZ {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianZ {
    pub fn new(d: f64, gamma: f64) -> Result<Self, TheoryError> {
        if !(gamma > 1.0) {
            return Err(TheoryError::InvalidGamma(gamma));
        }
        Ok(GaussianZ { mean: d, variance: 1.0 / (4.0 * (gamma * gamma - 1.0)) })
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn pdf(&self, z: f64) -> f64 {
        std_normal_pdf((z - self.mean) / self.sd()) / self.sd()
    }

    pub fn cdf(&self, z: f64) -> f64 {
        std_normal_cdf((z - self.mean) / self.sd())
    }

    /// `P(|Z| <= c)`, accurate in relative terms for small `c` as well.
    pub fn mass_within(&self, c: f64) -> f64 {
        if c <= 0.0 {
            return 0.0;
        }
        if c.is_infinite() {
            return 1.0;
        }
        let sd = self.sd();
        if c < 1e-3 * sd {
            // Simpson on [-c, c]; error is O(c^5)
            return c / 3.0 * (self.pdf(-c) + 4.0 * self.pdf(0.0) + self.pdf(c));
        }
        let upper = (c - self.mean) / sd;
        let lower = (-c - self.mean) / sd;
        if lower > 0.0 {
            // both in the right tail: subtract upper-tail masses instead
            std_normal_cdf(-lower) - std_normal_cdf(-upper)
        } else {
            std_normal_cdf(upper) - std_normal_cdf(lower)
        }
    }

    /// Density of `V = -log_γ |Z|`.
    pub fn log_abs_density(&self, v: f64, gamma: f64) -> f64 {
        let r = gamma.powf(-v);
        gamma.ln() * r * (self.pdf(r) + self.pdf(-r))
    }
}

/// `P(Z >= 0) = Φ(2d√(γ²-1))`. Negative `d` is reflected, so
/// `win(d) + win(-d) == 1` holds exactly.
pub fn win_probability(d: f64, gamma: f64) -> Result<f64, TheoryError> {
    if !(gamma > 1.0) {
        return Err(TheoryError::InvalidGamma(gamma));
    }
    if d < 0.0 {
        return Ok(1.0 - win_probability(-d, gamma)?);
    }
    Ok(std_normal_cdf(2.0 * d * (gamma * gamma - 1.0).sqrt()))
}

/// Mean and variance of the rescaled bias after `t` rounds:
/// `(γ^t d, (γ^{2t} - 1) / (4(γ² - 1)))`.
pub fn clt_moments(t: u32, d: f64, gamma: f64) -> Result<(f64, f64), TheoryError> {
    if !(gamma > 1.0) {
        return Err(TheoryError::InvalidGamma(gamma));
    }
    let gt = gamma.powi(t as i32);
    Ok((gt * d, (gt * gt - 1.0) / (4.0 * (gamma * gamma - 1.0))))
}
