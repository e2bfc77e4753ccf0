use serde::Serialize;

use super::g::orbit_limit;
use super::TheoryError;
use crate::update_fn::{MajorityTypeFunction, ProtocolSpec};

/// Required functional-equation residual.
pub const KOENIGS_RESIDUAL: f64 = 1e-6;
const MAX_TERMS: usize = 200;
/// `η - 1` below this no longer changes the product in double precision.
const ETA_DONE: f64 = 1e-17;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KoenigsValue {
    pub value: f64,
    pub terms: usize,
    /// `|M_0(f(x)) - γ M_0(x)| / M_0(x)`.
    pub residual: f64,
}

/// Truncated product for the Schröder function `M_0` with
/// `M_0(f(x)) = γ M_0(x)` and `M_0(x) ~ 1/2 - x` near 1/2.
#[derive(Debug, Clone)]
pub struct KoenigsApprox {
    f: MajorityTypeFunction,
    truncation: usize,
}

impl KoenigsApprox {
    pub fn new(f: MajorityTypeFunction, truncation: usize) -> Self {
        KoenigsApprox { f, truncation: truncation.min(MAX_TERMS) }
    }

    /// `M_0(1/2 - δ) = δ Π_j η_j` with `δ_0 = δ`, `δ_{j+1}` the preimage of
    /// `δ_j` under the gap map, and `η_j = γ δ_{j+1} / δ_j`.
    pub fn eval_gap(&self, delta: f64) -> (f64, usize) {
        let gamma = self.f.gamma();
        let mut d = delta;
        let mut prod = 1.0;
        let mut terms = 0;
        while terms < self.truncation {
            let next = self.f.inverse_gap(d);
            let eta = gamma * next / d;
            prod *= eta;
            terms += 1;
            d = next;
            if (eta - 1.0).abs() < ETA_DONE {
                break;
            }
        }
        (delta * prod, terms)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_gap(0.5 - x).0
    }

    /// `M_0(x)` together with the functional-equation residual at `x`.
    pub fn eval_checked(&self, x: f64) -> Result<KoenigsValue, TheoryError> {
        if !(x > 0.0 && x < 0.5) {
            return Err(TheoryError::InvalidArgument(format!("x = {x} is outside (0, 1/2)")));
        }
        let delta = 0.5 - x;
        let (value, terms) = self.eval_gap(delta);
        let (image, _) = self.eval_gap(self.f.half_gap(delta));
        let residual = (image - self.f.gamma() * value).abs() / value;
        if !(residual < KOENIGS_RESIDUAL) {
            return Err(TheoryError::KoenigsTruncation { terms, residual });
        }
        Ok(KoenigsValue { value, terms, residual })
    }

    /// The gap `δ` with `M_0(1/2 - δ) = target`, for small targets.
    fn inverse_gap_value(&self, target: f64) -> f64 {
        // Π η >= 1, so the answer lies below the target
        let (mut lo, mut hi) = (target * 1e-3, target);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval_gap(mid).0 < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

pub fn koenigs_m0(spec: &ProtocolSpec, x: f64, truncation: usize) -> Result<KoenigsValue, TheoryError> {
    let f = MajorityTypeFunction::new(spec.clone())?;
    KoenigsApprox::new(f, truncation).eval_checked(x)
}

/// `g(x)` from the orbit of the point where `M_0 = γ^{-a-x}`. Points on the
/// exact Schröder orbit need no limit in `a`.
pub fn g_via_koenigs(f: &MajorityTypeFunction, x: f64) -> Result<f64, TheoryError> {
    let gamma = f.gamma();
    let m = f64::from(f.m());
    // keep the target at most 0.05 so the starting gap is inside (0, 1/2)
    let a = ((20f64.ln() / gamma.ln()) - x).ceil().max(1.0);
    let target = gamma.powf(-(a + x));
    let k = KoenigsApprox::new(f.clone(), MAX_TERMS);
    let delta = k.inverse_gap_value(target);
    let orbit = orbit_limit(f, delta, 400).ok_or(TheoryError::GNotConverged {
        a_used: a as u32,
        b_used: 400,
        last_change: f64::NAN,
    })?;
    Ok(2.0 - 2f64.ln() / m.ln() - x + orbit.limit - a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::{compute_g_with, G_INCREMENT};

    #[test]
    fn functional_equation_holds() {
        for x in [0.1, 0.2, 0.3, 0.4] {
            let v = koenigs_m0(&ProtocolSpec::kmaj(3), x, 200).unwrap();
            assert!(v.value > 0.0);
            assert!(v.residual < 1e-6, "x={x}: {}", v.residual);
        }
    }

    #[test]
    fn short_truncation_is_reported() {
        let err = koenigs_m0(&ProtocolSpec::kmaj(3), 0.1, 2).unwrap_err();
        assert!(matches!(err, TheoryError::KoenigsTruncation { terms: 2, .. }));
    }

    #[test]
    fn behaves_like_the_gap_near_one_half() {
        let k = KoenigsApprox::new(MajorityTypeFunction::kmaj(3).unwrap(), 200);
        let gamma: f64 = 1.5;
        let mut prev = f64::INFINITY;
        for y in [1e-1, 1e-2, 1e-3, 1e-4] {
            let drift = (k.eval(0.5 - y).ln() - y.ln()).abs() / gamma.ln();
            assert!(drift <= 2.0 * y);
            assert!(drift < prev);
            prev = drift;
        }
    }

    #[test]
    fn positive_on_grid() {
        let k = KoenigsApprox::new(MajorityTypeFunction::kmaj(5).unwrap(), 200);
        for i in 1..50 {
            assert!(k.eval(i as f64 / 100.0) > 0.0);
        }
    }

    #[test]
    fn agrees_with_double_limit() {
        for spec in [ProtocolSpec::kmaj(3), ProtocolSpec::kmaj(7)] {
            let f = MajorityTypeFunction::new(spec).unwrap();
            for x in [0.0, 0.25, 0.5, 0.9] {
                let direct = compute_g_with(&f, x, 1e-12, G_INCREMENT).unwrap().value;
                let via = g_via_koenigs(&f, x).unwrap();
                assert!((direct - via).abs() < 1e-9, "x={x}: {direct} vs {via}");
            }
        }
    }
}
