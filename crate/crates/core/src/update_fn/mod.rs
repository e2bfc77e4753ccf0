//! Majority-type update functions.
//!
//! An update function `f: [0,1] -> [0,1]` maps the current fraction of
//! vertices holding opinion `X` to the probability that a vertex holds `X`
//! after the next round. The built-in protocols are all finite mixtures of
//! binomial upper tails `P(Bin(k, x) >= q)`, which lets every quantity the
//! rest of the crate needs be evaluated with sums of positive terms:
//!
//! * `f(x)` itself,
//! * `f(x) / x^m` near 0 (for log-space iteration without underflow),
//! * `1/2 - f(1/2 - δ)` near 1/2 (for iteration without cancellation).

mod protocol;
mod validate;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::numeric::binomial;

pub use protocol::{ProtocolSpec, MAX_K};
pub use validate::{validate, validate_function, AxiomCheck, ValidationReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UpdateFnError {
    #[error("sample size k = {k} is below the minimum {min}")]
    InvalidK { k: u32, min: u32 },
    #[error("support value {value} is out of range")]
    SupportOutOfRange { value: u32 },
    #[error("pmf sums to {sum}, expected 1")]
    PmfNotNormalized { sum: f64 },
    #[error("pmf has a negative or non-finite weight")]
    NegativeWeight,
    #[error("pmf is empty")]
    EmptyPmf,
    #[error("threshold pmf is not symmetric: P(Q={q}) != P(Q={k}+1-{q})")]
    AsymmetricThreshold { q: u32, k: u32 },
    #[error("order of vanishing at 0 is {m}; majority-type functions need m >= 2")]
    VanishingOrderTooLow { m: u32 },
    #[error("function is not of majority type; failed checks: {failed:?}")]
    NotMajorityType { failed: Vec<String> },
    #[error("delta = {0} is outside (0, 1/2]")]
    InvalidDelta(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("argument {0} is outside [0, 1]")]
    OutOfDomain(f64),
    #[error("cannot parse protocol: {0}")]
    Parse(String),
}

/// Order of vanishing `m`, leading coefficient `β` and slope `γ = f'(1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Params {
    pub m: u32,
    pub beta: f64,
    pub gamma: f64,
}

/// Below this `x`, the correction `p(x) = f(x)/x^m - β` is dropped in log space.
const LOG_P_CUTOFF: f64 = 1e-30;
/// `delta_iterate` leaves the δ-map once the gap to 1/2 reaches this value.
const DELTA_SWITCH: f64 = 0.1;

/// `weight * P(Bin(k, x) >= q)`.
#[derive(Debug, Clone)]
struct Threshold {
    weight: f64,
    k: u32,
    q: u32,
    /// `C(k, i)` for `i = 0..=k`.
    binom: Vec<f64>,
}

impl Threshold {
    fn new(weight: f64, k: u32, q: u32) -> Self {
        let binom = (0..=k).map(|i| binomial(k, i)).collect();
        Threshold { weight, k, q, binom }
    }

    fn upper_tail(&self, x: f64) -> f64 {
        let y = 1.0 - x;
        (self.q..=self.k)
            .map(|i| self.binom[i as usize] * x.powi(i as i32) * y.powi((self.k - i) as i32))
            .sum()
    }

    /// `P(Bin(k, x) >= q) / x^m` for `m <= q`.
    fn scaled_low(&self, x: f64, m: u32) -> f64 {
        let y = 1.0 - x;
        let tail: f64 = (self.q..=self.k)
            .map(|i| {
                self.binom[i as usize] * x.powi((i - self.q) as i32) * y.powi((self.k - i) as i32)
            })
            .sum();
        tail * x.powi((self.q - m) as i32)
    }

    /// `T(1/2 + d) - T(1/2 - d)`; terms with both `i` and `k - i` at least `q`
    /// cancel in pairs, the rest are all positive.
    fn symmetric_gap(&self, d: f64) -> f64 {
        let p = 0.5 + d;
        let r = 0.5 - d;
        let lo = self.q.max(self.k + 1 - self.q);
        let mut total = 0.0;
        for i in lo..=self.k {
            let j = 2 * i - self.k;
            // p^j - r^j = (p - r) * sum_{l<j} p^l r^(j-1-l)
            let mut s = 0.0;
            for l in 0..j {
                s += p.powi(l as i32) * r.powi((j - 1 - l) as i32);
            }
            total += self.binom[i as usize] * (p * r).powi((self.k - i) as i32) * 2.0 * d * s;
        }
        total
    }

    fn derivative(&self, x: f64) -> f64 {
        let k = self.k;
        f64::from(k)
            * binomial(k - 1, self.q - 1)
            * x.powi((self.q - 1) as i32)
            * (1.0 - x).powi((k - self.q) as i32)
    }
}

#[derive(Debug, Clone)]
struct Polynomial {
    coeffs: Vec<f64>,
    /// Taylor coefficients of `f` around 1/2.
    centered: Vec<f64>,
}

impl Polynomial {
    fn new(coeffs: Vec<f64>) -> Self {
        // repeated synthetic division by (x - 1/2)
        let mut work = coeffs.clone();
        let mut centered = Vec::with_capacity(coeffs.len());
        while !work.is_empty() {
            let mut rem = 0.0;
            let mut quotient = vec![0.0; work.len().saturating_sub(1)];
            for i in (0..work.len()).rev() {
                let v = work[i] + rem * 0.5;
                if i == 0 {
                    rem = v;
                } else {
                    quotient[i - 1] = v;
                    rem = v;
                }
            }
            centered.push(rem);
            work = quotient;
        }
        Polynomial { coeffs, centered }
    }

    fn horner(cs: &[f64], x: f64) -> f64 {
        cs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    fn eval(&self, x: f64) -> f64 {
        Self::horner(&self.coeffs, x)
    }

    fn derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (i, c)| acc * x + i as f64 * c)
    }

    fn degree(&self) -> u32 {
        self.coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0) as u32
    }

    /// Index of the lowest nonzero coefficient.
    fn vanishing_order(&self) -> Option<u32> {
        self.coeffs.iter().position(|c| *c != 0.0).map(|i| i as u32)
    }
}

#[derive(Debug, Clone)]
enum Repr {
    Mixture(Vec<Threshold>),
    Polynomial(Polynomial),
}

/// An evaluatable update rule with its parameters `(m, β, γ)`.
///
/// Values are immutable after construction.
#[derive(Debug, Clone)]
pub struct MajorityTypeFunction {
    spec: ProtocolSpec,
    repr: Repr,
    params: Params,
    smoothness_order: u32,
}

impl MajorityTypeFunction {
    /// Builds and certifies `f`. Custom polynomials must pass every axiom of
    /// [`validate_function`]; built-ins are certified by construction.
    pub fn new(spec: ProtocolSpec) -> Result<Self, UpdateFnError> {
        let f = Self::from_spec_unchecked(spec)?;
        if f.params.m < 2 {
            return Err(UpdateFnError::VanishingOrderTooLow { m: f.params.m });
        }
        if let Repr::Polynomial(_) = f.repr {
            let report = validate_function(&f);
            if !report.all_passed() {
                return Err(UpdateFnError::NotMajorityType {
                    failed: report.failures().map(|c| c.name.clone()).collect(),
                });
            }
        }
        Ok(f)
    }

    pub fn kmaj(k: u32) -> Result<Self, UpdateFnError> {
        Self::new(ProtocolSpec::KMaj { k })
    }

    /// Structural checks only; axioms are not verified.
    pub(crate) fn from_spec_unchecked(spec: ProtocolSpec) -> Result<Self, UpdateFnError> {
        spec.check()?;
        let repr = match &spec {
            ProtocolSpec::KMaj { k } => Repr::Mixture(vec![kmaj_threshold(1.0, *k)]),
            ProtocolSpec::RandKMaj { pmf } => Repr::Mixture(
                pmf.iter()
                    .filter(|(_, w)| **w > 0.0)
                    .map(|(k, w)| kmaj_threshold(*w, *k))
                    .collect(),
            ),
            ProtocolSpec::KNeighbRand { k, q_pmf } => Repr::Mixture(
                q_pmf
                    .iter()
                    .filter(|(_, w)| **w > 0.0)
                    .map(|(q, w)| Threshold::new(*w, *k, *q))
                    .collect(),
            ),
            ProtocolSpec::CustomPolynomial { coeffs } => {
                Repr::Polynomial(Polynomial::new(coeffs.clone()))
            }
        };
        let (params, smoothness_order) = match &repr {
            Repr::Mixture(ts) => {
                let m = ts.iter().map(|t| t.q).min().expect("nonempty mixture");
                let beta = ts
                    .iter()
                    .filter(|t| t.q == m)
                    .map(|t| t.weight * t.binom[m as usize])
                    .sum();
                let gamma = ts
                    .iter()
                    .map(|t| {
                        t.weight
                            * f64::from(t.k)
                            * binomial(t.k - 1, t.q - 1)
                            * 2f64.powi(1 - t.k as i32)
                    })
                    .sum();
                (Params { m, beta, gamma }, m)
            }
            Repr::Polynomial(p) => {
                let m = p.vanishing_order().ok_or_else(|| {
                    UpdateFnError::Parse("polynomial is identically zero".into())
                })?;
                let params = Params { m, beta: p.coeffs[m as usize], gamma: p.derivative(0.5) };
                (params, p.degree().max(2))
            }
        };
        Ok(MajorityTypeFunction { spec, repr, params, smoothness_order })
    }

    pub fn spec(&self) -> &ProtocolSpec {
        &self.spec
    }

    pub fn params(&self) -> Params {
        self.params
    }

    pub fn m(&self) -> u32 {
        self.params.m
    }

    pub fn beta(&self) -> f64 {
        self.params.beta
    }

    pub fn gamma(&self) -> f64 {
        self.params.gamma
    }

    /// Informational differentiability order (equal to `m` for built-ins,
    /// the polynomial degree for custom functions).
    pub fn smoothness_order(&self) -> u32 {
        self.smoothness_order
    }

    /// `f(x)`. Built-ins evaluate on `min(x, 1-x)` and reflect, so symmetry
    /// holds to rounding.
    pub fn eval(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Mixture(ts) => {
                if x <= 0.5 {
                    mixture_eval(ts, x)
                } else {
                    1.0 - mixture_eval(ts, 1.0 - x)
                }
            }
            Repr::Polynomial(p) => p.eval(x),
        }
    }

    /// `f(x)` from the defining sum without any symmetry shortcut. Used to
    /// check the symmetry axiom honestly.
    pub fn eval_raw(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Mixture(ts) => mixture_eval(ts, x),
            Repr::Polynomial(p) => p.eval(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Mixture(ts) => ts.iter().map(|t| t.weight * t.derivative(x)).sum(),
            Repr::Polynomial(p) => p.derivative(x),
        }
    }

    /// `f(x) / x^m = β + p(x)`, evaluated without forming `x^m`.
    pub fn scaled_low(&self, x: f64) -> f64 {
        let m = self.params.m;
        match &self.repr {
            Repr::Mixture(ts) => ts.iter().map(|t| t.weight * t.scaled_low(x, m)).sum(),
            Repr::Polynomial(p) => Polynomial::horner(&p.coeffs[m as usize..], x),
        }
    }

    /// `1/2 - f(1/2 - δ)` for `δ ∈ [0, 1/2]`, free of cancellation.
    pub fn half_gap(&self, delta: f64) -> f64 {
        match &self.repr {
            Repr::Mixture(ts) => {
                0.5 * ts.iter().map(|t| t.weight * t.symmetric_gap(delta)).sum::<f64>()
            }
            Repr::Polynomial(p) => {
                let odd: f64 = p
                    .centered
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(j, a)| -a * (-delta).powi(j as i32))
                    .sum();
                (0.5 - p.centered[0]) + odd
            }
        }
    }

    /// `f^(t)(x)`; `t = 0` is the identity.
    pub fn iterate(&self, x: f64, t: u32) -> f64 {
        (0..t).fold(x, |acc, _| self.eval(acc))
    }

    /// `1/2 - f^(t)(1/2 - δ)`, following the gap map while the gap is small
    /// and switching to plain iteration once it reaches 0.1.
    pub fn delta_iterate(&self, delta: f64, t: u32) -> Result<f64, UpdateFnError> {
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(UpdateFnError::InvalidDelta(delta));
        }
        let mut gap = delta;
        let mut step = 0;
        while step < t && gap < DELTA_SWITCH {
            gap = self.half_gap(gap);
            step += 1;
        }
        if step == t {
            return Ok(gap);
        }
        Ok(0.5 - self.iterate(0.5 - gap, t - step))
    }

    /// One step of `ln x ↦ ln f(x) = m ln x + ln(β + p(x))`.
    pub fn log_step(&self, ln_x: f64) -> f64 {
        let x = ln_x.exp();
        let ratio = if x < LOG_P_CUTOFF { self.params.beta } else { self.scaled_low(x) };
        f64::from(self.params.m) * ln_x + ratio.ln()
    }

    /// `ln f^(t)(x)` given `ln x <= 0`, without underflow.
    pub fn log_iterate(&self, ln_x: f64, t: u32) -> f64 {
        (0..t).fold(ln_x, |acc, _| self.log_step(acc))
    }

    /// `x` with `|f(x) - y| <= tol`, by bisection down to a bracket of width
    /// `tol` so tiny targets are not matched by a far-off `x`.
    pub fn inverse(&self, y: f64, tol: f64) -> Result<f64, UpdateFnError> {
        if !(tol > 0.0) {
            return Err(UpdateFnError::InvalidTolerance(tol));
        }
        if !(0.0..=1.0).contains(&y) {
            return Err(UpdateFnError::OutOfDomain(y));
        }
        if y == 0.0 || y == 1.0 {
            return Ok(y);
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut best = 0.5;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = self.eval(mid);
            best = mid;
            if ((fm - y).abs() <= tol && hi - lo <= tol) || mid <= lo || mid >= hi {
                break;
            }
            if fm < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(best)
    }

    /// Inverse of the gap map: the `δ'` with `1/2 - f(1/2 - δ') = δ`, to full
    /// relative precision. Uses `δ/γ <= δ' <= δ`, which holds for convex `f`.
    pub fn inverse_gap(&self, delta: f64) -> f64 {
        let (mut lo, mut hi) = (delta / self.params.gamma.max(1.0), delta.min(0.5));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
            if self.half_gap(mid) < delta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

fn kmaj_threshold(weight: f64, k: u32) -> Threshold {
    // even k reduces to k - 1: the tie mass splits evenly
    let odd = if k % 2 == 0 { k - 1 } else { k };
    Threshold::new(weight, odd, odd.div_ceil(2))
}

fn mixture_eval(ts: &[Threshold], x: f64) -> f64 {
    ts.iter().map(|t| t.weight * t.upper_tail(x)).sum()
}

/// `f_k(x)` for `k`-majority (reduced `(k-1)`-sum for even `k`).
pub fn eval_kmaj(k: u32, x: f64) -> Result<f64, UpdateFnError> {
    if k < 3 {
        return Err(UpdateFnError::InvalidK { k, min: 3 });
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(UpdateFnError::OutOfDomain(x));
    }
    let t = kmaj_threshold(1.0, k);
    Ok(if x <= 0.5 { t.upper_tail(x) } else { 1.0 - t.upper_tail(1.0 - x) })
}

/// `f_k(x)` with an explicit half-share of the tie mass for even `k`.
pub fn eval_kmaj_tie_split(k: u32, x: f64) -> Result<f64, UpdateFnError> {
    if k < 3 {
        return Err(UpdateFnError::InvalidK { k, min: 3 });
    }
    if k % 2 == 1 {
        return eval_kmaj(k, x);
    }
    let half = k / 2;
    let above = Threshold::new(1.0, k, half + 1).upper_tail(x);
    let tie = binomial(k, half) * x.powi(half as i32) * (1.0 - x).powi(half as i32);
    Ok(above + 0.5 * tie)
}

/// `f(x)` for any valid protocol.
pub fn eval(spec: &ProtocolSpec, x: f64) -> Result<f64, UpdateFnError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(UpdateFnError::OutOfDomain(x));
    }
    Ok(MajorityTypeFunction::new(spec.clone())?.eval(x))
}

/// One representative of each built-in family, plus an even-`k` majority.
pub fn reference_protocols() -> Vec<ProtocolSpec> {
    let rand_kmaj = BTreeMap::from([(3, 0.5), (5, 0.5)]);
    let kneighb = BTreeMap::from([(2, 0.25), (3, 0.5), (4, 0.25)]);
    vec![
        ProtocolSpec::kmaj(3),
        ProtocolSpec::kmaj(4),
        ProtocolSpec::kmaj(7),
        ProtocolSpec::RandKMaj { pmf: rand_kmaj },
        ProtocolSpec::KNeighbRand { k: 5, q_pmf: kneighb },
    ]
}

/// `(m, β, γ)` of a protocol. Rejects custom functions with `m < 2`.
pub fn params(spec: &ProtocolSpec) -> Result<Params, UpdateFnError> {
    let f = MajorityTypeFunction::from_spec_unchecked(spec.clone())?;
    if f.params.m < 2 {
        return Err(UpdateFnError::VanishingOrderTooLow { m: f.params.m });
    }
    Ok(f.params)
}
