use serde::Serialize;

use super::TheoryError;
use crate::update_fn::{MajorityTypeFunction, ProtocolSpec};

/// Number of tabulation points of `g` on `[0, 1)`.
pub const G_GRID: usize = 1024;
/// Step in `a` between successive refinements.
pub const G_INCREMENT: u32 = 4;

const A_START: u32 = 8;
const A_MAX: u32 = 200;
/// Iteration leaves the gap map once `1/2 - x` reaches this.
const GAP_EXIT: f64 = 0.1;
/// Iteration moves to log space once `x` drops below this.
const LOG_ENTRY: f64 = 1e-4;
/// Below `ln x = ln 1e-30` the recursion is affine to within `O(x)`.
const AFFINE_LN: f64 = -69.0;
const LN_STOP: f64 = -1e6;
const B_EXTRA: u32 = 60;

/// One converged value of `g` with the truncation that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GValue {
    pub value: f64,
    pub a_used: u32,
    pub b_used: u32,
    /// Change from the previous refinement.
    pub change: f64,
}

/// Result of following the orbit of `1/2 - δ0` down to 0:
/// `lim_b (b - log_m |ln f^(b)(1/2 - δ0)|)` and the `b` where it was read off.
pub(crate) struct OrbitLimit {
    pub limit: f64,
    pub steps: u32,
}

/// Runs the gap map, plain iteration and log-space iteration in turn. Once
/// `p(x)` is negligible `ln f^(b)` follows `L ↦ mL + ln β`, whose exact
/// solution gives the `b → ∞` limit in closed form.
pub(crate) fn orbit_limit(
    f: &MajorityTypeFunction,
    delta0: f64,
    max_steps: u32,
) -> Option<OrbitLimit> {
    let m = f64::from(f.m());
    let mut b = 0;
    let mut gap = delta0;
    while gap < GAP_EXIT {
        if b >= max_steps {
            return None;
        }
        gap = f.half_gap(gap);
        b += 1;
    }
    let mut x = 0.5 - gap;
    while x >= LOG_ENTRY {
        if b >= max_steps {
            return None;
        }
        x = f.eval(x);
        b += 1;
    }
    let mut ln_x = x.ln();
    while ln_x > LN_STOP && b < max_steps {
        ln_x = f.log_step(ln_x);
        b += 1;
    }
    if ln_x > AFFINE_LN {
        return None;
    }
    let fixed = -f.beta().ln() / (m - 1.0);
    Some(OrbitLimit { limit: f64::from(b) - (ln_x - fixed).abs().ln() / m.ln(), steps: b })
}

fn g_truncated(f: &MajorityTypeFunction, x: f64, a: u32) -> Option<(f64, u32)> {
    let m = f64::from(f.m());
    let delta0 = f.gamma().powf(-(f64::from(a) + x));
    if !(delta0 > 0.0) {
        return None;
    }
    let orbit = orbit_limit(f, delta0, a + B_EXTRA)?;
    let value = 2.0 - 2f64.ln() / m.ln() - x + orbit.limit - f64::from(a);
    Some((value, orbit.steps))
}

/// `g(x)` with refinements in `a` spaced by `increment`.
pub fn compute_g_with(
    f: &MajorityTypeFunction,
    x: f64,
    tol: f64,
    increment: u32,
) -> Result<GValue, TheoryError> {
    compute_g_capped(f, x, tol, increment, A_MAX)
}

fn compute_g_capped(
    f: &MajorityTypeFunction,
    x: f64,
    tol: f64,
    increment: u32,
    a_max: u32,
) -> Result<GValue, TheoryError> {
    if !(tol > 0.0) {
        return Err(TheoryError::InvalidTolerance(tol));
    }
    let increment = increment.max(1);
    let start = A_START.max((f64::from(A_START) - x).ceil().max(0.0) as u32);
    let fail = |a_used, b_used, last_change| TheoryError::GNotConverged { a_used, b_used, last_change };
    let (mut prev, mut b_prev) = g_truncated(f, x, start).ok_or_else(|| fail(start, 0, f64::NAN))?;
    let mut a = start;
    loop {
        let next_a = a + increment;
        if next_a > a_max {
            return Err(fail(a, b_prev, f64::NAN));
        }
        let (value, b) = g_truncated(f, x, next_a).ok_or_else(|| fail(next_a, b_prev, f64::NAN))?;
        let change = (value - prev).abs();
        if change < tol {
            return Ok(GValue { value, a_used: next_a, b_used: b, change });
        }
        prev = value;
        b_prev = b;
        a = next_a;
    }
}

/// `g(x)` for the protocol, to self-consistency `tol`.
pub fn compute_g(spec: &ProtocolSpec, x: f64, tol: f64) -> Result<GValue, TheoryError> {
    let f = MajorityTypeFunction::new(spec.clone())?;
    compute_g_with(&f, x, tol, G_INCREMENT)
}

/// `h(x) = g(x) + x`.
pub fn compute_h(spec: &ProtocolSpec, x: f64, tol: f64) -> Result<f64, TheoryError> {
    Ok(compute_g(spec, x, tol)?.value + x)
}

/// `g` tabulated on `G_GRID` points of `[0, 1)`, interpolated linearly and
/// extended periodically.
#[derive(Debug, Clone, Serialize)]
pub struct GFunctionApprox {
    pub protocol: ProtocolSpec,
    pub grid: Vec<f64>,
    pub a_used: u32,
    pub b_used: u32,
    /// Largest refinement change or midpoint interpolation error; building
    /// fails when this exceeds the requested tolerance.
    pub tol: f64,
}

impl GFunctionApprox {
    pub fn build(spec: &ProtocolSpec, tol: f64) -> Result<Self, TheoryError> {
        let f = MajorityTypeFunction::new(spec.clone())?;
        Self::build_for(&f, tol)
    }

    pub fn build_for(f: &MajorityTypeFunction, tol: f64) -> Result<Self, TheoryError> {
        let mut grid = Vec::with_capacity(G_GRID);
        let (mut a_used, mut b_used, mut worst) = (0, 0, 0.0f64);
        for i in 0..G_GRID {
            let v = compute_g_with(f, i as f64 / G_GRID as f64, tol, G_INCREMENT)?;
            grid.push(v.value);
            a_used = a_used.max(v.a_used);
            b_used = b_used.max(v.b_used);
            worst = worst.max(v.change);
        }
        let mut approx =
            GFunctionApprox { protocol: f.spec().clone(), grid, a_used, b_used, tol: worst };
        // sample midpoints to bound the interpolation error
        let mut interp = 0.0f64;
        for i in (0..G_GRID).step_by(G_GRID / 32) {
            let x = (i as f64 + 0.5) / G_GRID as f64;
            let exact = compute_g_with(f, x, tol, G_INCREMENT)?;
            interp = interp.max((exact.value - approx.eval(x)).abs() + exact.change);
        }
        approx.tol = worst.max(interp);
        if approx.tol > tol {
            return Err(TheoryError::GNotConverged { a_used, b_used, last_change: approx.tol });
        }
        Ok(approx)
    }

    /// `g(x)` for any real `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.grid.len();
        let t = x.rem_euclid(1.0) * n as f64;
        let i = (t.floor() as usize).min(n - 1);
        let w = t - i as f64;
        self.grid[i] * (1.0 - w) + self.grid[(i + 1) % n] * w
    }

    pub fn h(&self, x: f64) -> f64 {
        self.eval(x) + x
    }

    pub fn g0(&self) -> f64 {
        self.grid[0]
    }

    pub fn mean(&self) -> f64 {
        self.grid.iter().sum::<f64>() / self.grid.len() as f64
    }

    pub fn range(&self) -> f64 {
        let max = self.grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.grid.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    /// Tabulated `h` on `[0, 1]`, including the wrap-around point.
    pub(crate) fn h_nodes(&self) -> Vec<f64> {
        let n = self.grid.len();
        (0..=n).map(|i| i as f64 / n as f64 + self.grid[i % n]).collect()
    }

    /// Fails with the first offending node when `h` is not strictly increasing.
    pub fn check_h_monotone(&self) -> Result<(), TheoryError> {
        let nodes = self.h_nodes();
        let n = self.grid.len();
        match nodes.windows(2).position(|w| w[1] <= w[0]) {
            Some(i) => Err(TheoryError::NonMonotoneH { x: i as f64 / n as f64 }),
            None => Ok(()),
        }
    }

    /// The `u` with `h(u) = y`, using `h(u + 1) = h(u) + 1`.
    pub fn h_inverse(&self, y: f64) -> Result<f64, TheoryError> {
        self.check_h_monotone()?;
        Ok(self.h_inverse_unchecked(&self.h_nodes(), y))
    }

    pub(crate) fn h_inverse_unchecked(&self, nodes: &[f64], y: f64) -> f64 {
        let n = self.grid.len();
        let shift = (y - nodes[0]).floor();
        let target = (y - shift).clamp(nodes[0], nodes[n]);
        // last node not above the target
        let i = nodes.partition_point(|&h| h <= target).saturating_sub(1).min(n - 1);
        let w = ((target - nodes[i]) / (nodes[i + 1] - nodes[i])).clamp(0.0, 1.0);
        shift + (i as f64 + w) / n as f64
    }

    /// A monotone `h` inverse usable many times without re-checking.
    pub(crate) fn h_inverter(&self) -> Result<impl Fn(f64) -> f64 + '_, TheoryError> {
        self.check_h_monotone()?;
        let nodes = self.h_nodes();
        Ok(move |y| self.h_inverse_unchecked(&nodes, y))
    }
}
