use std::collections::BTreeMap;

use super::{GFunctionApprox, GaussianZ, TheoryError};
use crate::update_fn::{params, Params, ProtocolSpec};

/// Survival probabilities below this are treated as the end of the support.
const TAIL: f64 = 1e-15;
const QUAD_EPS: f64 = 1e-10;
/// Half-width of the excluded neighbourhood of `Z = 0`.
const ZERO_GAP: f64 = 1e-12;

/// Predicted law of the runtime: `P(R ≥ s) = P(Z_n + log_m ln n + g(Z_n) ≥ s)`
/// with `Z_n = ½ log_γ(n / Z²)`.
#[derive(Debug, Clone)]
pub struct PredictedRuntimeLaw {
    pub protocol: ProtocolSpec,
    pub n: u64,
    pub d: f64,
    pub params: Params,
    pub z: GaussianZ,
    pub g: GFunctionApprox,
    log_m_ln_n: f64,
    /// Tabulated `h` nodes, checked strictly increasing at construction.
    h_nodes: Vec<f64>,
}

pub fn runtime_cdf_prediction(
    spec: &ProtocolSpec,
    n: u64,
    d: f64,
    g: &GFunctionApprox,
) -> Result<PredictedRuntimeLaw, TheoryError> {
    if n < 2 {
        return Err(TheoryError::InvalidArgument(format!("n = {n} must be at least 2")));
    }
    if &g.protocol != spec {
        return Err(TheoryError::InvalidArgument(format!(
            "g was tabulated for {} but the law is for {spec}",
            g.protocol
        )));
    }
    g.check_h_monotone()?;
    let p = params(spec)?;
    let h_nodes = g.h_nodes();
    Ok(PredictedRuntimeLaw {
        protocol: spec.clone(),
        n,
        d,
        params: p,
        z: GaussianZ::new(d, p.gamma)?,
        g: g.clone(),
        log_m_ln_n: (n as f64).ln().ln() / f64::from(p.m).ln(),
        h_nodes,
    })
}

impl PredictedRuntimeLaw {
    fn h_inv(&self, y: f64) -> f64 {
        self.g.h_inverse_unchecked(&self.h_nodes, y)
    }

    /// `P(R ≥ s)`. The event is `|Z| ≤ √n γ^{-h⁻¹(s - log_m ln n)}` because
    /// `h` is increasing, so only a Gaussian mass is needed.
    pub fn survival(&self, s: i64) -> f64 {
        let u = self.h_inv(s as f64 - self.log_m_ln_n);
        let c = (self.n as f64).sqrt() * self.params.gamma.powf(-u);
        self.z.mass_within(c)
    }

    /// The same probability by adaptive quadrature of the Gaussian density
    /// against the indicator, on ±8 standard deviations.
    pub fn survival_by_quadrature(&self, s: i64) -> f64 {
        let gamma = self.params.gamma;
        let half_log_n = 0.5 * (self.n as f64).ln() / gamma.ln();
        let indicator = |z: f64| {
            if z.abs() < ZERO_GAP {
                return 0.0;
            }
            let zn = half_log_n - z.abs().ln() / gamma.ln();
            if zn + self.log_m_ln_n + self.g.eval(zn) >= s as f64 {
                self.z.pdf(z)
            } else {
                0.0
            }
        };
        let sd = self.z.sd();
        let (lo, hi) = (self.d - 8.0 * sd, self.d + 8.0 * sd);
        let mut total = 0.0;
        // split at 0 so the excluded neighbourhood is an interval edge
        let mut pieces = vec![(lo, hi)];
        if lo < 0.0 && hi > 0.0 {
            pieces = vec![(lo, -ZERO_GAP), (ZERO_GAP, hi)];
        }
        for (a, b) in pieces {
            total += adaptive_simpson(&indicator, a, b, QUAD_EPS, 60);
        }
        total
    }

    /// Smallest `s` where the survival drops below `1 - TAIL`, and the
    /// largest where it stays above `TAIL`.
    pub fn support_hint(&self) -> (i64, i64) {
        let center = (0.5 * (self.n as f64).ln() / self.params.gamma.ln() + self.log_m_ln_n) as i64;
        let mut lo = center;
        while self.survival(lo) < 1.0 - TAIL && lo > center - 10_000 {
            lo -= 1;
        }
        let mut hi = center;
        while self.survival(hi) > TAIL && hi < center + 10_000 {
            hi += 1;
        }
        (lo, hi)
    }

    /// `E[R] = Σ_{s ≥ 1} P(R ≥ s)`.
    pub fn mean(&self) -> f64 {
        let (_, hi) = self.support_hint();
        (1..=hi).map(|s| self.survival(s)).sum()
    }

    /// Smallest `s` with `P(R ≥ s + 1) ≤ 1/2`.
    pub fn median(&self) -> i64 {
        let (lo, hi) = self.support_hint();
        (lo..=hi).find(|&s| self.survival(s + 1) <= 0.5).unwrap_or(hi)
    }
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, eps: f64, depth: u32) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, eps, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * eps {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
}

/// Law of `H = ⌊h(x - log_γ|Z|) + y⌋` as a pmf over integers, from
/// `P(H ≥ j) = P(|Z| ≤ γ^{x - h⁻¹(j - y)})`.
pub fn subsequence_limit_pmf(
    spec: &ProtocolSpec,
    x: f64,
    y: f64,
    d: f64,
    g: &GFunctionApprox,
) -> Result<BTreeMap<i64, f64>, TheoryError> {
    if !(0.0..1.0).contains(&x) || !(0.0..1.0).contains(&y) {
        return Err(TheoryError::InvalidArgument(format!("x = {x}, y = {y} must lie in [0, 1)")));
    }
    let p = params(spec)?;
    let z = GaussianZ::new(d, p.gamma)?;
    let h_inv = g.h_inverter()?;
    let at_least = |j: i64| z.mass_within(p.gamma.powf(x - h_inv(j as f64 - y)));

    let mut lo = 0;
    while at_least(lo) < 1.0 - TAIL && lo > -10_000 {
        lo -= 1;
    }
    let mut pmf = BTreeMap::new();
    let mut j = lo;
    let mut upper = at_least(j);
    loop {
        let next = at_least(j + 1);
        pmf.insert(j, upper - next);
        if next < TAIL || j > 10_000 {
            // remaining tail mass goes to the last cell
            *pmf.get_mut(&j).unwrap() += next;
            break;
        }
        upper = next;
        j += 1;
    }
    // mass below `lo` is below TAIL; fold it into the first cell
    *pmf.get_mut(&lo).unwrap() += 1.0 - at_least(lo);
    Ok(pmf)
}

/// `s = ⌈u + log_m ln n + g(u)⌉` with `u = ½ log_γ(n/d²)`, and the
/// two-point set `{s - 1, s}`.
pub fn concentration_set(
    spec: &ProtocolSpec,
    n: u64,
    d: f64,
    g: &GFunctionApprox,
) -> Result<(i64, [i64; 2]), TheoryError> {
    if !(d > 0.0) {
        return Err(TheoryError::InvalidArgument(format!("d = {d} must be positive")));
    }
    let s = concentration_level(spec, n, d, g)?.ceil() as i64;
    Ok((s, [s - 1, s]))
}

/// The expression inside the ceiling of [`concentration_set`].
pub(crate) fn concentration_level(
    spec: &ProtocolSpec,
    n: u64,
    d: f64,
    g: &GFunctionApprox,
) -> Result<f64, TheoryError> {
    let p = params(spec)?;
    let n = n as f64;
    let u = 0.5 * (n / (d * d)).ln() / p.gamma.ln();
    Ok(u + n.ln().ln() / f64::from(p.m).ln() + g.eval(u))
}
