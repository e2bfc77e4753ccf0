//! Exact runtime and winner distributions for small `n`, by propagating the
//! distribution of `X_t` through the full `(n+1) × (n+1)` kernel.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::numeric::round_half_even;
use crate::update_fn::{MajorityTypeFunction, ProtocolSpec, UpdateFnError};

pub const MAX_N: usize = 5000;
/// First eight bytes of an exported kernel.
pub const KERNEL_MAGIC: &[u8; 8] = b"CLKERNEL";
const DOMINANCE_SLACK: f64 = 1e-10;
const WINNER_RESIDUAL: f64 = 1e-12;
const WINNER_MAX_STEPS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("n = {0} is outside [2, {MAX_N}]")]
    NOutOfRange(usize),
    #[error("x0 = {x0} exceeds n = {n}")]
    X0OutOfRange { x0: usize, n: usize },
    #[error("residual {residual:e} still above threshold after {steps} steps")]
    NotAbsorbed { steps: usize, residual: f64 },
    #[error("fractions must satisfy 1/2 <= x <= x' <= 1, got x = {x}, x' = {x_prime}")]
    BadFractions { x: f64, x_prime: f64 },
    #[error("linear solve failed: singular absorption system")]
    Singular,
    #[error(transparent)]
    UpdateFn(#[from] UpdateFnError),
}

/// Row-stochastic kernel with row `i` the `Bin(n, f(i/n))` pmf.
#[derive(Debug, Clone)]
pub struct ExactChain {
    n: usize,
    protocol: ProtocolSpec,
    kernel: Vec<f64>,
}

/// `Bin(n, p)` pmf, by ratios outward from the mode and normalisation.
pub(crate) fn binomial_pmf_into(n: usize, p: f64, row: &mut [f64]) {
    row.fill(0.0);
    if p <= 0.0 {
        row[0] = 1.0;
        return;
    }
    if p >= 1.0 {
        row[n] = 1.0;
        return;
    }
    let odds = p / (1.0 - p);
    let mode = (((n + 1) as f64 * p).floor() as usize).min(n);
    row[mode] = 1.0;
    for j in mode..n {
        let next = row[j] * (n - j) as f64 / (j + 1) as f64 * odds;
        if next == 0.0 {
            break;
        }
        row[j + 1] = next;
    }
    for j in (1..=mode).rev() {
        let prev = row[j] * j as f64 / (n - j + 1) as f64 / odds;
        if prev == 0.0 {
            break;
        }
        row[j - 1] = prev;
    }
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= total);
}

impl ExactChain {
    pub fn build(n: usize, spec: &ProtocolSpec) -> Result<Self, OracleError> {
        if !(2..=MAX_N).contains(&n) {
            return Err(OracleError::NOutOfRange(n));
        }
        let f = MajorityTypeFunction::new(spec.clone())?;
        let mut kernel = vec![0.0; (n + 1) * (n + 1)];
        kernel.par_chunks_mut(n + 1).enumerate().for_each(|(i, row)| {
            let p = match i {
                0 => 0.0,
                i if i == n => 1.0,
                i => f.eval(i as f64 / n as f64),
            };
            binomial_pmf_into(n, p, row);
        });
        Ok(ExactChain { n, protocol: spec.clone(), kernel })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn protocol(&self) -> &ProtocolSpec {
        &self.protocol
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.kernel[i * (self.n + 1)..(i + 1) * (self.n + 1)]
    }

    /// One step of the transient part: absorbed mass is returned separately
    /// as `(to Y, to X)`.
    fn propagate(&self, v: &[f64], out: &mut [f64]) -> (f64, f64) {
        let n = self.n;
        out.fill(0.0);
        for (i, &mass) in v.iter().enumerate().take(n).skip(1) {
            if mass == 0.0 {
                continue;
            }
            for (o, k) in out.iter_mut().zip(self.row(i)) {
                *o += mass * k;
            }
        }
        let absorbed = (out[0], out[n]);
        out[0] = 0.0;
        out[n] = 0.0;
        absorbed
    }

    fn start(&self, x0: usize) -> Result<Vec<f64>, OracleError> {
        if x0 > self.n {
            return Err(OracleError::X0OutOfRange { x0, n: self.n });
        }
        let mut v = vec![0.0; self.n + 1];
        if x0 != 0 && x0 != self.n {
            v[x0] = 1.0;
        }
        Ok(v)
    }

    /// Row-major kernel as little-endian `f64`s after a 16-byte header
    /// (magic, then `n` as little-endian `u64`).
    pub fn write_kernel<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(KERNEL_MAGIC)?;
        out.write_all(&(self.n as u64).to_le_bytes())?;
        for v in &self.kernel {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    }
}

/// `P(R ≥ s)` for `s = 0..=t_max` and the mass still transient at `t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeDistribution {
    pub survival: Vec<f64>,
    pub residual: f64,
}

impl RuntimeDistribution {
    /// `P(R ≥ s)`, zero past the computed range only when the residual is.
    pub fn at(&self, s: i64) -> f64 {
        if s <= 0 {
            1.0
        } else {
            self.survival.get(s as usize).copied().unwrap_or(self.residual)
        }
    }

    /// Columns `s,P_R_geq_s`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,P_R_geq_s\n");
        for (s, p) in self.survival.iter().enumerate() {
            out.push_str(&format!("{s},{p}\n"));
        }
        out
    }
}

pub fn runtime_distribution(
    chain: &ExactChain,
    x0: usize,
    t_max: usize,
) -> Result<RuntimeDistribution, OracleError> {
    let mut v = chain.start(x0)?;
    let mut next = vec![0.0; chain.n + 1];
    let mut survival = Vec::with_capacity(t_max + 1);
    survival.push(1.0);
    // P(R ≥ s) is the transient mass at time s - 1
    let mut transient: f64 = v.iter().sum();
    for _ in 1..=t_max {
        survival.push(transient);
        chain.propagate(&v, &mut next);
        std::mem::swap(&mut v, &mut next);
        transient = v.iter().sum();
    }
    Ok(RuntimeDistribution { survival, residual: transient })
}

/// Propagates until the transient mass falls below `eps` (at most `cap` steps).
pub fn runtime_distribution_until(
    chain: &ExactChain,
    x0: usize,
    eps: f64,
    cap: usize,
) -> Result<RuntimeDistribution, OracleError> {
    let mut v = chain.start(x0)?;
    let mut next = vec![0.0; chain.n + 1];
    let mut survival = vec![1.0];
    let mut transient: f64 = v.iter().sum();
    while transient >= eps {
        if survival.len() > cap {
            return Err(OracleError::NotAbsorbed { steps: cap, residual: transient });
        }
        survival.push(transient);
        chain.propagate(&v, &mut next);
        std::mem::swap(&mut v, &mut next);
        transient = v.iter().sum();
    }
    survival.push(transient);
    Ok(RuntimeDistribution { survival, residual: transient })
}

/// `(P(X wins), P(Y wins))` by propagation until less than `1e-12` remains.
pub fn winner_probability_exact(chain: &ExactChain, x0: usize) -> Result<(f64, f64), OracleError> {
    let n = chain.n;
    if x0 == n {
        return Ok((1.0, 0.0));
    }
    if x0 == 0 {
        return Ok((0.0, 1.0));
    }
    let mut v = chain.start(x0)?;
    let mut next = vec![0.0; n + 1];
    let (mut win_x, mut win_y) = (0.0, 0.0);
    for _ in 0..WINNER_MAX_STEPS {
        let (to_y, to_x) = chain.propagate(&v, &mut next);
        win_x += to_x;
        win_y += to_y;
        std::mem::swap(&mut v, &mut next);
        if v.iter().sum::<f64>() < WINNER_RESIDUAL {
            return Ok((win_x, win_y));
        }
    }
    Err(OracleError::NotAbsorbed { steps: WINNER_MAX_STEPS, residual: v.iter().sum() })
}

/// The same probabilities from the absorption system `(I - Q) h = r`.
pub fn winner_probability_linear(chain: &ExactChain, x0: usize) -> Result<(f64, f64), OracleError> {
    let n = chain.n;
    if x0 > n {
        return Err(OracleError::X0OutOfRange { x0, n });
    }
    if x0 == n || x0 == 0 {
        return Ok(if x0 == n { (1.0, 0.0) } else { (0.0, 1.0) });
    }
    let m = n - 1;
    let a = DMatrix::from_fn(m, m, |r, c| {
        let q = chain.row(r + 1)[c + 1];
        if r == c {
            1.0 - q
        } else {
            -q
        }
    });
    let rhs = DVector::from_fn(m, |r, _| chain.row(r + 1)[n]);
    let h = a.lu().solve(&rhs).ok_or(OracleError::Singular)?;
    let p = h[x0 - 1];
    Ok((p, 1.0 - p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceResult {
    pub holds: bool,
    /// The `s` with the largest violation, when there is one.
    pub worst_s: Option<usize>,
    pub worst_gap: f64,
    pub counts: (usize, usize),
}

/// Checks that the runtime from `⌊x'n⌉` is stochastically no larger than
/// from `⌊xn⌉`: `P(R(x'n) ≥ s) ≤ P(R(xn) ≥ s) + 1e-10` for every `s` until
/// both chains are absorbed.
pub fn dominance_check(chain: &ExactChain, x: f64, x_prime: f64) -> Result<DominanceResult, OracleError> {
    if !(0.5..=1.0).contains(&x) || !(x..=1.0).contains(&x_prime) {
        return Err(OracleError::BadFractions { x, x_prime });
    }
    let nf = chain.n as f64;
    let c = round_half_even(x * nf) as usize;
    let c_prime = round_half_even(x_prime * nf) as usize;
    if c == c_prime {
        return Ok(DominanceResult { holds: true, worst_s: None, worst_gap: 0.0, counts: (c, c_prime) });
    }
    let near = runtime_distribution_until(chain, c, 1e-14, WINNER_MAX_STEPS)?;
    let far = runtime_distribution_until(chain, c_prime, 1e-14, WINNER_MAX_STEPS)?;
    let horizon = near.survival.len().max(far.survival.len());
    let (mut worst_s, mut worst_gap) = (None, f64::NEG_INFINITY);
    for s in 0..horizon {
        let gap = far.at(s as i64) - near.at(s as i64);
        if gap > worst_gap {
            worst_gap = gap;
            worst_s = Some(s);
        }
    }
    let holds = worst_gap <= DOMINANCE_SLACK;
    Ok(DominanceResult {
        holds,
        worst_s: if holds { None } else { worst_s },
        worst_gap,
        counts: (c, c_prime),
    })
}
