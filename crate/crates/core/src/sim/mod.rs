//! Monte Carlo simulation of `X_{t+1} ~ Bin(n, f(X_t / n))`.

mod adversary;
mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::round_half_even;
use crate::update_fn::{MajorityTypeFunction, Params, ProtocolSpec, UpdateFnError};

pub use adversary::{AdversaryPolicy, Budget, Direction, MAX_ALPHA};
pub use io::{read_batch_csv, write_batch_csv, write_trajectories_csv, BatchRecord};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 0xC0FFEE;
/// Environment variable capping the batch thread count.
pub const THREADS_ENV: &str = "CONSENSUS_LAB_THREADS";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    UpdateFn(#[from] UpdateFnError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Inputs of one Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: u64,
    pub x0: u64,
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub adversary: AdversaryPolicy,
    pub max_rounds: u32,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default)]
    pub record_trajectory: bool,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// `⌊n/2 + d√n⌉` with ties to even, clamped to `[0, n]`.
pub fn x0_from_d(n: u64, d: f64) -> u64 {
    let nf = n as f64;
    round_half_even(nf / 2.0 + d * nf.sqrt()).clamp(0.0, nf) as u64
}

/// `10 (½ log_γ n + log_m ln n) + 100`.
pub fn default_max_rounds(n: u64, p: Params) -> u32 {
    let nf = (n.max(3)) as f64;
    let scale = 0.5 * nf.ln() / p.gamma.ln() + (nf.ln().ln() / f64::from(p.m).ln()).max(0.0);
    (10.0 * scale + 100.0).ceil() as u32
}

impl SimConfig {
    /// A config with no adversary, the default cap and the default seed.
    pub fn new(n: u64, x0: u64, protocol: ProtocolSpec) -> Result<Self, SimError> {
        let p = crate::update_fn::params(&protocol)?;
        let config = SimConfig {
            n,
            x0,
            protocol,
            adversary: AdversaryPolicy::none(),
            max_rounds: default_max_rounds(n, p),
            master_seed: DEFAULT_SEED,
            record_trajectory: false,
        };
        config.check()?;
        Ok(config)
    }

    pub fn from_d(n: u64, d: f64, protocol: ProtocolSpec) -> Result<Self, SimError> {
        Self::new(n, x0_from_d(n, d), protocol)
    }

    pub fn with_adversary(mut self, adversary: AdversaryPolicy) -> Self {
        self.adversary = adversary;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_trajectory(mut self, record: bool) -> Self {
        self.record_trajectory = record;
        self
    }

    pub fn check(&self) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::InvalidConfig("n must be positive".into()));
        }
        if self.x0 > self.n {
            return Err(SimError::InvalidConfig(format!("x0 = {} exceeds n = {}", self.x0, self.n)));
        }
        if self.max_rounds == 0 {
            return Err(SimError::InvalidConfig("max_rounds must be at least 1".into()));
        }
        self.adversary.check()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    X,
    Y,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    /// Rounds until consensus, or `max_rounds` if unresolved.
    pub runtime: u32,
    pub winner: Winner,
    /// `X_0, X_1, …` when recording was requested.
    pub trajectory: Option<Vec<u64>>,
}

/// The rng for run `index` of a batch: one ChaCha stream per index.
pub fn run_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// A config paired with its built update function.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    f: MajorityTypeFunction,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.check()?;
        let f = MajorityTypeFunction::new(config.protocol.clone())?;
        Ok(Simulator { config, f })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// One round: exact binomial redraw, then the adversary.
    pub fn step<R: Rng + ?Sized>(&self, x: u64, rng: &mut R) -> u64 {
        let n = self.config.n;
        if x == 0 || x == n {
            return x;
        }
        let p = self.f.eval(x as f64 / n as f64).clamp(0.0, 1.0);
        let drawn = Binomial::new(n, p).expect("p lies in [0, 1]").sample(rng);
        self.config.adversary.apply(drawn, n, rng)
    }

    pub fn run_with<R: Rng + ?Sized>(&self, rng: &mut R) -> RunOutcome {
        let n = self.config.n;
        let mut x = self.config.x0;
        let mut trajectory = self.config.record_trajectory.then(|| vec![x]);
        let mut t = 0;
        loop {
            if x == n || x == 0 {
                let winner = if x == n { Winner::X } else { Winner::Y };
                return RunOutcome { runtime: t, winner, trajectory };
            }
            if t == self.config.max_rounds {
                return RunOutcome { runtime: t, winner: Winner::Unresolved, trajectory };
            }
            x = self.step(x, rng);
            t += 1;
            if let Some(tr) = trajectory.as_mut() {
                tr.push(x);
            }
        }
    }

    /// Run `index` of the batch seeded by the config's master seed.
    pub fn run_indexed(&self, index: u64) -> RunOutcome {
        self.run_with(&mut run_rng(self.config.master_seed, index))
    }

    pub fn batch(&self, num_runs: u64) -> Vec<RunOutcome> {
        let work = || (0..num_runs).into_par_iter().map(|i| self.run_indexed(i)).collect();
        match thread_pool() {
            Some(pool) => pool.install(work),
            None => work(),
        }
    }
}

fn thread_pool() -> Option<rayon::ThreadPool> {
    let threads: usize = std::env::var(THREADS_ENV).ok()?.trim().parse().ok()?;
    rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().ok()
}

/// One round from `x_t` under `config`.
pub fn step<R: Rng + ?Sized>(x_t: u64, config: &SimConfig, rng: &mut R) -> Result<u64, SimError> {
    Ok(Simulator::new(config.clone())?.step(x_t, rng))
}

/// Run 0 of the config's seed.
pub fn run(config: &SimConfig) -> Result<RunOutcome, SimError> {
    Ok(Simulator::new(config.clone())?.run_indexed(0))
}

/// `num_runs` independent runs, ordered by index. Run `i` uses stream `i`
/// of `master_seed`, so results do not depend on scheduling.
pub fn batch(config: &SimConfig, num_runs: u64, master_seed: u64) -> Result<Vec<RunOutcome>, SimError> {
    if num_runs == 0 {
        return Err(SimError::InvalidConfig("num_runs must be at least 1".into()));
    }
    let sim = Simulator::new(config.clone().with_seed(master_seed))?;
    Ok(sim.batch(num_runs))
}

/// Every vertex samples `k` opinions with replacement and adopts the
/// majority, breaking ties with a fair coin.
pub fn agent_level_step_kmaj<R: Rng + ?Sized>(x_t: u64, k: u32, n: u64, rng: &mut R) -> u64 {
    if x_t == 0 || x_t == n {
        return x_t;
    }
    let mut next = 0;
    for _ in 0..n {
        let ones = (0..k).filter(|_| rng.random_range(0..n) < x_t).count() as u32;
        let adopt = match (2 * ones).cmp(&k) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => rng.random::<bool>(),
        };
        next += u64::from(adopt);
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kmaj3(n: u64, x0: u64) -> SimConfig {
        SimConfig::new(n, x0, ProtocolSpec::kmaj(3)).unwrap()
    }

    #[test]
    fn absorbing_states() {
        let sim = Simulator::new(kmaj3(1000, 1000)).unwrap();
        let mut rng = run_rng(1, 0);
        assert_eq!(sim.step(1000, &mut rng), 1000);
        assert_eq!(sim.step(0, &mut rng), 0);
        let out = sim.run_indexed(0);
        assert_eq!((out.runtime, out.winner), (0, Winner::X));
        let out = run(&kmaj3(1000, 0)).unwrap();
        assert_eq!((out.runtime, out.winner), (0, Winner::Y));
    }

    #[test]
    fn adversary_leaves_consensus_alone() {
        let adv = AdversaryPolicy::new(Budget::Power { alpha: 0.49 }, Direction::TowardMinority).unwrap();
        let sim = Simulator::new(kmaj3(1000, 1000).with_adversary(adv)).unwrap();
        let mut rng = run_rng(3, 0);
        assert_eq!(sim.step(1000, &mut rng), 1000);
    }

    #[test]
    fn seeded_runs_repeat() {
        let config = kmaj3(10_000, 5_000).with_trajectory(true);
        let a = batch(&config, 20, 99).unwrap();
        let b = batch(&config, 20, 99).unwrap();
        assert_eq!(a, b);
        let sim = Simulator::new(config.with_seed(99)).unwrap();
        let singles: Vec<_> = (0..20).map(|i| sim.run_indexed(i)).collect();
        assert_eq!(a, singles);
        assert_ne!(a, batch(&kmaj3(10_000, 5_000).with_trajectory(true), 20, 100).unwrap());
    }

    #[test]
    fn trajectory_ends_at_consensus() {
        let out = run(&kmaj3(1000, 520).with_trajectory(true)).unwrap();
        let tr = out.trajectory.unwrap();
        assert_eq!(tr.len() as u32, out.runtime + 1);
        assert_eq!(tr[0], 520);
        assert!(*tr.last().unwrap() == 0 || *tr.last().unwrap() == 1000);
    }

    #[test]
    fn cap_gives_unresolved() {
        let mut config = kmaj3(1_000_000, 500_000);
        config.max_rounds = 2;
        let out = run(&config).unwrap();
        assert_eq!(out, RunOutcome { runtime: 2, winner: Winner::Unresolved, trajectory: None });
    }

    #[test]
    fn x0_rounding() {
        assert_eq!(x0_from_d(1_000_000, 0.0), 500_000);
        assert_eq!(x0_from_d(1_000_000, 1.0), 501_000);
        // n/2 = 0.5 is a tie
        assert_eq!(x0_from_d(1, 0.0), 0);
        assert_eq!(x0_from_d(100, 10.0), 100);
    }

    #[test]
    fn config_checks() {
        assert!(SimConfig::new(10, 11, ProtocolSpec::kmaj(3)).is_err());
        let mut c = kmaj3(10, 5);
        c.max_rounds = 0;
        assert!(c.check().is_err());
        assert!(batch(&kmaj3(10, 5), 0, 1).is_err());
        let json = serde_json::to_string(&kmaj3(100, 60)).unwrap();
        let back: SimConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, kmaj3(100, 60));
    }

    #[test]
    fn default_cap_scale() {
        let p = crate::update_fn::params(&ProtocolSpec::kmaj(3)).unwrap();
        let cap = default_max_rounds(1_000_000, p);
        assert!((300..320).contains(&cap), "{cap}");
    }

    #[test]
    fn agent_level_mean() {
        let mut rng = run_rng(5, 0);
        let trials = 20_000;
        let total: u64 = (0..trials).map(|_| agent_level_step_kmaj(600, 3, 1000, &mut rng)).sum();
        let mean = total as f64 / trials as f64;
        let sd = (1000.0f64 * 0.648 * 0.352).sqrt() / (trials as f64).sqrt();
        assert!((mean - 648.0).abs() < 4.0 * sd, "mean {mean}");
        assert_eq!(agent_level_step_kmaj(1000, 3, 1000, &mut rng), 1000);
    }
}
