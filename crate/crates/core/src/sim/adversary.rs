use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;

/// Largest exponent accepted for `⌊n^α⌋` budgets.
pub const MAX_ALPHA: f64 = 0.49;

/// Flips the adversary may make per round, as a function of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Budget {
    #[default]
    Zero,
    /// `⌊n^α⌋`.
    Power { alpha: f64 },
    /// `⌊√n / ln n⌋`.
    SqrtOverLn,
}

impl Budget {
    pub fn flips(&self, n: u64) -> u64 {
        let nf = n as f64;
        match *self {
            Budget::Zero => 0,
            Budget::Power { alpha } => nf.powf(alpha).floor() as u64,
            Budget::SqrtOverLn if n >= 3 => (nf.sqrt() / nf.ln()).floor() as u64,
            Budget::SqrtOverLn => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    None,
    TowardMinority,
    TowardMajority,
    Random,
}

/// A per-round perturbation applied after the binomial redraw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct AdversaryPolicy {
    pub budget: Budget,
    pub direction: Direction,
}

impl AdversaryPolicy {
    pub fn new(budget: Budget, direction: Direction) -> Result<Self, SimError> {
        let policy = AdversaryPolicy { budget, direction };
        policy.check()?;
        Ok(policy)
    }

    pub fn none() -> Self {
        AdversaryPolicy::default()
    }

    pub fn check(&self) -> Result<(), SimError> {
        if let Budget::Power { alpha } = self.budget {
            if !(0.0..=MAX_ALPHA).contains(&alpha) {
                return Err(SimError::InvalidConfig(format!(
                    "adversary exponent {alpha} must lie in [0, {MAX_ALPHA}]"
                )));
            }
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.direction != Direction::None && self.budget != Budget::Zero
    }

    /// Perturbs the freshly drawn count `x`. Consensus states are left alone.
    pub fn apply<R: Rng + ?Sized>(&self, x: u64, n: u64, rng: &mut R) -> u64 {
        if x == 0 || x == n || !self.is_active() {
            return x;
        }
        let b = self.budget.flips(n);
        // twice the signed distance to n/2 keeps odd n integral
        let excess = 2 * x as i64 - n as i64;
        let shifted = match self.direction {
            Direction::None => x as i64,
            Direction::TowardMinority => {
                let flips = b.min(excess.unsigned_abs() / 2) as i64;
                x as i64 - excess.signum() * flips
            }
            Direction::TowardMajority => x as i64 + excess.signum() * b as i64,
            Direction::Random => {
                if rng.random::<bool>() {
                    x as i64 + b as i64
                } else {
                    x as i64 - b as i64
                }
            }
        };
        shifted.clamp(0, n as i64) as u64
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn budgets() {
        assert_eq!(Budget::Zero.flips(1_000_000), 0);
        assert_eq!(Budget::Power { alpha: 0.3 }.flips(1_000_000), 63);
        assert_eq!(Budget::SqrtOverLn.flips(1_000_000), 72);
        for n in [10u64, 1000, 1_000_000] {
            assert!(Budget::Power { alpha: 0.49 }.flips(n) as f64 <= (n as f64).sqrt());
        }
        assert!(AdversaryPolicy::new(Budget::Power { alpha: 0.6 }, Direction::Random).is_err());
    }

    #[test]
    fn toward_minority_stops_at_the_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let adv = AdversaryPolicy::new(Budget::Power { alpha: 0.3 }, Direction::TowardMinority).unwrap();
        let n = 1_000_000;
        assert_eq!(adv.apply(600_000, n, &mut rng), 600_000 - 63);
        assert_eq!(adv.apply(400_000, n, &mut rng), 400_000 + 63);
        assert_eq!(adv.apply(500_010, n, &mut rng), 500_000);
        assert_eq!(adv.apply(500_000, n, &mut rng), 500_000);
        assert_eq!(adv.apply(n, n, &mut rng), n);
        assert_eq!(adv.apply(0, n, &mut rng), 0);
    }

    #[test]
    fn toward_majority_and_random_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1000;
        let adv = AdversaryPolicy::new(Budget::Power { alpha: 0.49 }, Direction::TowardMajority).unwrap();
        assert_eq!(adv.apply(995, n, &mut rng), n);
        assert_eq!(adv.apply(3, n, &mut rng), 0);
        let b = Budget::Power { alpha: 0.49 }.flips(n);
        let random = AdversaryPolicy::new(Budget::Power { alpha: 0.49 }, Direction::Random).unwrap();
        for _ in 0..100 {
            let y = random.apply(500, n, &mut rng);
            assert!(y == 500 + b || y == 500 - b);
        }
    }

    #[test]
    fn json_round_trip() {
        let adv = AdversaryPolicy::new(Budget::Power { alpha: 0.3 }, Direction::TowardMinority).unwrap();
        let text = serde_json::to_string(&adv).unwrap();
        assert_eq!(
            text,
            r#"{"budget":{"kind":"power","alpha":0.3},"direction":"toward_minority"}"#
        );
        assert_eq!(serde_json::from_str::<AdversaryPolicy>(&text).unwrap(), adv);
    }
}
