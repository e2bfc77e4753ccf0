//! Empirical runtime distributions and their comparison with predictions.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::oracle::RuntimeDistribution;
use crate::sim::{BatchRecord, RunOutcome, Winner};
use crate::theory::PredictedRuntimeLaw;
use crate::update_fn::ProtocolSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    Empty,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("inputs disagree on {field}: {left} vs {right}")]
    Mismatch { field: &'static str, left: String, right: String },
}

/// What a distribution describes; unknown fields are not compared.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunMeta {
    pub protocol: Option<ProtocolSpec>,
    pub n: Option<u64>,
    pub d: Option<f64>,
}

impl RunMeta {
    /// Fails on the first field both sides know and disagree on. Values of
    /// `d` may differ by the rounding of `x0` to an integer.
    pub fn check_consistent(&self, other: &RunMeta) -> Result<(), StatsError> {
        if let (Some(a), Some(b)) = (&self.protocol, &other.protocol) {
            if a != b {
                return Err(mismatch("protocol", a, b));
            }
        }
        if let (Some(a), Some(b)) = (self.n, other.n) {
            if a != b {
                return Err(mismatch("n", a, b));
            }
        }
        if let (Some(a), Some(b)) = (self.d, other.d) {
            let slack = 0.5 / (self.n.or(other.n).unwrap_or(1) as f64).sqrt() + 1e-9;
            if (a - b).abs() > slack {
                return Err(mismatch("d", a, b));
            }
        }
        Ok(())
    }
}

fn mismatch(field: &'static str, a: impl ToString, b: impl ToString) -> StatsError {
    StatsError::Mismatch { field, left: a.to_string(), right: b.to_string() }
}

/// A law on the integers described by `s ↦ P(R ≥ s)`.
pub trait Survival {
    fn survival(&self, s: i64) -> f64;
    /// Range of `s` outside which the survival is 1 (below) or 0 (above)
    /// to negligible error.
    fn support_hint(&self) -> (i64, i64);
    fn meta(&self) -> RunMeta {
        RunMeta::default()
    }
}

/// `E[R] = Σ_{s ≥ 1} P(R ≥ s)` for a law on the non-negative integers.
pub fn survival_mean(law: &dyn Survival) -> f64 {
    let (_, hi) = law.support_hint();
    (1..=hi + 1).map(|s| law.survival(s)).sum()
}

/// `max_s |P_a(R ≥ s) - P_b(R ≥ s)|` over the union of both supports.
pub fn sup_cdf_distance(a: &dyn Survival, b: &dyn Survival) -> f64 {
    let (a_lo, a_hi) = a.support_hint();
    let (b_lo, b_hi) = b.support_hint();
    (a_lo.min(b_lo) - 1..=a_hi.max(b_hi) + 1)
        .map(|s| (a.survival(s) - b.survival(s)).abs())
        .fold(0.0, f64::max)
}

/// Sorted runtimes and winner counts of a Monte Carlo batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDist {
    runtimes: Vec<u32>,
    pub wins_x: u64,
    pub wins_y: u64,
    pub unresolved: u64,
    pub meta: RunMeta,
}

impl EmpiricalDist {
    pub fn new(runtimes: Vec<u32>, winners: &[Winner], meta: RunMeta) -> Result<Self, StatsError> {
        if runtimes.is_empty() {
            return Err(StatsError::Empty);
        }
        if runtimes.len() != winners.len() {
            return Err(StatsError::InvalidArgument("one winner per runtime is required".into()));
        }
        let mut runtimes = runtimes;
        runtimes.sort_unstable();
        let count = |w| winners.iter().filter(|&&x| x == w).count() as u64;
        Ok(EmpiricalDist {
            runtimes,
            wins_x: count(Winner::X),
            wins_y: count(Winner::Y),
            unresolved: count(Winner::Unresolved),
            meta,
        })
    }

    pub fn from_outcomes(outcomes: &[RunOutcome], meta: RunMeta) -> Result<Self, StatsError> {
        let runtimes = outcomes.iter().map(|o| o.runtime).collect();
        let winners: Vec<Winner> = outcomes.iter().map(|o| o.winner).collect();
        Self::new(runtimes, &winners, meta)
    }

    /// From batch CSV rows, which must share `n` and `x0`.
    pub fn from_records(records: &[BatchRecord], protocol: Option<ProtocolSpec>) -> Result<Self, StatsError> {
        let first = records.first().ok_or(StatsError::Empty)?;
        for r in records {
            if r.n != first.n {
                return Err(mismatch("n", first.n, r.n));
            }
            if r.x0 != first.x0 {
                return Err(mismatch("x0", first.x0, r.x0));
            }
        }
        let nf = first.n as f64;
        let meta = RunMeta {
            protocol,
            n: Some(first.n),
            d: Some((first.x0 as f64 - nf / 2.0) / nf.sqrt()),
        };
        let runtimes = records.iter().map(|r| r.runtime).collect();
        let winners: Vec<Winner> = records.iter().map(|r| r.winner).collect();
        Self::new(runtimes, &winners, meta)
    }

    pub fn n_runs(&self) -> u64 {
        self.runtimes.len() as u64
    }

    pub fn runtimes(&self) -> &[u32] {
        &self.runtimes
    }

    pub fn mean_runtime(&self) -> f64 {
        self.runtimes.iter().map(|&r| f64::from(r)).sum::<f64>() / self.runtimes.len() as f64
    }

    pub fn win_frequency(&self) -> f64 {
        self.wins_x as f64 / self.n_runs() as f64
    }

    /// Fraction of runtimes in `set`.
    pub fn fraction_in(&self, set: &[i64]) -> f64 {
        let hits = self.runtimes.iter().filter(|&&r| set.contains(&i64::from(r))).count();
        hits as f64 / self.runtimes.len() as f64
    }
}

impl Survival for EmpiricalDist {
    fn survival(&self, s: i64) -> f64 {
        if s <= 0 {
            return 1.0;
        }
        let below = self.runtimes.partition_point(|&r| i64::from(r) < s);
        (self.runtimes.len() - below) as f64 / self.runtimes.len() as f64
    }

    fn support_hint(&self) -> (i64, i64) {
        (i64::from(self.runtimes[0]), i64::from(*self.runtimes.last().unwrap()))
    }

    fn meta(&self) -> RunMeta {
        self.meta.clone()
    }
}

impl Survival for PredictedRuntimeLaw {
    fn survival(&self, s: i64) -> f64 {
        PredictedRuntimeLaw::survival(self, s)
    }

    fn support_hint(&self) -> (i64, i64) {
        PredictedRuntimeLaw::support_hint(self)
    }

    fn meta(&self) -> RunMeta {
        RunMeta { protocol: Some(self.protocol.clone()), n: Some(self.n), d: Some(self.d) }
    }
}

impl Survival for RuntimeDistribution {
    fn survival(&self, s: i64) -> f64 {
        self.at(s)
    }

    fn support_hint(&self) -> (i64, i64) {
        (0, self.survival.len() as i64 - 1)
    }
}

/// A survival function read from a table: 1 below the first row, 0 above
/// the last.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedSurvival {
    pub values: BTreeMap<i64, f64>,
    pub meta: RunMeta,
}

impl TabulatedSurvival {
    pub fn new(values: BTreeMap<i64, f64>, meta: RunMeta) -> Result<Self, StatsError> {
        if values.is_empty() {
            return Err(StatsError::Empty);
        }
        Ok(TabulatedSurvival { values, meta })
    }

    /// Parses `s,P_R_geq_s` CSV text.
    pub fn from_csv(text: &str, meta: RunMeta) -> Result<Self, StatsError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| StatsError::InvalidArgument(e.to_string()))?;
        if headers.iter().ne(["s", "P_R_geq_s"]) {
            return Err(StatsError::InvalidArgument(format!(
                "expected header s,P_R_geq_s, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut values = BTreeMap::new();
        for row in reader.deserialize::<(i64, f64)>() {
            let (s, p) = row.map_err(|e| StatsError::InvalidArgument(e.to_string()))?;
            values.insert(s, p);
        }
        Self::new(values, meta)
    }
}

impl Survival for TabulatedSurvival {
    fn survival(&self, s: i64) -> f64 {
        let (&first, _) = self.values.first_key_value().unwrap();
        let (&last, _) = self.values.last_key_value().unwrap();
        if s < first {
            1.0
        } else if s > last {
            0.0
        } else {
            self.values.get(&s).copied().unwrap_or_else(|| {
                // gaps take the next tabulated value
                *self.values.range(s..).next().unwrap().1
            })
        }
    }

    fn support_hint(&self) -> (i64, i64) {
        (*self.values.keys().next().unwrap(), *self.values.keys().last().unwrap())
    }

    fn meta(&self) -> RunMeta {
        self.meta.clone()
    }
}

/// Wilson score interval for `successes / trials`.
pub fn wilson_interval(successes: u64, trials: u64, confidence: f64) -> Result<(f64, f64), StatsError> {
    if trials == 0 {
        return Err(StatsError::InvalidArgument("trials must be positive".into()));
    }
    if successes > trials {
        return Err(StatsError::InvalidArgument(format!("{successes} successes in {trials} trials")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(StatsError::InvalidArgument(format!("confidence {confidence} outside (0, 1)")));
    }
    let z = Normal::standard().inverse_cdf(0.5 + confidence / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub sup_distance: f64,
    pub winner: f64,
    pub mean_runtime: f64,
    pub oracle_sup_distance: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { sup_distance: 0.05, winner: 0.02, mean_runtime: 1.0, oracle_sup_distance: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Verdict {
    fn within(name: &str, observed: f64, expected: f64, tolerance: f64) -> Self {
        Verdict {
            name: name.into(),
            observed,
            expected,
            tolerance,
            pass: (observed - expected).abs() <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub meta: RunMeta,
    pub runs: u64,
    /// 99% Wilson band of the observed X-win frequency.
    pub winner_wilson_99: (f64, f64),
    pub verdicts: Vec<Verdict>,
    pub all_pass: bool,
}

/// What the empirical batch is compared against.
pub struct Prediction<'a> {
    pub runtime: &'a dyn Survival,
    /// Predicted `P(X wins)`.
    pub win_probability: f64,
    pub oracle: Option<&'a dyn Survival>,
}

/// Sup distance of runtimes, winner frequency, mean runtime, unresolved
/// count and, if given, the sup distance to an exact law.
pub fn compare_report(
    emp: &EmpiricalDist,
    prediction: &Prediction<'_>,
    tol: Tolerances,
) -> Result<CompareReport, StatsError> {
    let meta = emp.meta();
    meta.check_consistent(&prediction.runtime.meta())?;
    if let Some(o) = prediction.oracle {
        meta.check_consistent(&o.meta())?;
    }
    let mut verdicts = vec![
        Verdict::within("sup_cdf_distance", sup_cdf_distance(emp, prediction.runtime), 0.0, tol.sup_distance),
        Verdict::within("winner_probability", emp.win_frequency(), prediction.win_probability, tol.winner),
        Verdict::within(
            "mean_runtime",
            emp.mean_runtime(),
            survival_mean(prediction.runtime),
            tol.mean_runtime,
        ),
        Verdict::within("unresolved_runs", emp.unresolved as f64, 0.0, 0.0),
    ];
    if let Some(o) = prediction.oracle {
        verdicts.push(Verdict::within(
            "oracle_sup_cdf_distance",
            sup_cdf_distance(emp, o),
            0.0,
            tol.oracle_sup_distance,
        ));
    }
    Ok(CompareReport {
        meta,
        runs: emp.n_runs(),
        winner_wilson_99: wilson_interval(emp.wins_x, emp.n_runs(), 0.99)?,
        all_pass: verdicts.iter().all(|v| v.pass),
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;

    fn emp(runtimes: &[u32]) -> EmpiricalDist {
        let winners = vec![Winner::X; runtimes.len()];
        EmpiricalDist::new(runtimes.to_vec(), &winners, RunMeta::default()).unwrap()
    }

    fn table(pairs: &[(i64, f64)]) -> TabulatedSurvival {
        TabulatedSurvival::new(pairs.iter().copied().collect(), RunMeta::default()).unwrap()
    }

    #[test]
    fn empirical_survival() {
        let e = emp(&[3, 1, 2, 2]);
        assert_eq!(e.survival(0), 1.0);
        assert_eq!(e.survival(1), 1.0);
        assert_eq!(e.survival(2), 0.75);
        assert_eq!(e.survival(3), 0.25);
        assert_eq!(e.survival(4), 0.0);
        assert_eq!(e.mean_runtime(), 2.0);
        assert_eq!(survival_mean(&e), 2.0);
        assert!(matches!(EmpiricalDist::new(vec![], &[], RunMeta::default()), Err(StatsError::Empty)));
    }

    #[test]
    fn sup_distance_examples() {
        let a = emp(&[5, 6, 7]);
        assert_eq!(sup_cdf_distance(&a, &a), 0.0);
        let b = emp(&[20, 21]);
        assert_eq!(sup_cdf_distance(&a, &b), 1.0);
    }

    #[test]
    fn wilson_examples() {
        assert_eq!(wilson_interval(0, 50, 0.95).unwrap().0, 0.0);
        assert_eq!(wilson_interval(50, 50, 0.95).unwrap().1, 1.0);
        let (lo, hi) = wilson_interval(500, 1000, 0.95).unwrap();
        assert!(lo < 0.5 && hi > 0.5);
        assert_relative_eq!(hi - lo, 0.062, epsilon = 1e-3);
        assert!(wilson_interval(1, 0, 0.95).is_err());
    }

    #[test]
    fn tabulated_from_csv() {
        let t = TabulatedSurvival::from_csv("s,P_R_geq_s\n0,1\n1,0.5\n2,0.25\n", RunMeta::default()).unwrap();
        assert_eq!(t.survival(-3), 1.0);
        assert_eq!(t.survival(2), 0.25);
        assert_eq!(t.survival(3), 0.0);
        assert!(TabulatedSurvival::from_csv("a,b\n1,2\n", RunMeta::default()).is_err());
    }

    fn self_prediction(e: &EmpiricalDist) -> TabulatedSurvival {
        let (lo, hi) = e.support_hint();
        table(&(lo..=hi + 1).map(|s| (s, e.survival(s))).collect::<Vec<_>>())
    }

    #[test]
    fn perfect_match_passes() {
        let e = emp(&[10, 11, 11, 12, 13]);
        let law = self_prediction(&e);
        let report = compare_report(
            &e,
            &Prediction { runtime: &law, win_probability: 1.0, oracle: Some(&law) },
            Tolerances::default(),
        )
        .unwrap();
        assert!(report.all_pass, "{report:?}");
        assert_eq!(report.verdicts.len(), 5);
    }

    #[test]
    fn shifted_prediction_fails_on_the_mean() {
        let e = emp(&[10, 11, 11, 12, 13]);
        let (lo, hi) = e.support_hint();
        let shifted = table(&(lo..=hi + 6).map(|s| (s, e.survival(s - 5))).collect::<Vec<_>>());
        let report = compare_report(
            &e,
            &Prediction { runtime: &shifted, win_probability: 1.0, oracle: None },
            Tolerances::default(),
        )
        .unwrap();
        let mean = report.verdicts.iter().find(|v| v.name == "mean_runtime").unwrap();
        assert!(!mean.pass);
        assert_relative_eq!(mean.expected - mean.observed, 5.0, epsilon = 1e-12);
        assert!(!report.all_pass);
    }

    #[test]
    fn metadata_mismatch_is_an_error() {
        let mut e = emp(&[3, 4]);
        e.meta = RunMeta { protocol: Some(ProtocolSpec::kmaj(3)), n: Some(100), d: Some(1.0) };
        let mut other = table(&[(0, 1.0), (5, 0.0)]);
        other.meta = RunMeta { protocol: Some(ProtocolSpec::kmaj(5)), ..Default::default() };
        let p = Prediction { runtime: &other, win_probability: 0.5, oracle: None };
        assert!(matches!(
            compare_report(&e, &p, Tolerances::default()),
            Err(StatsError::Mismatch { field: "protocol", .. })
        ));
        other.meta = RunMeta { n: Some(1000), ..Default::default() };
        let p = Prediction { runtime: &other, win_probability: 0.5, oracle: None };
        assert!(compare_report(&e, &p, Tolerances::default()).is_err());
        other.meta = RunMeta { d: Some(1.04), ..Default::default() };
        let p = Prediction { runtime: &other, win_probability: 0.5, oracle: None };
        assert!(compare_report(&e, &p, Tolerances::default()).is_ok());
    }

    #[test]
    fn report_serializes_verdicts() {
        let e = emp(&[2, 3]);
        let law = self_prediction(&e);
        let report = compare_report(
            &e,
            &Prediction { runtime: &law, win_probability: 1.0, oracle: None },
            Tolerances::default(),
        )
        .unwrap();
        let json = serde_json::to_value(&report).unwrap();
        let v = &json["verdicts"][0];
        for key in ["name", "observed", "expected", "tolerance", "pass"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
