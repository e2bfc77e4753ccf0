use serde::Serialize;

use super::{MajorityTypeFunction, ProtocolSpec};

const FIXED_POINT_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;
const MONOTONE_TOL: f64 = 1e-12;
const CONVEX_TOL: f64 = 1e-9;
const PROBE: [f64; 3] = [1e-3, 1e-4, 1e-5];

/// Outcome of one axiom check, with the worst grid point seen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomCheck {
    pub name: String,
    pub passed: bool,
    pub worst_x: Option<f64>,
    pub worst_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<AxiomCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AxiomCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AxiomCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Validates a spec. Structural problems show up as a failed `structure` check.
pub fn validate(spec: &ProtocolSpec) -> ValidationReport {
    match MajorityTypeFunction::from_spec_unchecked(spec.clone()) {
        Ok(f) => validate_function(&f),
        Err(e) => ValidationReport {
            checks: vec![AxiomCheck {
                name: format!("structure: {e}"),
                passed: false,
                worst_x: None,
                worst_value: f64::NAN,
            }],
        },
    }
}

/// 10^4 uniform points, {0, 1/2, 1}, and 20 log-spaced points near each end.
pub(crate) fn validation_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=10_000).map(|i| i as f64 / 10_000.0).collect();
    grid.push(0.5);
    for j in 0..20 {
        let e = 10f64.powf(-2.0 - 0.5 * j as f64);
        grid.push(e);
        grid.push(1.0 - e);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

pub fn validate_function(f: &MajorityTypeFunction) -> ValidationReport {
    let grid = validation_grid();
    let values: Vec<f64> = grid.iter().map(|&x| f.eval_raw(x)).collect();
    let mut checks = Vec::new();

    let fixed = [(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]
        .into_iter()
        .map(|(x, y)| (x, (f.eval_raw(x) - y).abs()))
        .fold((None, 0.0), worst);
    checks.push(check("fixed_points", fixed, |v| v <= FIXED_POINT_TOL));

    let sym = grid
        .iter()
        .map(|&x| (x, (1.0 - f.eval_raw(1.0 - x) - f.eval_raw(x)).abs()))
        .fold((None, 0.0), worst);
    checks.push(check("symmetry", sym, |v| v <= SYMMETRY_TOL));

    // largest decrease between neighbours
    let mono = grid
        .windows(2)
        .zip(values.windows(2))
        .map(|(xs, ys)| (xs[1], ys[0] - ys[1]))
        .fold((None, f64::NEG_INFINITY), worst);
    checks.push(check("monotone", mono, |v| v <= MONOTONE_TOL));

    // second differences on the uniform part of [0, 1/2]
    let h = 1e-4;
    let conv = (1..5_000)
        .map(|i| {
            let x = i as f64 * h;
            (x, -(f.eval_raw(x - h) - 2.0 * f.eval_raw(x) + f.eval_raw(x + h)))
        })
        .fold((None, f64::NEG_INFINITY), worst);
    checks.push(check("convex", conv, |v| v <= CONVEX_TOL));

    let p = f.params();
    checks.push(AxiomCheck {
        name: "m >= 2".into(),
        passed: p.m >= 2,
        worst_x: None,
        worst_value: f64::from(p.m),
    });

    // f(x)/x^m -> beta with drift shrinking like O(x)
    let lead: Vec<f64> = PROBE
        .iter()
        .map(|&x| {
            let xm = x.powi(p.m as i32);
            let r = if xm > 1e-290 { f.eval_raw(x) / xm } else { f.scaled_low(x) };
            (r / p.beta - 1.0).abs()
        })
        .collect();
    checks.push(AxiomCheck {
        name: "leading_coefficient".into(),
        passed: p.beta > 0.0 && shrinks(&lead),
        worst_x: Some(PROBE[2]),
        worst_value: lead[2],
    });

    let slope: Vec<f64> = PROBE
        .iter()
        .map(|&x| ((f.eval_raw(0.5 + x) - 0.5) / x / p.gamma - 1.0).abs())
        .collect();
    checks.push(AxiomCheck {
        name: "slope".into(),
        passed: p.gamma > 1.0 && shrinks(&slope),
        worst_x: Some(PROBE[2]),
        worst_value: slope[2],
    });

    ValidationReport { checks }
}

/// Each successive relative drift is at most 15% of the previous one, up to
/// rounding. Probes shrink by 10x, so O(x) drift passes.
fn shrinks(drift: &[f64]) -> bool {
    drift.windows(2).all(|w| w[1] <= 0.15 * w[0] + 1e-9)
}

fn worst(acc: (Option<f64>, f64), (x, v): (f64, f64)) -> (Option<f64>, f64) {
    if acc.0.is_none() || v > acc.1 {
        (Some(x), v)
    } else {
        acc
    }
}

fn check(name: &str, (x, v): (Option<f64>, f64), ok: impl Fn(f64) -> bool) -> AxiomCheck {
    AxiomCheck { name: name.into(), passed: ok(v), worst_x: x, worst_value: v }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_pass_everything() {
        for spec in crate::update_fn::reference_protocols() {
            let report = validate(&spec);
            assert!(report.all_passed(), "{spec}: {:?}", report.failures().collect::<Vec<_>>());
        }
        for k in [3, 5, 9, 21, 101] {
            assert!(validate(&ProtocolSpec::kmaj(k)).all_passed());
        }
    }

    #[test]
    fn voter_model_fails_order() {
        let report = validate(&ProtocolSpec::CustomPolynomial { coeffs: vec![0.0, 1.0] });
        assert!(!report.check("m >= 2").unwrap().passed);
    }

    #[test]
    fn non_monotone_polynomial_is_caught() {
        // keeps the three fixed points but dips in the middle
        let coeffs = vec![0.0, 7.0, -18.0, 12.0];
        let f = |x: f64| 7.0 * x - 18.0 * x * x + 12.0 * x * x * x;
        assert!(f(0.3) > f(0.4));
        let report = validate(&ProtocolSpec::CustomPolynomial { coeffs });
        let mono = report.check("monotone").unwrap();
        assert!(!mono.passed);
        assert!(mono.worst_x.unwrap() > 0.0 && mono.worst_x.unwrap() < 1.0);
    }

    #[test]
    fn structural_error_is_reported() {
        let spec = ProtocolSpec::KMaj { k: 1 };
        let report = validate(&spec);
        assert!(!report.all_passed());
        assert!(report.checks[0].name.starts_with("structure"));
    }

    #[test]
    fn grid_shape() {
        let g = validation_grid();
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(g.contains(&0.5));
        assert!(g.iter().any(|&x| x > 0.0 && x < 1e-10));
    }
}
