use consensus_lab::oracle::{self, ExactChain};
use consensus_lab::sim::{self, SimConfig};
use consensus_lab::stats::{sup_cdf_distance, EmpiricalDist, RunMeta, Survival};
use consensus_lab::update_fn::{reference_protocols, ProtocolSpec};

const RUNS: u64 = 100_000;

fn cell(spec: &ProtocolSpec, n: usize, x0: usize, seed: u64) {
    let chain = ExactChain::build(n, spec).unwrap();
    let exact = oracle::runtime_distribution_until(&chain, x0, 1e-12, 100_000).unwrap();
    let (p_x, p_y) = oracle::winner_probability_exact(&chain, x0).unwrap();
    let (lin_x, _) = oracle::winner_probability_linear(&chain, x0).unwrap();
    assert!((p_x - lin_x).abs() < 1e-9, "{spec}: propagation {p_x} vs solve {lin_x}");
    assert!((p_x + p_y - 1.0).abs() < 1e-10);

    let config = SimConfig::new(n as u64, x0 as u64, spec.clone()).unwrap();
    let outcomes = sim::batch(&config, RUNS, seed).unwrap();
    let emp = EmpiricalDist::from_outcomes(&outcomes, RunMeta::default()).unwrap();

    let se = |p: f64| (p * (1.0 - p) / RUNS as f64).sqrt();
    let freq = emp.win_frequency();
    assert!((freq - p_x).abs() <= 3.0 * se(p_x), "{spec} n={n} x0={x0}: wins {freq} vs {p_x}");
    // E[R] = Σ P(R ≥ s) and E[R²] = Σ (2s - 1) P(R ≥ s)
    let (mut mean, mut second) = (0.0, 0.0);
    for s in 1..exact.survival.len() as i64 {
        mean += exact.at(s);
        second += (2 * s - 1) as f64 * exact.at(s);
    }
    let mean_se = ((second - mean * mean) / RUNS as f64).sqrt();
    let observed = emp.mean_runtime();
    assert!((observed - mean).abs() <= 3.0 * mean_se, "{spec} n={n} x0={x0}: mean {observed} vs {mean}");
    assert!(sup_cdf_distance(&emp, &exact) < 0.02);
}

#[test]
fn three_majority_small_cells() {
    let spec = ProtocolSpec::kmaj(3);
    cell(&spec, 100, 60, 1);
    cell(&spec, 100, 50, 2);
    cell(&spec, 20, 13, 3);
}

#[test]
fn every_builtin_at_n_64() {
    for (i, spec) in reference_protocols().iter().enumerate() {
        cell(spec, 64, 36, 100 + i as u64);
    }
}

#[test]
fn two_vertices_are_geometric() {
    let chain = ExactChain::build(2, &ProtocolSpec::kmaj(3)).unwrap();
    let exact = oracle::runtime_distribution(&chain, 1, 10).unwrap();
    for s in 1..=10 {
        assert!((exact.at(s) - 0.5f64.powi(s as i32 - 1)).abs() < 1e-15);
    }
    let config = SimConfig::new(2, 1, ProtocolSpec::kmaj(3)).unwrap();
    let outcomes = sim::batch(&config, 40_000, 4).unwrap();
    let emp = EmpiricalDist::from_outcomes(&outcomes, RunMeta::default()).unwrap();
    assert!((emp.survival(3) - 0.25).abs() < 3.0 * (0.25f64 * 0.75 / 40_000.0).sqrt());
}
