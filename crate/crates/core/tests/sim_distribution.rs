use consensus_lab::sim::{self, agent_level_step_kmaj, run_rng, SimConfig, Simulator, Winner};
use consensus_lab::update_fn::{reference_protocols, MajorityTypeFunction, ProtocolSpec};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

const DRAWS: usize = 100_000;

/// Pearson statistic and degrees of freedom, pooling cells with expected
/// count below 5 into their neighbours.
fn chi_square(counts: &[u64], pmf: &[f64], total: usize) -> (f64, f64) {
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for (c, p) in counts.iter().zip(pmf) {
        obs += *c as f64;
        exp += p * total as f64;
        if exp >= 5.0 {
            cells.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if let Some(last) = cells.last_mut() {
        last.0 += obs;
        last.1 += exp;
    }
    let stat = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    (stat, (cells.len() - 1) as f64)
}

fn critical(df: f64) -> f64 {
    ChiSquared::new(df).unwrap().inverse_cdf(0.99)
}

fn binomial_pmf(n: u64, p: f64) -> Vec<f64> {
    let b = Binomial::new(p, n).unwrap();
    (0..=n).map(|j| b.pmf(j)).collect()
}

#[test]
fn step_matches_binomial_for_every_builtin() {
    let n = 1000;
    for (i, spec) in reference_protocols().into_iter().enumerate() {
        let f = MajorityTypeFunction::new(spec.clone()).unwrap();
        for x in [430u64, 515] {
            let sim = Simulator::new(SimConfig::new(n, x, spec.clone()).unwrap()).unwrap();
            let mut rng = run_rng(11 + i as u64, x);
            let mut counts = vec![0u64; n as usize + 1];
            for _ in 0..DRAWS {
                counts[sim.step(x, &mut rng) as usize] += 1;
            }
            let pmf = binomial_pmf(n, f.eval(x as f64 / n as f64));
            let (stat, df) = chi_square(&counts, &pmf, DRAWS);
            assert!(stat < critical(df), "{spec} at x = {x}: chi2 = {stat}, df = {df}");
        }
    }
}

#[test]
fn agent_level_kmaj_matches_count_level() {
    let n = 300;
    for k in [3u32, 4, 5] {
        let f = MajorityTypeFunction::kmaj(k).unwrap();
        let x = 140;
        let mut rng = run_rng(5, u64::from(k));
        let draws = 20_000;
        let mut counts = vec![0u64; n as usize + 1];
        for _ in 0..draws {
            counts[agent_level_step_kmaj(x, k, n, &mut rng) as usize] += 1;
        }
        let pmf = binomial_pmf(n, f.eval(x as f64 / n as f64));
        let (stat, df) = chi_square(&counts, &pmf, draws);
        assert!(stat < critical(df), "k = {k}: chi2 = {stat}, df = {df}");
    }
}

#[test]
fn mean_runtime_decreases_with_k() {
    let n = 1_000_000;
    let means: Vec<f64> = [3u32, 5, 7, 9]
        .iter()
        .map(|&k| {
            let config = SimConfig::from_d(n, 0.0, ProtocolSpec::kmaj(k)).unwrap();
            let runs = sim::batch(&config, 1000, 21).unwrap();
            assert!(runs.iter().all(|r| r.winner != Winner::Unresolved));
            runs.iter().map(|r| f64::from(r.runtime)).sum::<f64>() / runs.len() as f64
        })
        .collect();
    for w in means.windows(2) {
        assert!(w[1] <= w[0], "means {means:?}");
    }
}

#[test]
fn clt_moments_at_moderate_scale() {
    // n = 10^4, 2·10^4 runs: the standardised bias after 3 rounds has
    // variance (γ^6 - 1)/(4(γ² - 1)) = 2.078125 for γ = 3/2
    let n = 10_000u64;
    let config = SimConfig::new(n, n / 2, ProtocolSpec::kmaj(3)).unwrap();
    let sim = Simulator::new(config).unwrap();
    let runs = 20_000u64;
    let values: Vec<f64> = (0..runs)
        .map(|i| {
            let mut rng = run_rng(99, i);
            let mut x = n / 2;
            for _ in 0..3 {
                x = sim.step(x, &mut rng);
            }
            (x as f64 - n as f64 / 2.0) / (n as f64).sqrt()
        })
        .collect();
    let mean = values.iter().sum::<f64>() / runs as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (runs - 1) as f64;
    assert!((var / 2.078125 - 1.0).abs() < 0.05, "variance {var}");
    assert!(mean.abs() < 3.0 * (var / runs as f64).sqrt(), "mean {mean}");
}

#[test]
fn thread_count_does_not_change_results() {
    let config = SimConfig::from_d(50_000, 0.3, ProtocolSpec::kmaj(3)).unwrap();
    let a = sim::batch(&config, 64, 8).unwrap();
    let serial = Simulator::new(config.clone().with_seed(8)).unwrap();
    let b: Vec<_> = (0..64).map(|i| serial.run_indexed(i)).collect();
    let ser: Vec<_> = b.iter().map(|o| (o.runtime, o.winner)).collect();
    let par: Vec<_> = a.iter().map(|o| (o.runtime, o.winner)).collect();
    assert_eq!(par, ser);
}
