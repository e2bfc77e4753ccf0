use std::fmt::Write;

use super::{GFunctionApprox, GaussianZ, PredictedRuntimeLaw};
use crate::update_fn::MajorityTypeFunction;

/// `points + 1` equally spaced values of `f` on `[0, 1]`, columns `x f`.
pub fn f_grid_text(f: &MajorityTypeFunction, points: usize) -> String {
    let mut out = String::from("x f\n");
    for i in 0..=points {
        let x = i as f64 / points as f64;
        writeln!(out, "{x} {}", f.eval(x)).unwrap();
    }
    out
}

/// Density of `-log_γ|Z|` on a window holding all but about `1e-7` of the
/// mass, columns `x density`.
pub fn z_density_text(z: &GaussianZ, gamma: f64, step: f64) -> String {
    // |Z| > γ^{-lo} and |Z| < γ^{-hi} both have negligible probability
    let far = z.mean.abs() + 9.0 * z.sd();
    let lo = (-far.ln() / gamma.ln()).floor();
    let mut hi = lo;
    while z.mass_within(gamma.powf(-hi)) > 1e-7 {
        hi += 1.0;
    }
    let mut out = String::from("x density\n");
    let count = ((hi - lo) / step).ceil() as usize;
    for i in 0..=count {
        let v = lo + i as f64 * step;
        writeln!(out, "{v} {}", z.log_abs_density(v, gamma)).unwrap();
    }
    out
}

/// `(x, g(x) - g(0))` on `[0, 3]` at the tabulation spacing.
pub fn g_plot_text(g: &GFunctionApprox) -> String {
    let n = g.grid.len();
    let g0 = g.g0();
    let mut out = String::from("x g_minus_g0\n");
    for i in 0..=3 * n {
        let x = i as f64 / n as f64;
        writeln!(out, "{x} {:e}", g.eval(x) - g0).unwrap();
    }
    out
}

/// `s,P_R_geq_s` for `s` in `from..=to`.
pub fn runtime_cdf_csv(law: &PredictedRuntimeLaw, from: i64, to: i64) -> String {
    let mut out = String::from("s,P_R_geq_s\n");
    for s in from..=to {
        writeln!(out, "{s},{}", law.survival(s)).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_grid_is_the_cubic() {
        let f = MajorityTypeFunction::kmaj(3).unwrap();
        let text = f_grid_text(&f, 1000);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x f"));
        for line in lines {
            let v: Vec<f64> = line.split(' ').map(|t| t.parse().unwrap()).collect();
            assert!((v[1] - (3.0 * v[0] * v[0] - 2.0 * v[0].powi(3))).abs() < 1e-12);
        }
    }

    #[test]
    fn z_density_integrates_to_one() {
        let z = GaussianZ::new(0.0, 1.5).unwrap();
        let text = z_density_text(&z, 1.5, 0.01);
        let pts: Vec<(f64, f64)> = text
            .lines()
            .skip(1)
            .map(|l| {
                let (a, b) = l.split_once(' ').unwrap();
                (a.parse().unwrap(), b.parse().unwrap())
            })
            .collect();
        let area: f64 = pts.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
        assert!((area - 1.0).abs() < 1e-4, "area {area}");
    }
}
