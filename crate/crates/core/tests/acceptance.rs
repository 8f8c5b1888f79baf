//! Acceptance suite. Each test prints one PASS/FAIL line per criterion and
//! then asserts it. The lines go straight to stdout, so they appear in plain
//! `cargo test` output as well.

use std::io::Write;
use std::time::Instant;

use fte_core::simulate::{preset, run_monte_carlo, EstimatorKind, EstimatorSpec, McCell, McReport};
use fte_core::{
    binomial_weights, fat, fat_balanced_avg, fat_pooled, fit_and_forecast, forecast_weights, iterative_forecast,
    BasisSpec, ForecastConfig, PanelData, UnitSeries,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_601;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("ACCEPTANCE {id:>2} {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    // Bypasses libtest's capture of `println!`.
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).and_then(|_| out.flush()).expect("stdout");
}

fn run_preset(name: &str, reps: usize) -> Vec<McReport> {
    let p = preset(name).unwrap();
    p.scenarios
        .iter()
        .map(|s| run_monte_carlo(&s.name, &s.spec, &p.grid, reps, SEED).unwrap())
        .collect()
}

fn pr_cell(r: &McReport, q: usize, w: usize) -> &McCell {
    r.cell("PR", q, w).unwrap()
}

#[test]
fn criterion_01_weight_algebra() {
    let start = Instant::now();
    let mut worst_sum: f64 = 0.0;
    let mut worst_binomial: f64 = 0.0;
    let mut worst_iterative: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for q in 0..=6usize {
        let basis = BasisSpec::polynomial(q);
        for r in q + 1..=q + 6 {
            let window: Vec<i64> = (1..=r as i64).collect();
            for h in 1..=3 {
                let w = forecast_weights(&basis, &window, r as i64 + h).unwrap();
                worst_sum = worst_sum.max((w.sum() - 1.0).abs());
            }
        }
        let window: Vec<i64> = (1..=q as i64 + 1).collect();
        let ols = forecast_weights(&basis, &window, q as i64 + 2).unwrap();
        let closed = binomial_weights(q);
        for (a, b) in ols.weights.iter().zip(&closed.weights) {
            worst_binomial = worst_binomial.max((a - b).abs());
        }
        for _ in 0..20 {
            let y: Vec<f64> = (0..=q).map(|_| rng.random_range(-5.0..5.0)).collect();
            let direct = fit_and_forecast(&basis, &window, &y, q as i64 + 2).unwrap();
            worst_iterative = worst_iterative.max((iterative_forecast(&y, q).unwrap() - direct).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_sum < 1e-12 && worst_binomial < 1e-8 && worst_iterative < 1e-8 && secs < 1.0;
    report(
        1,
        "weight algebra",
        pass,
        &format!(
            "max |sum w - 1| = {worst_sum:.2e}, binomial gap = {worst_binomial:.2e}, iterative gap = {worst_iterative:.2e}, {secs:.3} s"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_balanced_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=50usize);
        let periods = rng.random_range(2..=10i64);
        let tau = rng.random_range(1..periods);
        let h = rng.random_range(1..=(periods - tau)) as u32;
        let q = rng.random_range(0..tau.min(4)) as usize;
        let r = rng.random_range(q as i64 + 1..=tau) as usize;
        let units = (0..n)
            .map(|i| {
                let ys = (0..periods).map(|_| rng.random_range(-10.0..10.0)).collect();
                UnitSeries::new(format!("u{i}"), (1..=periods).collect(), ys, Some(tau))
            })
            .collect();
        let panel = PanelData::new(units, vec![]).unwrap();
        let cfg = ForecastConfig::polynomial(q, r);
        let f = fat(&panel, &cfg, h).unwrap().point;
        let avg = fat_balanced_avg(&panel, &cfg, h).unwrap();
        let pooled = fat_pooled(&panel, &cfg, h).unwrap()[h as usize - 1];
        worst = worst.max((f - avg).abs()).max((f - pooled).abs());
    }
    let pass = worst < 1e-8;
    report(2, "balanced-panel equivalence", pass, &format!("max gap over 100 panels = {worst:.2e}"));
    assert!(pass);
}

/// Printed standard deviations, indexed by q then by R - q - 1.
fn printed_se(panel: &str) -> [&'static [f64]; 3] {
    match panel {
        "table2_stationary" => [
            &[0.0397, 0.036, 0.0354, 0.0346, 0.0341],
            &[0.0709, 0.0565, 0.0476, 0.0448],
            &[0.1225, 0.0907, 0.0726],
        ],
        "table2_unit_root" => [
            &[0.0516, 0.0512, 0.0525, 0.0547, 0.0577],
            &[0.082, 0.0664, 0.0625, 0.0606],
            &[0.1454, 0.0997, 0.0868],
        ],
        "table2_trend" => [
            &[0.0397, 0.036, 0.0354, 0.0346, 0.0341],
            &[0.068, 0.0536, 0.0466, 0.0442],
            &[0.1225, 0.0839, 0.0698],
        ],
        "table2_trend_unit_root" => [
            &[0.0516, 0.0512, 0.0525, 0.0547, 0.0577],
            &[0.0831, 0.0659, 0.0608, 0.0621],
            &[0.1447, 0.1024, 0.0873],
        ],
        _ => unreachable!(),
    }
}

#[test]
fn criterion_03_table2() {
    let reps = 1000;
    let start = Instant::now();
    let mut all_pass = true;
    for name in ["table2_stationary", "table2_unit_root", "table2_trend", "table2_trend_unit_root"] {
        let report_ = &run_preset(name, reps)[0];
        let trend = name.contains("trend");
        let printed = printed_se(name);
        let mut bias_fail = Vec::new();
        let mut se_fail = Vec::new();
        let mut worst_z: f64 = 0.0;
        let mut worst_rel: f64 = 0.0;
        for q in 0..=2usize {
            for (k, &se_paper) in printed[q].iter().enumerate() {
                let r = q + 1 + k;
                let c = pr_cell(report_, q, r);
                let rel = (c.mc_se / se_paper - 1.0).abs();
                worst_rel = worst_rel.max(rel);
                if rel > 0.2 {
                    se_fail.push(format!("q{q}R{r}: {:.4} vs {se_paper}", c.mc_se));
                }
                if trend && q == 0 {
                    let expected = 1.0 + (r as f64 - 1.0) / 2.0;
                    if (c.bias - expected).abs() > 0.05 {
                        bias_fail.push(format!("q0R{r}: {:.4} vs {expected}", c.bias));
                    }
                } else {
                    let z = c.bias.abs() / (c.mc_se / (reps as f64).sqrt());
                    worst_z = worst_z.max(z);
                    if z > 3.0 {
                        bias_fail.push(format!("q{q}R{r}: bias {:.4}, z = {z:.2}", c.bias));
                    }
                }
            }
        }
        let pass = bias_fail.is_empty() && se_fail.is_empty();
        all_pass &= pass;
        report(
            3,
            &format!("{name}"),
            pass,
            &format!(
                "max |bias| / (mc_se / sqrt(reps)) = {worst_z:.2}, max relative mc_se gap = {:.1}%{}{}",
                100.0 * worst_rel,
                if bias_fail.is_empty() { String::new() } else { format!(", bias failures {bias_fail:?}") },
                if se_fail.is_empty() { String::new() } else { format!(", se failures {se_fail:?}") },
            ),
        );
    }
    let secs = start.elapsed().as_secs_f64();
    let fast = secs < 300.0;
    report(3, "table 2 runtime", fast, &format!("{secs:.1} s for {reps} replications per panel"));
    assert!(all_pass && fast);
}

#[test]
fn criterion_04_table1() {
    let p = preset("table1").unwrap();
    let reps = 1000;
    let mut reports = Vec::new();
    for s in p.scenarios.iter().filter(|s| s.spec.n == 1000) {
        let rho = match s.spec.rho {
            fte_core::simulate::Law::Fixed { value } => value,
            _ => unreachable!(),
        };
        reports.push((rho, run_monte_carlo(&s.name, &s.spec, &p.grid, reps, SEED).unwrap()));
    }
    let get = |rho: f64| &reports.iter().find(|(r, _)| *r == rho).unwrap().1;
    let mut all_pass = true;
    for (rho, q, expected) in [(0.2, 0, 1.25), (0.9, 1, 0.597), (0.9, 2, -0.066)] {
        let c = pr_cell(get(rho), q, q + 1);
        let pass = (c.bias - expected).abs() <= 0.05;
        all_pass &= pass;
        report(4, &format!("table 1 PR rho={rho} q={q}"), pass, &format!("bias {:.4} vs {expected} (mc_se {:.4})", c.bias, c.mc_se));
    }
    for rho in [0.2, 0.9] {
        let c = get(rho).cell("MB", 1, 2).unwrap();
        let pass = c.bias.abs() <= 0.03 && !c.degenerate;
        all_pass &= pass;
        report(4, &format!("table 1 MB rho={rho} q=1"), pass, &format!("bias {:.4} (mc_se {:.4})", c.bias, c.mc_se));
    }
    let mut best = (0.0, String::new());
    for (rho, r) in &reports {
        for q in 0..=3 {
            let pr = pr_cell(r, q, q + 1).mc_se;
            let m = r.cell("MB missp.", q, q + 1).unwrap();
            let ratio = m.mc_se / pr;
            if ratio.is_finite() && ratio > best.0 {
                best = (ratio, format!("rho={rho} q={q}: {:.3} vs {:.4}", m.mc_se, pr));
            }
        }
    }
    let pass = best.0 >= 5.0;
    all_pass &= pass;
    report(4, "table 1 MB missp. dispersion", pass, &format!("largest ratio {:.1} at {}", best.0, best.1));
    assert!(all_pass);
}

/// |bias| in units of the Monte Carlo standard error of the mean, shown for information.
fn mean_z(c: &McCell) -> f64 {
    c.bias.abs() / (c.mc_se / (c.n_reps as f64).sqrt())
}

#[test]
fn criterion_05_table3() {
    let mut all_pass = true;
    for name in ["table3_top", "table3_bottom"] {
        let r = &run_preset(name, 1000)[0];
        let mut worst: (f64, String) = (0.0, String::new());
        let mut worst_z = 0.0f64;
        let mut pass = true;
        for c in r.cells.iter().filter(|c| c.estimator.q >= 1) {
            let ratio = c.bias.abs() / c.mc_se;
            pass &= ratio <= 3.0;
            worst_z = worst_z.max(mean_z(c));
            if ratio >= worst.0 {
                worst = (ratio, format!("q{}R{}", c.estimator.q, c.estimator.r));
            }
        }
        all_pass &= pass;
        report(
            5,
            name,
            pass,
            &format!(
                "max |bias| / mc_se = {:.3} at {}; info: max |bias| / (mc_se / sqrt(reps)) = {worst_z:.2}",
                worst.0, worst.1
            ),
        );
    }
    assert!(all_pass);
}

#[test]
fn criterion_06_quadratic_trend() {
    let r = &run_preset("quadratic_trend", 1000)[0];
    let mut pass = true;
    let mut detail = Vec::new();
    for c in &r.cells {
        let ratio = c.bias.abs() / c.mc_se;
        let ok = if c.estimator.q >= 2 { ratio <= 3.0 } else { ratio > 5.0 };
        pass &= ok;
        detail.push(format!(
            "q{}R{} bias {:.4} ({:.1} mc_se, z {:.1})",
            c.estimator.q,
            c.estimator.r,
            c.bias,
            ratio,
            mean_z(c)
        ));
    }
    report(6, "quadratic trend order boundary", pass, &detail.join(", "));
    assert!(pass);
}

#[test]
fn criterion_07_coverage() {
    let r = &run_preset("coverage", 2000)[0];
    let c = &r.cells[0];
    let cov = c.coverage.unwrap();
    let pass = (0.93..=0.97).contains(&cov);
    report(7, "95% CI coverage, att = 0.5, q=0 R=5", pass, &format!("coverage {:.2}% over {} replications", 100.0 * cov, c.n_reps));
    assert!(pass);
}

#[test]
fn criterion_08_variance_oracles() {
    let p = preset("table2_stationary").unwrap();
    let grid = vec![
        EstimatorSpec::pr(0, 1, 1),
        EstimatorSpec::pr(0, 5, 1),
        EstimatorSpec::pr(1, 3, 1),
        EstimatorSpec::new(
            "MB",
            EstimatorKind::Mb {
                instrument_lag: 2,
                detrend: false,
            },
            0,
            1,
            1,
        ),
    ];
    let r = run_monte_carlo("variance", &p.scenarios[0].spec, &grid, 1000, SEED).unwrap();
    let mut all_pass = true;
    for c in &r.cells {
        let tol = if c.estimator.label == "MB" { 0.15 } else { 0.10 };
        let rel = (c.mean_se.unwrap() / c.mc_se - 1.0).abs();
        let pass = rel <= tol;
        all_pass &= pass;
        report(
            8,
            &format!("{} q={} R={} se oracle", c.estimator.label, c.estimator.q, c.estimator.r),
            pass,
            &format!("mean se {:.4} vs MC sd {:.4} ({:.1}% off, tolerance {:.0}%)", c.mean_se.unwrap(), c.mc_se, 100.0 * rel, 100.0 * tol),
        );
    }
    assert!(all_pass);
}

#[test]
fn criterion_09_dfat_shock() {
    let r = &run_preset("dfat_shock", 1000)[0];
    let mut all_pass = true;
    for c in &r.cells {
        let (pass, detail) = if c.estimator.label == "DFAT" {
            let ratio = c.bias.abs() / c.mc_se;
            (ratio <= 3.0, format!("bias {:.4} ({ratio:.2} mc_se, z {:.2})", c.bias, mean_z(c)))
        } else {
            ((c.bias - 2.0).abs() <= 0.1, format!("bias {:.4} vs 2", c.bias))
        };
        all_pass &= pass;
        report(9, &format!("{} q={} R={}", c.estimator.label, c.estimator.q, c.estimator.r), pass, &detail);
    }
    assert!(all_pass);
}

#[test]
fn criterion_10_placebo() {
    let r = &run_preset("placebo", 2000)[0];
    let mut all_pass = true;
    for c in &r.cells {
        let cov = c.coverage.unwrap();
        let pass = (0.93..=0.97).contains(&cov) && c.truth == 0.0;
        all_pass &= pass;
        report(
            10,
            &format!("{} q={} R={}", c.estimator.label, c.estimator.q, c.estimator.r),
            pass,
            &format!("coverage of 0: {:.2}%", 100.0 * cov),
        );
    }
    assert!(all_pass);
}
