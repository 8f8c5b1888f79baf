//! Statistical properties of the simulated processes and of the estimators
//! applied to them.

use fte_core::simulate::{analytic_mean_recursion, simulate_dgp, DgpSpec, InitMode, Law, TrendMode};
use fte_core::{anderson_hsiao, covariate_fat_heterogeneous, dfat, fat, AhSpec, ForecastConfig, PanelData, UnitSeries};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Cross-sectional mean and standard error of the outcome at each period.
fn period_means(panel: &PanelData) -> Vec<(f64, f64)> {
    let t = panel.units()[0].len();
    (0..t)
        .map(|k| {
            let col: Vec<f64> = panel.units().iter().map(|u| u.outcomes[k]).collect();
            let (m, sd) = mean_sd(&col);
            (m, sd / (col.len() as f64).sqrt())
        })
        .collect()
}

#[test]
fn stationary_mean_is_constant_over_time() {
    let spec = DgpSpec {
        n: 20_000,
        mu: Law::fixed(0.5),
        ..DgpSpec::stationary_ar1()
    };
    let target = 0.5 / (1.0 - 0.2);
    for (m, se) in period_means(&simulate_dgp(&spec, 11).unwrap()) {
        assert!((m - target).abs() < 4.0 * se, "{m} vs {target}");
    }
}

#[test]
fn random_walk_increments_have_mean_zero_and_unit_variance() {
    let spec = DgpSpec {
        n: 20_000,
        stationary: false,
        random_walk: true,
        ..DgpSpec::stationary_ar1()
    };
    let panel = simulate_dgp(&spec, 12).unwrap();
    let diffs: Vec<f64> = panel
        .units()
        .iter()
        .flat_map(|u| u.outcomes.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
        .collect();
    let (m, sd) = mean_sd(&diffs);
    assert!(m.abs() < 4.0 / (diffs.len() as f64).sqrt());
    assert!((sd - 1.0).abs() < 0.02);
}

#[test]
fn recursive_trend_mean_follows_analytic_path() {
    let (rho, y0_mean) = (0.6, 1.0);
    let spec = DgpSpec {
        n: 20_000,
        trend: true,
        rho: Law::fixed(rho),
        mu: Law::fixed(0.0),
        trend_mode: TrendMode::Recursive,
        init_mode: InitMode::Fixed { mean: y0_mean, var: 2.0 },
        observe_initial: true,
        ..DgpSpec::stationary_ar1()
    };
    let oracle = analytic_mean_recursion(rho, 1.0, y0_mean, spec.periods);
    let means = period_means(&simulate_dgp(&spec, 13).unwrap());
    assert_eq!(means.len(), oracle.len());
    for ((m, se), e) in means.iter().zip(&oracle) {
        assert!((m - e).abs() < 4.0 * se, "{m} vs {e}");
    }
}

#[test]
fn anderson_hsiao_error_shrinks_with_n() {
    let rmse = |n: usize| {
        let errs: Vec<f64> = (0..30)
            .map(|seed| {
                let spec = DgpSpec {
                    n,
                    periods: 10,
                    tau: 9,
                    rho: Law::fixed(0.5),
                    ..DgpSpec::stationary_ar1()
                };
                let panel = simulate_dgp(&spec, 100 + seed).unwrap();
                let est = anderson_hsiao(&panel, &AhSpec::new(2, false)).unwrap();
                (est.beta[0] - 0.5).powi(2)
            })
            .collect();
        (errs.iter().sum::<f64>() / errs.len() as f64).sqrt()
    };
    let (small, large) = (rmse(200), rmse(2000));
    assert!(large < small, "rmse {large} at n=2000 vs {small} at n=200");
    assert!(large < 0.1, "rmse {large}");
}

#[test]
fn covariate_fat_is_unbiased_under_covariate_dgp() {
    // y_it = c_i + 2 x_it + e_it, no treatment effect.
    let (n, periods, tau, reps) = (200, 6i64, 5i64, 200u64);
    let points: Vec<f64> = (0..reps)
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(7_000 + rep);
            let units = (0..n)
                .map(|i| {
                    let c: f64 = StandardNormal.sample(&mut rng);
                    let x: Vec<f64> = (0..periods).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let y: Vec<f64> = x
                        .iter()
                        .map(|x| {
                            let e: f64 = StandardNormal.sample(&mut rng);
                            c + 2.0 * x + e
                        })
                        .collect();
                    UnitSeries::new(format!("u{i}"), (1..=periods).collect(), y, Some(tau))
                        .with_covariates(x.into_iter().map(|v| vec![v]).collect())
                })
                .collect();
            let panel = PanelData::new(units, vec!["x".into()]).unwrap();
            covariate_fat_heterogeneous(&panel, &ForecastConfig::polynomial(0, 5), 1, &["x".to_string()])
                .unwrap()
                .point
        })
        .collect();
    let (bias, mc_se) = mean_sd(&points);
    assert!(bias.abs() <= 3.0 * mc_se, "bias {bias}, mc_se {mc_se}");
}

#[test]
fn dfat_without_shock_agrees_with_fat_on_average() {
    let spec = DgpSpec {
        n: 500,
        n_control: 500,
        ..DgpSpec::stationary_ar1()
    };
    let cfg = ForecastConfig::polynomial(0, 5);
    let diffs: Vec<f64> = (0..100)
        .map(|seed| {
            let panel = simulate_dgp(&spec, 500 + seed).unwrap();
            dfat(&panel, &cfg, 1).unwrap().point - fat(&panel, &cfg, 1).unwrap().point
        })
        .collect();
    let (m, sd) = mean_sd(&diffs);
    assert!(m.abs() <= 3.0 * sd / (diffs.len() as f64).sqrt(), "mean diff {m}, sd {sd}");
}
