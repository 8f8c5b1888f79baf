//! Forecast weights and FAT against independent oracles, plus algebraic
//! properties checked on random inputs.

use approx::assert_abs_diff_eq;
use fte_core::{
    fat, fat_balanced_avg, fat_pooled, fit_and_forecast, forecast_weights, load_panel, write_panel, BasisSpec,
    ForecastConfig, PanelData, Schema, UnitSeries,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Weights from the normal equations in raw times, solved by Cholesky.
fn normal_equation_weights(q: usize, window: &[i64], target: i64) -> Vec<f64> {
    let t0 = window[0] as f64;
    let x = DMatrix::from_fn(window.len(), q + 1, |i, k| (window[i] as f64 - t0).powi(k as i32));
    let h = DVector::from_fn(q + 1, |k, _| (target as f64 - t0).powi(k as i32));
    let xtx = x.transpose() * &x;
    let z = xtx.cholesky().expect("positive definite").solve(&h);
    (x * z).iter().copied().collect()
}

#[test]
fn frozen_exact_weights() {
    // Exact rational values computed symbolically.
    let cases: &[(usize, usize, i64, &[f64])] = &[
        (1, 5, 1, &[-0.4, -0.1, 0.2, 0.5, 0.8]),
        (2, 4, 1, &[0.75, -1.25, -0.75, 2.25]),
        (2, 5, 2, &[1.4, -1.2, -1.8, -0.4, 3.0]),
        (1, 3, 3, &[-5.0 / 3.0, 1.0 / 3.0, 7.0 / 3.0]),
        (0, 4, 2, &[0.25; 4]),
        (3, 6, 1, &[-2.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0, -4.0 / 3.0, -4.0 / 3.0, 8.0 / 3.0]),
    ];
    for &(q, r, h, expected) in cases {
        let window: Vec<i64> = (1..=r as i64).collect();
        let w = forecast_weights(&BasisSpec::polynomial(q), &window, r as i64 + h).unwrap();
        for (a, b) in w.weights.iter().zip(expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}

fn unit(id: &str, ys: Vec<f64>, tau: i64) -> UnitSeries {
    UnitSeries::new(id, (1..=ys.len() as i64).collect(), ys, Some(tau))
}

proptest! {
    #[test]
    fn weights_match_normal_equations(q in 0usize..=4, extra in 0usize..=5, h in 1i64..=4, start in -50i64..50) {
        let r = q + 1 + extra;
        let window: Vec<i64> = (start..start + r as i64).collect();
        let target = start + r as i64 - 1 + h;
        let w = forecast_weights(&BasisSpec::polynomial(q), &window, target).unwrap();
        let oracle = normal_equation_weights(q, &window, target);
        for (a, b) in w.weights.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-7 * (1.0 + b.abs()), "{a} vs {b}");
        }
        prop_assert!((w.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_are_shift_invariant(q in 0usize..=5, extra in 0usize..=4, h in 1i64..=3, shift in -1000i64..1000) {
        let r = q + 1 + extra;
        let basis = BasisSpec::polynomial(q);
        let a: Vec<i64> = (1..=r as i64).collect();
        let b: Vec<i64> = a.iter().map(|t| t + shift).collect();
        let wa = forecast_weights(&basis, &a, r as i64 + h).unwrap();
        let wb = forecast_weights(&basis, &b, r as i64 + h + shift).unwrap();
        for (x, y) in wa.weights.iter().zip(&wb.weights) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn polynomials_of_order_q_are_forecast_exactly(
        q in 0usize..=4,
        extra in 0usize..=4,
        h in 1i64..=3,
        coef in prop::collection::vec(-3.0f64..3.0, 5),
    ) {
        let r = q + 1 + extra;
        let window: Vec<i64> = (1..=r as i64).collect();
        let poly = |t: i64| (0..=q).map(|k| coef[k] * (t as f64).powi(k as i32)).sum::<f64>();
        let y: Vec<f64> = window.iter().map(|&t| poly(t)).collect();
        let target = r as i64 + h;
        let f = fit_and_forecast(&BasisSpec::polynomial(q), &window, &y, target).unwrap();
        prop_assert!((f - poly(target)).abs() < 1e-8 * (1.0 + poly(target).abs()));
    }

    #[test]
    fn residuals_are_affine_equivariant(
        q in 0usize..=3,
        extra in 0usize..=2,
        ys in prop::collection::vec(-10.0f64..10.0, 8),
        c in -100.0f64..100.0,
        slope in -5.0f64..5.0,
    ) {
        let r = q + 1 + extra;
        let tau = 6;
        let cfg = ForecastConfig::polynomial(q, r);
        let base = fat(&PanelData::new(vec![unit("a", ys.clone(), tau)], vec![]).unwrap(), &cfg, 1).unwrap();
        let level: Vec<f64> = ys.iter().map(|y| y + c).collect();
        let shifted = fat(&PanelData::new(vec![unit("a", level, tau)], vec![]).unwrap(), &cfg, 1).unwrap();
        prop_assert!((base.point - shifted.point).abs() < 1e-9);
        if q >= 1 {
            let trend: Vec<f64> = ys.iter().enumerate().map(|(i, y)| y + slope * (i + 1) as f64).collect();
            let tilted = fat(&PanelData::new(vec![unit("a", trend, tau)], vec![]).unwrap(), &cfg, 1).unwrap();
            prop_assert!((base.point - tilted.point).abs() < 1e-9);
        }
    }

    #[test]
    fn balanced_formulations_agree(
        n in 1usize..8,
        q in 0usize..=2,
        extra in 0usize..=2,
        h in 1u32..=3,
        seed in prop::collection::vec(-5.0f64..5.0, 80),
    ) {
        let r = q + 1 + extra;
        let tau = r as i64 + 1;
        let periods = tau as usize + h as usize;
        let units = (0..n)
            .map(|i| unit(&format!("u{i}"), (0..periods).map(|t| seed[(i * periods + t) % seed.len()] + t as f64 * 0.1).collect(), tau))
            .collect();
        let p = PanelData::new(units, vec![]).unwrap();
        let cfg = ForecastConfig::polynomial(q, r);
        let f = fat(&p, &cfg, h).unwrap().point;
        prop_assert!((fat_balanced_avg(&p, &cfg, h).unwrap() - f).abs() < 1e-8);
        prop_assert!((fat_pooled(&p, &cfg, h).unwrap()[h as usize - 1] - f).abs() < 1e-8);
    }

    #[test]
    fn csv_round_trip(ys in prop::collection::vec(-1e6f64..1e6, 1..30), tau in 1i64..10) {
        let units: Vec<UnitSeries> = ys
            .chunks(3)
            .enumerate()
            .map(|(i, c)| UnitSeries::new(format!("u{i}"), (1..=c.len() as i64).collect(), c.to_vec(), Some(tau)))
            .collect();
        let p = PanelData::new(units, vec![]).unwrap();
        let mut buf = Vec::new();
        write_panel(&p, &mut buf).unwrap();
        let back = load_panel(buf.as_slice(), &Schema::default()).unwrap();
        prop_assert_eq!(back, p);
    }
}

#[test]
fn fat_matches_direct_per_unit_fits() {
    let units = vec![
        UnitSeries::new("a", (1..=7).collect(), vec![0.1, 0.5, 0.2, 0.9, 1.3, 1.0, 2.2], Some(5)),
        UnitSeries::new("b", (3..=9).collect(), vec![2.0, 1.0, 2.5, 3.0, 2.0, 4.0, 4.5], Some(6)),
        UnitSeries::new("c", (1..=8).collect(), vec![5.0, 4.0, 4.4, 3.9, 3.0, 3.1, 2.0, 9.0], Some(7)),
    ];
    let p = PanelData::new(units.clone(), vec![]).unwrap();
    let (q, r, h) = (1usize, 3usize, 1u32);
    let e = fat(&p, &ForecastConfig::polynomial(q, r), h).unwrap();
    let mut expected = 0.0;
    for u in &units {
        let tau = u.tau.unwrap();
        let window: Vec<i64> = (tau - r as i64 + 1..=tau).collect();
        let y = u.window(window[0], tau).unwrap();
        let oracle = normal_equation_weights(q, &window, tau + h as i64);
        let forecast: f64 = oracle.iter().zip(y).map(|(w, y)| w * y).sum();
        expected += u.value_at(tau + h as i64).unwrap() - forecast;
    }
    assert_abs_diff_eq!(e.point, expected / 3.0, epsilon = 1e-10);
}
