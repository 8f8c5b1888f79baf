//! Equivalent FAT formulations for balanced panels with a common adoption date.

use nalgebra::{DMatrix, DVector};

use crate::basis::{forecast_weights, internal_rows, ForecastConfig, LeastSquares, WindowSpec};
use crate::error::{Error, Result};
use crate::panel::{PanelData, UnitSeries};

use super::check_config;

struct BalancedLayout<'a> {
    units: Vec<&'a UnitSeries>,
    tau: i64,
    start: i64,
    len: usize,
}

fn layout<'a>(panel: &'a PanelData, config: &ForecastConfig, h: u32) -> Result<BalancedLayout<'a>> {
    check_config(config, h)?;
    if !config.anticipation.is_zero() {
        return Err(Error::InvalidConfig("balanced formulations do not support anticipation".into()));
    }
    let WindowSpec::Fixed(len) = config.window else {
        return Err(Error::InvalidConfig("balanced formulations need a fixed window length".into()));
    };
    let units: Vec<&UnitSeries> = panel.treated().collect();
    let first = units.first().ok_or(Error::NoUsableUnits)?;
    let tau = first
        .tau
        .ok_or_else(|| Error::Unbalanced(format!("unit {} has no treatment date", first.unit_id)))?;
    let start = tau - len as i64 + 1;
    let end = tau + h as i64;
    for u in &units {
        if u.tau != Some(tau) {
            return Err(Error::Unbalanced("treatment dates differ across units".into()));
        }
        if u.window(start, end).is_none() {
            return Err(Error::Unbalanced(format!(
                "unit {} is not observed over {start}..={end}",
                u.unit_id
            )));
        }
    }
    Ok(BalancedLayout { units, tau, start, len })
}

/// FAT from forecasting the cross-sectional mean of the treated outcomes.
pub fn fat_balanced_avg(panel: &PanelData, config: &ForecastConfig, h: u32) -> Result<f64> {
    let l = layout(panel, config, h)?;
    let n = l.units.len() as f64;
    let mean = |t: i64| l.units.iter().map(|u| u.value_at(t).expect("checked")).sum::<f64>() / n;
    let window: Vec<i64> = (l.start..=l.tau).collect();
    let ybar: Vec<f64> = window.iter().map(|&t| mean(t)).collect();
    let target = l.tau + h as i64;
    let w = forecast_weights(&config.basis, &window, target)?;
    Ok(mean(target) - w.apply(&ybar))
}

/// Coefficients on the post-period dummies `1{t = tau + k}`, `k = 1..=h`, from
/// a pooled regression that also carries unit-specific basis trends over
/// `tau - R + 1..=tau + h`.
pub fn fat_pooled(panel: &PanelData, config: &ForecastConfig, h: u32) -> Result<Vec<f64>> {
    let l = layout(panel, config, h)?;
    config.basis.check()?;
    let h = h as usize;
    let p = config.basis.n_functions();
    let window: Vec<i64> = (l.start..=l.tau).collect();
    let span: Vec<i64> = (l.start..=l.tau + h as i64).collect();
    let b = internal_rows(&config.basis, &window, &span)?;
    let rows_per_unit = span.len();
    let n = l.units.len();
    let mut x = DMatrix::zeros(n * rows_per_unit, h + n * p);
    let mut y = DVector::zeros(n * rows_per_unit);
    for (i, u) in l.units.iter().enumerate() {
        let ys = u.window(l.start, l.tau + h as i64).expect("checked");
        for (s, &t) in span.iter().enumerate() {
            let row = i * rows_per_unit + s;
            y[row] = ys[s];
            let k = t - l.tau;
            if k >= 1 {
                x[(row, k as usize - 1)] = 1.0;
            }
            for j in 0..p {
                x[(row, h + i * p + j)] = b[(s, j)];
            }
        }
    }
    debug_assert_eq!(l.len + h, rows_per_unit);
    let coef = LeastSquares::new(x)?.coefficients(&y);
    Ok(coef.rows(0, h).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::fat;
    use approx::assert_abs_diff_eq;

    fn panel() -> PanelData {
        let rows = [
            [0.4, 1.3, 0.7, 2.2, 1.9, 3.1, 2.0],
            [-0.3, 0.2, 0.9, 0.1, 0.6, 1.7, 0.8],
            [2.0, 2.5, 2.4, 3.3, 3.0, 4.9, 5.2],
        ];
        let units = rows
            .iter()
            .enumerate()
            .map(|(i, r)| UnitSeries::new(format!("u{i}"), (1..=7).collect(), r.to_vec(), Some(5)))
            .collect();
        PanelData::new(units, vec![]).unwrap()
    }

    #[test]
    fn three_formulations_agree() {
        let p = panel();
        for (q, r) in [(0, 1), (0, 3), (1, 2), (1, 5), (2, 4)] {
            for h in [1, 2] {
                let cfg = ForecastConfig::polynomial(q, r);
                let f = fat(&p, &cfg, h).unwrap().point;
                assert_abs_diff_eq!(fat_balanced_avg(&p, &cfg, h).unwrap(), f, epsilon = 1e-10);
                let pooled = fat_pooled(&p, &cfg, h).unwrap();
                assert_eq!(pooled.len(), h as usize);
                assert_abs_diff_eq!(pooled[h as usize - 1], f, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn rejects_unbalanced() {
        let a = UnitSeries::new("a", (1..=6).collect(), vec![1.0; 6], Some(5));
        let b = UnitSeries::new("b", (1..=6).collect(), vec![1.0; 6], Some(4));
        let p = PanelData::new(vec![a, b], vec![]).unwrap();
        let cfg = ForecastConfig::polynomial(0, 2);
        assert!(matches!(fat_balanced_avg(&p, &cfg, 1), Err(Error::Unbalanced(_))));
        assert!(matches!(fat_pooled(&p, &cfg, 1), Err(Error::Unbalanced(_))));
    }
}
