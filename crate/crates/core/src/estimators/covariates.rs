//! FAT with unit-specific covariate coefficients.

use nalgebra::{DMatrix, DVector};

use crate::basis::{internal_rows, ForecastConfig, LeastSquares};
use crate::error::{Error, Result};
use crate::panel::PanelData;

use super::{check_config, locate_window, DroppedUnit, FatEstimate, UnitResidual};

/// Per unit, regress outcomes on the basis and the named covariates over the
/// window, then forecast at `tau + h` with the covariates observed there.
///
/// A covariate that is identically zero over the window and at the target
/// carries no information and is left out of that unit's regression.
pub fn covariate_fat_heterogeneous(
    panel: &PanelData,
    config: &ForecastConfig,
    h: u32,
    covariates: &[String],
) -> Result<FatEstimate> {
    check_config(config, h)?;
    config.basis.check()?;
    let shifted;
    let panel = if config.anticipation.is_zero() {
        panel
    } else {
        shifted = panel.apply_anticipation(&config.anticipation)?;
        &shifted
    };
    let cols: Vec<usize> = covariates
        .iter()
        .map(|name| {
            panel
                .covariate_names()
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown covariate {name}")))
        })
        .collect::<Result<_>>()?;

    let mut residuals = Vec::new();
    let mut dropped = Vec::new();
    for u in panel.treated() {
        let mut drop = |reason: String| {
            dropped.push(DroppedUnit {
                unit_id: u.unit_id.clone(),
                reason,
            })
        };
        let w = match locate_window(u, config)? {
            Ok(w) => w,
            Err(reason) => {
                drop(reason);
                continue;
            }
        };
        let target = w.tau + h as i64;
        let Some(observed) = u.value_at(target) else {
            drop(format!("outcome at period {target} is not observed"));
            continue;
        };
        let mut times = w.times();
        times.push(target);
        // Rows: window periods, then the target.
        let mut cov = Vec::with_capacity(times.len());
        for &t in &times {
            match u.covariates_at(t).map(|row| cols.iter().map(|&c| row[c]).collect::<Vec<f64>>()) {
                Some(v) if v.iter().all(|x| x.is_finite()) => cov.push(v),
                _ => break,
            }
        }
        if cov.len() < times.len() {
            drop(format!("covariates at period {} are not observed", times[cov.len()]));
            continue;
        }
        let active: Vec<usize> = (0..cols.len()).filter(|&j| cov.iter().any(|r| r[j] != 0.0)).collect();
        let b = internal_rows(&config.basis, &times[..w.len], &times)?;
        let p = b.ncols();
        let full = DMatrix::from_fn(times.len(), p + active.len(), |i, j| {
            if j < p {
                b[(i, j)]
            } else {
                cov[i][active[j - p]]
            }
        });
        let x = full.rows(0, w.len).into_owned();
        let hrow = full.row(w.len).transpose();
        let ls = match LeastSquares::new(x) {
            Ok(ls) => ls,
            Err(Error::RankDeficient { .. }) => {
                drop("design with covariates is rank deficient".into());
                continue;
            }
            Err(e) => return Err(e),
        };
        let y = DVector::from_column_slice(u.window(w.start, w.tau).expect("located window is observed"));
        let forecast = hrow.dot(&ls.coefficients(&y));
        residuals.push(UnitResidual {
            unit_id: u.unit_id.clone(),
            observed,
            forecast,
            residual: observed - forecast,
        });
    }
    FatEstimate::from_residuals(h, residuals, dropped)
}
