//! Treatment effect estimators built on per-unit counterfactual forecasts.
//!
//! All estimators share the same per-unit step: locate the pre-treatment
//! window ending at `tau_i`, forecast `y_{tau_i + h}` from it, and record the
//! gap `u_i = y_{tau_i + h} - forecast`. Units that cannot be forecast are
//! dropped and listed; the averages divide by the number of units used.

mod balanced;
mod covariates;
mod dfat;
mod model_based;
mod variance;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::basis::{forecast_weights, BasisSpec, ForecastConfig, ForecastWeights, GapPolicy, WindowSpec};
use crate::error::{Error, Result};
use crate::panel::{PanelData, UnitSeries};

pub use balanced::{fat_balanced_avg, fat_pooled};
pub use covariates::covariate_fat_heterogeneous;
pub use dfat::{dfat, dfat_with, DfatEstimate};
pub use model_based::{anderson_hsiao, model_based_fat, model_based_fat_with_stage, AhEstimate, AhSpec, FirstStage, MbConfig};
pub use variance::{fat_variance, mb_variance, normal_critical_value, VarianceEstimate};

pub const DEFAULT_LEVEL: f64 = 0.95;

/// Forecasted individual effect of one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitResidual {
    pub unit_id: String,
    pub observed: f64,
    pub forecast: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedUnit {
    pub unit_id: String,
    pub reason: String,
}

/// A FAT point estimate with its standard error and confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FatEstimate {
    pub horizon: u32,
    pub point: f64,
    /// `None` when fewer than two units were used.
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub level: f64,
    pub n_used: usize,
    pub residuals: Vec<UnitResidual>,
    pub dropped_units: Vec<DroppedUnit>,
}

impl FatEstimate {
    /// Point estimate as the mean of `residuals`, with the plain variance.
    pub(crate) fn from_residuals(horizon: u32, residuals: Vec<UnitResidual>, dropped: Vec<DroppedUnit>) -> Result<Self> {
        if residuals.is_empty() {
            return Err(Error::NoUsableUnits);
        }
        let values: Vec<f64> = residuals.iter().map(|r| r.residual).collect();
        let se = fat_variance(&values).ok().map(|v| v.se);
        Ok(Self::assemble(horizon, residuals, dropped, se))
    }

    pub(crate) fn assemble(horizon: u32, residuals: Vec<UnitResidual>, dropped: Vec<DroppedUnit>, se: Option<f64>) -> Self {
        let n = residuals.len();
        let point = residuals.iter().map(|r| r.residual).sum::<f64>() / n as f64;
        let mut out = Self {
            horizon,
            point,
            se,
            ci: None,
            level: DEFAULT_LEVEL,
            n_used: n,
            residuals,
            dropped_units: dropped,
        };
        out.ci = out.interval(DEFAULT_LEVEL);
        out
    }

    fn interval(&self, level: f64) -> Option<(f64, f64)> {
        self.se.map(|se| {
            let z = normal_critical_value(level);
            (self.point - z * se, self.point + z * se)
        })
    }

    /// Recompute the interval at another confidence level.
    pub fn with_level(mut self, level: f64) -> Self {
        self.level = level;
        self.ci = self.interval(level);
        self
    }

    pub fn covers(&self, value: f64) -> Option<bool> {
        self.ci.map(|(lo, hi)| lo <= value && value <= hi)
    }

    pub fn residual_values(&self) -> Vec<f64> {
        self.residuals.iter().map(|r| r.residual).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Group {
    Treated,
    Control,
}

impl Group {
    fn includes(self, u: &UnitSeries) -> bool {
        match self {
            Group::Treated => !u.is_control,
            Group::Control => u.is_control,
        }
    }
}

/// Where a unit's estimation window sits.
#[derive(Debug, Clone, Copy)]
pub(crate) struct UnitWindow {
    pub start: i64,
    pub len: usize,
    pub tau: i64,
}

impl UnitWindow {
    pub fn times(&self) -> Vec<i64> {
        (self.start..=self.tau).collect()
    }
}

/// Outcome of locating a unit's window: either usable, or a reason to drop it.
pub(crate) type Located = std::result::Result<UnitWindow, String>;

/// Find the window of `u` under `config`. Hard errors (gaps under the
/// default policy) are returned as `Err`; soft failures as `Ok(Err(reason))`.
pub(crate) fn locate_window(u: &UnitSeries, config: &ForecastConfig) -> Result<Located> {
    let q = config.basis.order;
    let Some(tau) = u.tau else {
        return Ok(Err("no treatment date".into()));
    };
    let requested = config.window.resolve(u, q);
    let run = u.contiguous_run_ending_at(tau);
    let len = if run >= requested {
        requested
    } else {
        match (&config.window, config.gap_policy) {
            (WindowSpec::All, _) | (_, GapPolicy::Shrink) => run,
            (_, GapPolicy::Error) => {
                let reason = if run == 0 {
                    format!("period {tau} is not observed")
                } else {
                    format!(
                        "estimation window {}..={} is not fully observed (only {run} consecutive periods)",
                        tau - requested as i64 + 1,
                        tau
                    )
                };
                return Err(Error::Window {
                    unit: u.unit_id.clone(),
                    reason,
                });
            }
        }
    };
    if len < q + 1 {
        return Ok(Err(format!("window of {len} periods cannot fit order {q}")));
    }
    Ok(Ok(UnitWindow {
        start: tau - len as i64 + 1,
        len,
        tau,
    }))
}

pub(crate) fn check_config(config: &ForecastConfig, h: u32) -> Result<()> {
    if h == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    if let WindowSpec::Fixed(r) = config.window {
        if r < config.basis.order + 1 {
            return Err(Error::InvalidConfig(format!(
                "window length {r} is below order + 1 = {}",
                config.basis.order + 1
            )));
        }
    }
    Ok(())
}

/// Memoised forecast weights. Shift-invariant bases share weights across
/// windows of equal length and equal target offset.
pub(crate) struct WeightBook<'a> {
    basis: &'a BasisSpec,
    cache: HashMap<(i64, usize, i64), Option<ForecastWeights>>,
}

impl<'a> WeightBook<'a> {
    pub fn new(basis: &'a BasisSpec) -> Self {
        Self {
            basis,
            cache: HashMap::new(),
        }
    }

    /// Weights for the window `start..start + len` and `target`, or `None` if the design is singular.
    pub fn get(&mut self, start: i64, len: usize, target: i64) -> Result<Option<&ForecastWeights>> {
        let key = if self.basis.is_shift_invariant() {
            (0, len, target - start)
        } else {
            (start, len, target)
        };
        if !self.cache.contains_key(&key) {
            let window: Vec<i64> = (key.0..key.0 + len as i64).collect();
            let w = match forecast_weights(self.basis, &window, key.2) {
                Ok(w) => Some(w),
                Err(Error::RankDeficient { .. }) => None,
                Err(e) => return Err(e),
            };
            self.cache.insert(key, w);
        }
        Ok(self.cache[&key].as_ref())
    }
}

pub(crate) fn fat_for_group(panel: &PanelData, config: &ForecastConfig, h: u32, group: Group) -> Result<FatEstimate> {
    check_config(config, h)?;
    let shifted;
    let panel = if config.anticipation.is_zero() {
        panel
    } else {
        shifted = panel.apply_anticipation(&config.anticipation)?;
        &shifted
    };
    let mut book = WeightBook::new(&config.basis);
    let mut residuals = Vec::new();
    let mut dropped = Vec::new();
    for u in panel.units().iter().filter(|u| group.includes(u)) {
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
        let Some(weights) = book.get(w.start, w.len, target)? else {
            drop("design matrix is rank deficient".into());
            continue;
        };
        let y = u.window(w.start, w.tau).expect("located window is observed");
        let forecast = weights.apply(y);
        residuals.push(UnitResidual {
            unit_id: u.unit_id.clone(),
            observed,
            forecast,
            residual: observed - forecast,
        });
    }
    FatEstimate::from_residuals(h, residuals, dropped)
}

/// FAT at horizon `h` over the treated units.
pub fn fat(panel: &PanelData, config: &ForecastConfig, h: u32) -> Result<FatEstimate> {
    fat_for_group(panel, config, h, Group::Treated)
}

/// FAT computed as if treatment had happened `lag` periods earlier.
///
/// With `lag = 0` this is exactly [`fat`] at horizon `h`.
pub fn placebo_fat(panel: &PanelData, config: &ForecastConfig, lag: u32, h: u32) -> Result<FatEstimate> {
    let shifted = panel.shift_tau(lag)?;
    fat(&shifted, config, h)
}
