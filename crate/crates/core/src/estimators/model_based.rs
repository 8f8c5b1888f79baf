//! Model-based FAT with a common autoregressive and covariate component.
//!
//! Untreated outcomes follow `y_t = rho y_{t-1} + z_t' theta + a_i(t) + e_t`,
//! where `a_i` is a unit-specific basis trend. The common parameters are
//! estimated once for the panel; each unit's trend is then fitted to
//! `y_t - rho y_{t-1} - z_t' theta` over its window and the outcome is
//! forecast recursively.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::ForecastConfig;
use crate::error::{Error, Result};
use crate::panel::{PanelData, UnitSeries};

use super::{check_config, locate_window, mb_variance, DroppedUnit, FatEstimate, UnitResidual, UnitWindow, WeightBook};

/// Ratio of smallest to largest singular value below which the first stage is flagged as weak.
pub const WEAK_INSTRUMENT_TOL: f64 = 1e-8;

/// Settings for the Anderson–Hsiao first stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AhSpec {
    /// Lag of the outcome used as its instrument.
    pub instrument_lag: u32,
    /// Difference twice, removing unit-specific linear trends as well as levels.
    pub detrend: bool,
    pub lagged_outcome: bool,
    /// Covariate columns entering the model.
    #[serde(default)]
    pub covariates: Vec<String>,
}

impl AhSpec {
    pub fn new(instrument_lag: u32, detrend: bool) -> Self {
        Self {
            instrument_lag,
            detrend,
            lagged_outcome: true,
            covariates: Vec::new(),
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<String>) -> Self {
        self.covariates = covariates;
        self
    }

    fn diff_order(&self) -> i64 {
        if self.detrend {
            2
        } else {
            1
        }
    }
}

/// First-stage estimate with what is needed for the second-stage variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AhEstimate {
    /// `(rho, theta...)`, or only `theta` without a lagged outcome.
    pub beta: Vec<f64>,
    pub names: Vec<String>,
    /// Averaged moment Jacobian `A = (1/N) sum_i sum_t z_t x_t'`.
    pub jacobian: Vec<Vec<f64>>,
    pub unit_ids: Vec<String>,
    /// Influence values `psi_i = A^-1 m_i(beta)`, aligned with `unit_ids`.
    pub influence: Vec<Vec<f64>>,
    pub n_moments: usize,
    pub weak: bool,
}

impl AhEstimate {
    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }
}

/// How the common parameters are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FirstStage {
    AndersonHsiao { instrument_lag: u32, detrend: bool },
    /// Known parameters; the variance then ignores first-stage noise.
    UserSupplied { beta: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbConfig {
    #[serde(default)]
    pub covariates: Vec<String>,
    pub lagged_outcome: bool,
    pub first_stage: FirstStage,
    pub forecast: ForecastConfig,
}

impl MbConfig {
    pub fn anderson_hsiao(forecast: ForecastConfig, instrument_lag: u32, detrend: bool) -> Self {
        Self {
            covariates: Vec::new(),
            lagged_outcome: true,
            first_stage: FirstStage::AndersonHsiao { instrument_lag, detrend },
            forecast,
        }
    }

    pub fn user_supplied(forecast: ForecastConfig, beta: Vec<f64>) -> Self {
        Self {
            covariates: Vec::new(),
            lagged_outcome: true,
            first_stage: FirstStage::UserSupplied { beta },
            forecast,
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<String>) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn without_lagged_outcome(mut self) -> Self {
        self.lagged_outcome = false;
        self
    }
}

fn covariate_indices(panel: &PanelData, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|name| {
            panel
                .covariate_names()
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown covariate {name}")))
        })
        .collect()
}

fn parameter_names(lagged: bool, covariates: &[String]) -> Vec<String> {
    let mut names = Vec::new();
    if lagged {
        names.push("rho".to_string());
    }
    names.extend(covariates.iter().cloned());
    names
}

/// Covariate values `cols` at period `t`, if all are observed.
fn covariates_at(u: &UnitSeries, cols: &[usize], t: i64) -> Option<Vec<f64>> {
    if cols.is_empty() {
        return Some(Vec::new());
    }
    let row = u.covariates_at(t)?;
    let out: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// `d`-th difference of `f` at `t`.
fn difference<F: Fn(i64) -> Option<f64>>(f: F, t: i64, d: i64) -> Option<f64> {
    match d {
        1 => Some(f(t)? - f(t - 1)?),
        2 => Some(f(t)? - 2.0 * f(t - 1)? + f(t - 2)?),
        _ => unreachable!("difference order is 1 or 2"),
    }
}

/// Last period whose moments may enter the first stage.
fn first_stage_end(u: &UnitSeries) -> Option<i64> {
    match (u.tau, u.is_control) {
        (Some(tau), _) => Some(tau),
        (None, true) => u.times.last().copied(),
        (None, false) => None,
    }
}

/// Exactly identified IV estimate from the differenced model, pooling the
/// untreated periods of all units.
pub fn anderson_hsiao(panel: &PanelData, spec: &AhSpec) -> Result<AhEstimate> {
    let d = spec.diff_order();
    let lag = spec.instrument_lag as i64;
    if lag < 2 {
        return Err(Error::InvalidConfig(format!("instrument lag must be at least 2, got {lag}")));
    }
    let cols = covariate_indices(panel, &spec.covariates)?;
    let k = usize::from(spec.lagged_outcome) + cols.len();
    if k == 0 {
        return Err(Error::InvalidConfig("model has no common parameters".into()));
    }

    // Per unit: sum_t z x', sum_t z dy.
    let mut unit_ids = Vec::new();
    let mut zx_by_unit = Vec::new();
    let mut zy_by_unit = Vec::new();
    let mut n_moments = 0;
    for u in panel.units() {
        let Some(end) = first_stage_end(u) else {
            continue;
        };
        let mut zx = DMatrix::<f64>::zeros(k, k);
        let mut zy = DVector::<f64>::zeros(k);
        let mut used = 0;
        for &t in u.times.iter().take_while(|&&t| t <= end) {
            let y = |s: i64| u.value_at(s);
            let cols = &cols;
            let cov = |j: usize| move |s: i64| covariates_at(u, &cols[j..=j], s).map(|v| v[0]);
            let Some(dy) = difference(y, t, d) else { continue };
            let mut x = Vec::with_capacity(k);
            let mut z = Vec::with_capacity(k);
            if spec.lagged_outcome {
                let (Some(dl), Some(inst)) = (difference(y, t - 1, d), y(t - lag)) else {
                    continue;
                };
                x.push(dl);
                z.push(inst);
            }
            let mut complete = true;
            for j in 0..cols.len() {
                match (difference(cov(j), t, d), cov(j)(t - lag + 1)) {
                    (Some(dz), Some(inst)) => {
                        x.push(dz);
                        z.push(inst);
                    }
                    _ => complete = false,
                }
            }
            if !complete {
                continue;
            }
            let xv = DVector::from_vec(x);
            let zv = DVector::from_vec(z);
            zx += &zv * xv.transpose();
            zy += zv * dy;
            used += 1;
        }
        if used > 0 {
            unit_ids.push(u.unit_id.clone());
            zx_by_unit.push(zx);
            zy_by_unit.push(zy);
            n_moments += used;
        }
    }
    let n = unit_ids.len();
    if n == 0 {
        return Err(Error::FirstStage("no usable first-stage moments".into()));
    }

    let a = zx_by_unit.iter().fold(DMatrix::zeros(k, k), |acc, m| acc + m) / n as f64;
    let b = zy_by_unit.iter().fold(DVector::zeros(k), |acc, m| acc + m) / n as f64;
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if !(smin.is_finite() && smax.is_finite()) || smin == 0.0 {
        return Err(Error::FirstStage("first-stage moment matrix is singular".into()));
    }
    let weak = smin < WEAK_INSTRUMENT_TOL * smax;
    let lu = a.clone().lu();
    let beta = lu
        .solve(&b)
        .ok_or_else(|| Error::FirstStage("first-stage moment matrix is singular".into()))?;
    let influence = zx_by_unit
        .iter()
        .zip(&zy_by_unit)
        .map(|(zx, zy)| {
            let m = zy - zx * &beta;
            lu.solve(&m).expect("solved above").iter().copied().collect()
        })
        .collect();

    Ok(AhEstimate {
        beta: beta.iter().copied().collect(),
        names: parameter_names(spec.lagged_outcome, &spec.covariates),
        jacobian: a.row_iter().map(|r| r.iter().copied().collect()).collect(),
        unit_ids,
        influence,
        n_moments,
        weak,
    })
}

/// Window of the residualised series, which needs one extra lag of `y`.
fn mb_window(u: &UnitSeries, config: &ForecastConfig, lagged: bool) -> Result<std::result::Result<UnitWindow, String>> {
    let w = match locate_window(u, config)? {
        Ok(w) => w,
        Err(reason) => return Ok(Err(reason)),
    };
    if !lagged || u.value_at(w.start - 1).is_some() {
        return Ok(Ok(w));
    }
    let q = config.basis.order;
    let shrinkable = matches!(config.window, crate::basis::WindowSpec::All)
        || config.gap_policy == crate::basis::GapPolicy::Shrink;
    if shrinkable && w.len > q + 1 {
        return Ok(Ok(UnitWindow {
            start: w.start + 1,
            len: w.len - 1,
            tau: w.tau,
        }));
    }
    if shrinkable {
        return Ok(Err(format!("window of {} periods cannot fit order {q}", w.len - 1)));
    }
    Err(Error::Window {
        unit: u.unit_id.clone(),
        reason: format!("lagged outcome at period {} is not observed", w.start - 1),
    })
}

struct UnitForecast {
    forecast: f64,
    gradient: Vec<f64>,
}

fn forecast_unit(
    u: &UnitSeries,
    w: UnitWindow,
    h: u32,
    beta: &[f64],
    lagged: bool,
    cols: &[usize],
    book: &mut WeightBook,
) -> Result<std::result::Result<UnitForecast, String>> {
    let (rho, theta) = if lagged { (beta[0], &beta[1..]) } else { (0.0, beta) };
    let k = beta.len();
    let times = w.times();
    let y = u.window(w.start, w.tau).expect("located window is observed");
    let mut y_lag = Vec::with_capacity(w.len);
    let mut z = Vec::with_capacity(w.len);
    for &t in &times {
        y_lag.push(if lagged { u.value_at(t - 1).expect("checked") } else { 0.0 });
        match covariates_at(u, cols, t) {
            Some(v) => z.push(v),
            None => return Ok(Err(format!("covariates at period {t} are not observed"))),
        }
    }
    let resid: Vec<f64> = (0..w.len)
        .map(|s| y[s] - rho * y_lag[s] - z[s].iter().zip(theta).map(|(a, b)| a * b).sum::<f64>())
        .collect();

    let mut level = y[w.len - 1];
    let mut grad = vec![0.0; k];
    for step in 1..=h as i64 {
        let target = w.tau + step;
        let Some(z_next) = covariates_at(u, cols, target) else {
            return Ok(Err(format!("covariates at period {target} are not observed")));
        };
        let Some(weights) = book.get(w.start, w.len, target)? else {
            return Ok(Err("design matrix is rank deficient".into()));
        };
        let trend = weights.apply(&resid);
        let mut next_grad = vec![0.0; k];
        let mut offset = 0;
        if lagged {
            next_grad[0] = level + rho * grad[0] - weights.apply(&y_lag);
            offset = 1;
        }
        for j in 0..cols.len() {
            let zj: Vec<f64> = z.iter().map(|r| r[j]).collect();
            next_grad[offset + j] = z_next[j] + rho * grad[offset + j] - weights.apply(&zj);
        }
        level = rho * level + z_next.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + trend;
        grad = next_grad;
    }
    Ok(Ok(UnitForecast {
        forecast: level,
        gradient: grad,
    }))
}

/// FAT with forecasts from the model with estimated common parameters.
pub fn model_based_fat(panel: &PanelData, mb: &MbConfig, h: u32) -> Result<FatEstimate> {
    model_based_fat_with_stage(panel, mb, h).map(|(e, _)| e)
}

/// As [`model_based_fat`], also returning the first-stage estimate when one was computed.
pub fn model_based_fat_with_stage(
    panel: &PanelData,
    mb: &MbConfig,
    h: u32,
) -> Result<(FatEstimate, Option<AhEstimate>)> {
    let config = &mb.forecast;
    check_config(config, h)?;
    let shifted;
    let panel = if config.anticipation.is_zero() {
        panel
    } else {
        shifted = panel.apply_anticipation(&config.anticipation)?;
        &shifted
    };
    let cols = covariate_indices(panel, &mb.covariates)?;
    let k = usize::from(mb.lagged_outcome) + cols.len();
    let stage = match &mb.first_stage {
        FirstStage::AndersonHsiao { instrument_lag, detrend } => {
            let spec = AhSpec {
                instrument_lag: *instrument_lag,
                detrend: *detrend,
                lagged_outcome: mb.lagged_outcome,
                covariates: mb.covariates.clone(),
            };
            Some(anderson_hsiao(panel, &spec)?)
        }
        FirstStage::UserSupplied { beta } => {
            if beta.len() != k {
                return Err(Error::InvalidConfig(format!(
                    "expected {k} common parameters, got {}",
                    beta.len()
                )));
            }
            None
        }
    };
    let beta: Vec<f64> = match (&stage, &mb.first_stage) {
        (Some(s), _) => s.beta.clone(),
        (None, FirstStage::UserSupplied { beta }) => beta.clone(),
        _ => unreachable!(),
    };

    let mut book = WeightBook::new(&config.basis);
    let mut residuals = Vec::new();
    let mut gradients = Vec::new();
    let mut dropped = Vec::new();
    for u in panel.treated() {
        let mut drop = |reason: String| {
            dropped.push(DroppedUnit {
                unit_id: u.unit_id.clone(),
                reason,
            })
        };
        let w = match mb_window(u, config, mb.lagged_outcome)? {
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
        let f = match forecast_unit(u, w, h, &beta, mb.lagged_outcome, &cols, &mut book)? {
            Ok(f) => f,
            Err(reason) => {
                drop(reason);
                continue;
            }
        };
        residuals.push(UnitResidual {
            unit_id: u.unit_id.clone(),
            observed,
            forecast: f.forecast,
            residual: observed - f.forecast,
        });
        gradients.push(f.gradient);
    }
    if residuals.is_empty() {
        return Err(Error::NoUsableUnits);
    }
    let Some(stage) = stage else {
        return Ok((FatEstimate::from_residuals(h, residuals, dropped)?, None));
    };

    let n = residuals.len();
    let mean_grad: Vec<f64> = (0..k)
        .map(|j| gradients.iter().map(|g| g[j]).sum::<f64>() / n as f64)
        .collect();
    let u: Vec<f64> = residuals.iter().map(|r| r.residual).collect();
    let same_units = stage.unit_ids.len() == n
        && stage.unit_ids.iter().zip(&residuals).all(|(a, r)| *a == r.unit_id);
    let se = if n < 2 {
        None
    } else if same_units {
        Some(mb_variance(&u, &mean_grad, &stage.influence)?.se)
    } else {
        Some(split_sample_se(&residuals, &mean_grad, &stage))
    };
    Ok((FatEstimate::assemble(h, residuals, dropped, se), Some(stage)))
}

/// Standard error when the first stage and the average run over different
/// unit sets: `sum_i a_i^2` with `a_i = (u_i - mean) / n_f - G' psi_i / n_s`.
fn split_sample_se(residuals: &[UnitResidual], mean_grad: &[f64], stage: &AhEstimate) -> f64 {
    use std::collections::BTreeMap;
    let n_f = residuals.len() as f64;
    let n_s = stage.n_units() as f64;
    let mean = residuals.iter().map(|r| r.residual).sum::<f64>() / n_f;
    let mut terms: BTreeMap<&str, f64> = BTreeMap::new();
    for r in residuals {
        *terms.entry(&r.unit_id).or_default() += (r.residual - mean) / n_f;
    }
    for (id, psi) in stage.unit_ids.iter().zip(&stage.influence) {
        let g: f64 = mean_grad.iter().zip(psi).map(|(a, b)| a * b).sum();
        *terms.entry(id).or_default() -= g / n_s;
    }
    terms.values().map(|a| a * a).sum::<f64>().sqrt()
}
