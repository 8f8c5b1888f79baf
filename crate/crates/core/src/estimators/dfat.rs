//! Difference between treated and control FAT.
//!
//! Forecast errors of never-treated units measure shocks common to both
//! groups after the treatment date; subtracting their mean removes them.

use serde::{Deserialize, Serialize};

use crate::basis::ForecastConfig;
use crate::error::{Error, Result};
use crate::panel::PanelData;

use super::{fat_for_group, fat_variance, normal_critical_value, FatEstimate, Group, DEFAULT_LEVEL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfatEstimate {
    pub fat_treated: FatEstimate,
    pub fat_control: FatEstimate,
    pub point: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub level: f64,
}

impl DfatEstimate {
    pub fn with_level(mut self, level: f64) -> Self {
        self.level = level;
        self.ci = self.se.map(|se| {
            let z = normal_critical_value(level);
            (self.point - z * se, self.point + z * se)
        });
        self.fat_treated = self.fat_treated.with_level(level);
        self.fat_control = self.fat_control.with_level(level);
        self
    }
}

/// DFAT with the same forecast settings for both groups.
pub fn dfat(panel: &PanelData, config: &ForecastConfig, h: u32) -> Result<DfatEstimate> {
    dfat_with(panel, config, config, h)
}

/// DFAT with separate forecast settings for the treated and control groups.
///
/// Control units without a treatment date are evaluated at the common
/// treatment date of the treated group.
pub fn dfat_with(
    panel: &PanelData,
    treated: &ForecastConfig,
    control: &ForecastConfig,
    h: u32,
) -> Result<DfatEstimate> {
    if panel.treated().next().is_none() {
        return Err(Error::MissingTreatment("panel has no treated units".into()));
    }
    if !panel.has_controls() {
        return Err(Error::MissingTreatment("panel has no control units".into()));
    }
    let treated_tau = {
        let mut taus = panel.treated().map(|u| u.tau);
        let first = taus.next().flatten();
        first.filter(|t| taus.all(|x| x == Some(*t)))
    };
    let aligned = panel.map_units(|u| {
        let mut out = u.clone();
        if u.is_control && u.tau.is_none() {
            out.tau = treated_tau;
        }
        Ok(out)
    })?;

    let fat_treated = fat_for_group(&aligned, treated, h, Group::Treated)?;
    let fat_control = fat_for_group(&aligned, control, h, Group::Control)?;
    let point = fat_treated.point - fat_control.point;

    let treated_var = fat_variance(&fat_treated.residual_values()).ok().map(|v| v.variance);
    let control_se = match fat_control.se {
        Some(se) => Some(se),
        // A lone control unit has no spread of its own; borrow the treated one.
        None => treated_var.map(|v| (v / fat_control.n_used as f64).sqrt()),
    };
    let se = match (fat_treated.se, control_se) {
        (Some(a), Some(b)) => Some((a * a + b * b).sqrt()),
        _ => None,
    };
    let out = DfatEstimate {
        fat_treated,
        fat_control,
        point,
        se,
        ci: None,
        level: DEFAULT_LEVEL,
    };
    Ok(out.with_level(DEFAULT_LEVEL))
}
