//! Forecasted treatment effects for short panels.
//!
//! Each treated unit's untreated outcome after adoption is forecast from its
//! own pre-treatment history with a basis-function regression. Averaging the
//! gaps between observed outcomes and forecasts across units estimates the
//! average treatment effect on the treated, without a control group.
//!
//! - [`panel`]: data model, CSV ingestion, validation, event-time re-indexing.
//! - [`basis`]: design matrices, forecast weights and per-unit forecasts.
//! - [`estimators`]: FAT, placebo FAT, balanced-panel equivalents, model-based
//!   FAT with an Anderson–Hsiao first stage, covariate forecasts, DFAT and
//!   variance estimators.
//! - [`simulate`]: data-generating processes and the Monte Carlo driver.

pub mod basis;
pub mod error;
pub mod estimators;
pub mod panel;
pub mod simulate;

pub use basis::{
    binomial_weights, design_matrix, fit_and_forecast, forecast_weights, iterative_forecast, BasisFamily, BasisSpec,
    CustomBasis, ForecastConfig, ForecastWeights, GapPolicy, WindowSpec,
};
pub use error::{Error, Result};
pub use estimators::{
    anderson_hsiao, covariate_fat_heterogeneous, dfat, dfat_with, fat, fat_balanced_avg, fat_pooled, fat_variance,
    mb_variance, model_based_fat, model_based_fat_with_stage, normal_critical_value, placebo_fat, AhEstimate, AhSpec,
    DfatEstimate, DroppedUnit, FatEstimate, FirstStage, MbConfig, UnitResidual, VarianceEstimate,
};
pub use panel::{load_panel, load_panel_path, write_panel, Anticipation, PanelData, Schema, UnitSeries, ValidationReport};
