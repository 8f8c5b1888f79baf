//! Named simulation designs with their estimator grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::dgp::{DgpSpec, InitMode, Law, TrendMode};
use super::monte_carlo::{EstimatorKind, EstimatorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub spec: DgpSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub scenarios: Vec<Scenario>,
    pub grid: Vec<EstimatorSpec>,
    pub default_reps: usize,
}

pub const PRESET_NAMES: &[&str] = &[
    "table1",
    "table2_stationary",
    "table2_unit_root",
    "table2_trend",
    "table2_trend_unit_root",
    "table3_top",
    "table3_bottom",
    "dfat_shock",
    "quadratic_trend",
    "placebo",
    "coverage",
];

fn scenario(name: &str, spec: DgpSpec) -> Scenario {
    Scenario {
        name: name.to_string(),
        spec,
    }
}

/// `q = 0, 1, 2` with every window from `q + 1` up to `tau` periods, at `h = 1`.
fn window_grid(tau: usize) -> Vec<EstimatorSpec> {
    (0..=2)
        .flat_map(|q| (q + 1..=tau).map(move |r| EstimatorSpec::pr(q, r, 1)))
        .collect()
}

fn additive(stationary: bool, random_walk: bool, trend: bool) -> DgpSpec {
    DgpSpec {
        stationary,
        random_walk,
        trend,
        ..DgpSpec::stationary_ar1()
    }
}

fn table1() -> Preset {
    let mut scenarios = Vec::new();
    for rho in [0.2, 0.9] {
        for n in [50, 1000] {
            let spec = DgpSpec {
                n,
                trend: true,
                rho: Law::fixed(rho),
                trend_mode: TrendMode::Recursive,
                init_mode: InitMode::Fixed { mean: 1.0, var: 2.0 },
                ..DgpSpec::stationary_ar1()
            };
            scenarios.push(scenario(&format!("rho={rho},n={n}"), spec));
        }
    }
    let mut grid = Vec::new();
    for q in 0..=3 {
        grid.push(EstimatorSpec::pr(q, q + 1, 1));
        grid.push(EstimatorSpec::new(
            "MB",
            EstimatorKind::Mb {
                instrument_lag: 3,
                detrend: true,
            },
            q,
            q + 1,
            1,
        ));
        grid.push(EstimatorSpec::new(
            "MB missp.",
            EstimatorKind::Mb {
                instrument_lag: 2,
                detrend: true,
            },
            q,
            q + 1,
            1,
        ));
    }
    Preset {
        name: "table1".into(),
        scenarios,
        grid,
        default_reps: 1000,
    }
}

fn single(name: &str, spec: DgpSpec, grid: Vec<EstimatorSpec>, default_reps: usize) -> Preset {
    Preset {
        name: name.to_string(),
        scenarios: vec![scenario(name, spec)],
        grid,
        default_reps,
    }
}

/// Look up a preset by name.
pub fn preset(name: &str) -> Result<Preset> {
    let tau = 5;
    let p = match name {
        "table1" => table1(),
        "table2_stationary" => single(name, additive(true, false, false), window_grid(tau), 1000),
        "table2_unit_root" => single(name, additive(true, true, false), window_grid(tau), 1000),
        "table2_trend" => single(name, additive(true, false, true), window_grid(tau), 1000),
        "table2_trend_unit_root" => single(name, additive(true, true, true), window_grid(tau), 1000),
        "table3_top" => single(
            name,
            DgpSpec {
                delta: Law::uniform(0.0, 2.0),
                ..additive(true, true, true)
            },
            window_grid(tau),
            1000,
        ),
        "table3_bottom" => single(
            name,
            DgpSpec {
                delta: Law::uniform(0.0, 2.0),
                rho: Law::uniform(0.0, 0.99),
                ..additive(true, true, true)
            },
            window_grid(tau),
            1000,
        ),
        "dfat_shock" => {
            let spec = DgpSpec {
                n_control: 1000,
                common_shock: 2.0,
                ..additive(true, false, false)
            };
            let mut grid = Vec::new();
            for (q, r) in [(0, 1), (0, 5), (1, 2), (1, 5)] {
                grid.push(EstimatorSpec::pr(q, r, 1));
                grid.push(EstimatorSpec::new("DFAT", EstimatorKind::Dfat, q, r, 1));
            }
            single(name, spec, grid, 1000)
        }
        "quadratic_trend" => {
            let spec = DgpSpec {
                trend_power: 2,
                ..additive(true, false, true)
            };
            let grid = (1..=3).map(|q| EstimatorSpec::pr(q, q + 2, 1)).collect();
            single(name, spec, grid, 1000)
        }
        "placebo" => {
            let mut grid = Vec::new();
            for (q, r) in [(0, 1), (1, 2)] {
                for lag in 1..=3 {
                    grid.push(EstimatorSpec::new("placebo", EstimatorKind::Placebo { lag }, q, r, 1).with_lag_label());
                }
            }
            single(name, additive(true, false, false), grid, 2000)
        }
        "coverage" => {
            let spec = DgpSpec {
                true_att: 0.5,
                ..additive(true, false, false)
            };
            single(name, spec, vec![EstimatorSpec::pr(0, 5, 1)], 2000)
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(p)
}

impl EstimatorSpec {
    fn with_lag_label(mut self) -> Self {
        if let EstimatorKind::Placebo { lag } = self.kind {
            self.label = format!("placebo lag {lag}");
        }
        self
    }
}
