//! Simulated panels and Monte Carlo experiments.

mod dgp;
mod monte_carlo;
mod presets;

pub use dgp::{analytic_mean_recursion, simulate_dgp, simulate_with, DgpSpec, InitMode, Law, TrendMode};
pub use monte_carlo::{
    replication_rng, run_monte_carlo, run_monte_carlo_at, EstimatorKind, EstimatorSpec, McCell, McReport,
    DEGENERATE_SHARE,
};
pub use presets::{preset, Preset, Scenario, PRESET_NAMES};
