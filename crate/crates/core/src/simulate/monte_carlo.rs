//! Monte Carlo driver.
//!
//! Replication `r` draws its panel from a ChaCha stream selected by `r` under
//! the master seed, so results do not depend on scheduling and adding
//! replications leaves earlier ones untouched.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::ForecastConfig;
use crate::error::{Error, Result};
use crate::estimators::{dfat, fat, model_based_fat, placebo_fat, MbConfig};
use crate::panel::PanelData;

use super::dgp::{simulate_with, DgpSpec};

/// Share of failed replications above which a cell is marked degenerate.
pub const DEGENERATE_SHARE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Polynomial-regression FAT.
    Pr,
    /// Model-based FAT with an Anderson–Hsiao first stage.
    Mb { instrument_lag: u32, detrend: bool },
    Dfat,
    /// FAT with treatment dates moved `lag` periods earlier.
    Placebo { lag: u32 },
}

/// One cell of an estimator grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub label: String,
    pub kind: EstimatorKind,
    pub q: usize,
    pub r: usize,
    pub h: u32,
}

impl EstimatorSpec {
    pub fn new(label: impl Into<String>, kind: EstimatorKind, q: usize, r: usize, h: u32) -> Self {
        Self {
            label: label.into(),
            kind,
            q,
            r,
            h,
        }
    }

    pub fn pr(q: usize, r: usize, h: u32) -> Self {
        Self::new("PR", EstimatorKind::Pr, q, r, h)
    }

    /// Effect the estimator targets when the treated gain `att` after `tau`.
    pub fn truth(&self, att: f64) -> f64 {
        match self.kind {
            EstimatorKind::Placebo { lag } if self.h <= lag => 0.0,
            _ => att,
        }
    }

    /// Point estimate and standard error on one panel.
    pub fn estimate(&self, panel: &PanelData) -> Result<(f64, Option<f64>)> {
        let config = ForecastConfig::polynomial(self.q, self.r);
        match &self.kind {
            EstimatorKind::Pr => fat(panel, &config, self.h).map(|e| (e.point, e.se)),
            EstimatorKind::Mb { instrument_lag, detrend } => {
                let mb = MbConfig::anderson_hsiao(config, *instrument_lag, *detrend);
                model_based_fat(panel, &mb, self.h).map(|e| (e.point, e.se))
            }
            EstimatorKind::Dfat => dfat(panel, &config, self.h).map(|e| (e.point, e.se)),
            EstimatorKind::Placebo { lag } => placebo_fat(panel, &config, *lag, self.h).map(|e| (e.point, e.se)),
        }
    }
}

/// Summary of one estimator over all replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub estimator: EstimatorSpec,
    pub truth: f64,
    /// Mean estimate minus `truth`.
    pub bias: f64,
    /// Standard deviation of the estimates across replications.
    pub mc_se: f64,
    /// Mean reported standard error.
    pub mean_se: Option<f64>,
    /// Share of confidence intervals containing `truth`.
    pub coverage: Option<f64>,
    pub n_reps: usize,
    pub n_failed: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub scenario: String,
    pub spec: DgpSpec,
    pub master_seed: u64,
    pub n_reps: usize,
    pub level: f64,
    pub cells: Vec<McCell>,
}

/// Generator for replication `rep`.
pub fn replication_rng(master_seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(rep);
    rng
}

type Draw = Option<(f64, Option<f64>)>;

/// Simulate `n_reps` panels and apply every estimator in `grid` to each.
pub fn run_monte_carlo(
    scenario: &str,
    spec: &DgpSpec,
    grid: &[EstimatorSpec],
    n_reps: usize,
    master_seed: u64,
) -> Result<McReport> {
    run_monte_carlo_at(scenario, spec, grid, n_reps, master_seed, crate::estimators::DEFAULT_LEVEL)
}

/// As [`run_monte_carlo`] with coverage measured at confidence `level`.
pub fn run_monte_carlo_at(
    scenario: &str,
    spec: &DgpSpec,
    grid: &[EstimatorSpec],
    n_reps: usize,
    master_seed: u64,
    level: f64,
) -> Result<McReport> {
    if n_reps < 2 {
        return Err(Error::InvalidConfig("at least two replications are needed".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig("confidence level must lie in (0, 1)".into()));
    }
    spec.check()?;
    let draws: Vec<Vec<Draw>> = (0..n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(master_seed, rep);
            let panel = simulate_with(spec, &mut rng)?;
            Ok(grid.iter().map(|e| e.estimate(&panel).ok()).collect())
        })
        .collect::<Result<_>>()?;
    let z = crate::estimators::normal_critical_value(level);
    let cells = grid
        .iter()
        .enumerate()
        .map(|(j, est)| summarise(est, spec.true_att, draws.iter().map(|d| d[j]), n_reps, z))
        .collect();
    Ok(McReport {
        scenario: scenario.to_string(),
        spec: spec.clone(),
        master_seed,
        n_reps,
        level,
        cells,
    })
}

fn summarise(est: &EstimatorSpec, att: f64, draws: impl Iterator<Item = Draw>, n_reps: usize, z: f64) -> McCell {
    let truth = est.truth(att);
    let ok: Vec<(f64, Option<f64>)> = draws.flatten().filter(|(p, _)| p.is_finite()).collect();
    let n = ok.len();
    let n_failed = n_reps - n;
    let mean = ok.iter().map(|(p, _)| p).sum::<f64>() / n as f64;
    let mc_se = if n > 1 {
        (ok.iter().map(|(p, _)| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    let ses: Vec<(f64, f64)> = ok.iter().filter_map(|(p, s)| s.map(|s| (*p, s))).collect();
    let (mean_se, coverage) = if ses.is_empty() {
        (None, None)
    } else {
        let m = ses.len() as f64;
        let mean_se = ses.iter().map(|(_, s)| s).sum::<f64>() / m;
        let covered = ses.iter().filter(|(p, s)| (p - truth).abs() <= z * s).count();
        (Some(mean_se), Some(covered as f64 / m))
    };
    McCell {
        estimator: est.clone(),
        truth,
        bias: mean - truth,
        mc_se,
        mean_se,
        coverage,
        n_reps,
        n_failed,
        degenerate: n_failed as f64 > DEGENERATE_SHARE * n_reps as f64,
    }
}

impl McReport {
    pub fn cell(&self, label: &str, q: usize, r: usize) -> Option<&McCell> {
        self.cells
            .iter()
            .find(|c| c.estimator.label == label && c.estimator.q == q && c.estimator.r == r)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Table layout: one row per (estimator, q, h, statistic), one column per window length.
    pub fn write_table_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut rs: Vec<usize> = self.cells.iter().map(|c| c.estimator.r).collect();
        rs.sort_unstable();
        rs.dedup();
        let mut keys: Vec<(String, usize, u32)> = Vec::new();
        for c in &self.cells {
            let key = (c.estimator.label.clone(), c.estimator.q, c.estimator.h);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["scenario".to_string(), "estimator".into(), "q".into(), "h".into(), "statistic".into()];
        header.extend(rs.iter().map(|r| format!("R={r}")));
        w.write_record(&header)?;
        type Stat = fn(&McCell) -> Option<f64>;
        let stats: [(&str, Stat); 4] = [
            ("bias", |c| Some(c.bias)),
            ("mc_se", |c| Some(c.mc_se)),
            ("mean_se", |c| c.mean_se),
            ("coverage", |c| c.coverage),
        ];
        for (label, q, h) in &keys {
            for (name, f) in stats {
                let mut row = vec![self.scenario.clone(), label.clone(), q.to_string(), h.to_string(), name.to_string()];
                for r in &rs {
                    let cell = self
                        .cells
                        .iter()
                        .find(|c| &c.estimator.label == label && c.estimator.q == *q && c.estimator.h == *h && c.estimator.r == *r);
                    row.push(cell.and_then(f).map(|v| format!("{v:.6}")).unwrap_or_default());
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
