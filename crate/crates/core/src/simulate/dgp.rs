//! Data-generating processes for untreated outcomes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{PanelData, UnitSeries};

/// A scalar parameter, fixed or drawn once per unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Law {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Law {
    pub fn fixed(value: f64) -> Self {
        Law::Fixed { value }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Law::Uniform { lo, hi }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Law::Fixed { value } => value,
            Law::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            Law::Fixed { value } => (value, value),
            Law::Uniform { lo, hi } => (lo, hi),
        }
    }
}

/// How the deterministic trend enters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendMode {
    /// `y = I1 y1 + I2 y2 + I3 delta t^p`.
    #[default]
    Additive,
    /// The trend feeds the autoregression: `y_t = mu + rho y_{t-1} + delta t^p + u_t`.
    Recursive,
}

/// Distribution of the autoregressive component at period 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitMode {
    /// `N(mu / (1 - rho), 1 / (1 - rho^2))`.
    #[default]
    Stationary,
    Fixed { mean: f64, var: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    /// Treated units.
    pub n: usize,
    /// Number of periods, observed as `1..=periods`.
    pub periods: usize,
    pub tau: i64,
    /// Mean-stationary autoregressive component.
    pub stationary: bool,
    /// Random walk starting at 0.
    pub random_walk: bool,
    /// Deterministic trend `delta t^trend_power`.
    pub trend: bool,
    pub rho: Law,
    pub mu: Law,
    pub delta: Law,
    #[serde(default = "one")]
    pub trend_power: u32,
    #[serde(default)]
    pub trend_mode: TrendMode,
    #[serde(default)]
    pub init_mode: InitMode,
    /// Also report period 0 of the autoregressive recursion.
    #[serde(default)]
    pub observe_initial: bool,
    /// Added to treated outcomes after `tau`.
    #[serde(default)]
    pub true_att: f64,
    /// Added to every unit's outcome after `tau`.
    #[serde(default)]
    pub common_shock: f64,
    /// Never-treated units drawn from the same process.
    #[serde(default)]
    pub n_control: usize,
}

fn one() -> u32 {
    1
}

impl DgpSpec {
    /// A stationary AR(1) panel with `rho = 0.2`, `n = 1000`, `T = 6`, `tau = 5`.
    pub fn stationary_ar1() -> Self {
        Self {
            n: 1000,
            periods: 6,
            tau: 5,
            stationary: true,
            random_walk: false,
            trend: false,
            rho: Law::fixed(0.2),
            mu: Law::uniform(-1.0, 1.0),
            delta: Law::fixed(1.0),
            trend_power: 1,
            trend_mode: TrendMode::Additive,
            init_mode: InitMode::Stationary,
            observe_initial: false,
            true_att: 0.0,
            common_shock: 0.0,
            n_control: 0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.n == 0 {
            return bad("n must be positive");
        }
        if self.tau < 1 || self.tau >= self.periods as i64 {
            return bad("tau must satisfy 1 <= tau < periods");
        }
        let (lo, hi) = self.rho.bounds();
        if self.init_mode == InitMode::Stationary && (lo <= -1.0 || hi >= 1.0) {
            return bad("stationary initialisation needs |rho| < 1");
        }
        if let InitMode::Fixed { var, .. } = self.init_mode {
            if !(var >= 0.0) {
                return bad("initial variance must be non-negative");
            }
        }
        for law in [self.rho, self.mu, self.delta] {
            let (lo, hi) = law.bounds();
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad("parameter laws need finite bounds with lo <= hi");
            }
        }
        Ok(())
    }
}

/// Draw one panel from `spec` with a generator seeded by `seed`.
pub fn simulate_dgp(spec: &DgpSpec, seed: u64) -> Result<PanelData> {
    simulate_with(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Draw one panel using `rng`.
pub fn simulate_with<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<PanelData> {
    spec.check()?;
    let first = if spec.observe_initial { 0 } else { 1 };
    let times: Vec<i64> = (first..=spec.periods as i64).collect();
    let width = (spec.n + spec.n_control).to_string().len();
    let mut units = Vec::with_capacity(spec.n + spec.n_control);
    for i in 0..spec.n + spec.n_control {
        let treated = i < spec.n;
        let path = draw_path(spec, rng);
        let outcomes: Vec<f64> = times
            .iter()
            .map(|&t| {
                let mut y = path[t as usize];
                if t > spec.tau {
                    y += spec.common_shock;
                    if treated {
                        y += spec.true_att;
                    }
                }
                y
            })
            .collect();
        let (prefix, tau) = if treated { ("t", Some(spec.tau)) } else { ("c", None) };
        let unit = UnitSeries::new(format!("{prefix}{i:0width$}"), times.clone(), outcomes, tau);
        units.push(if treated { unit } else { unit.control() });
    }
    PanelData::new(units, Vec::new())
}

/// Untreated outcomes at periods `0..=periods`.
fn draw_path<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Vec<f64> {
    let rho = spec.rho.sample(rng);
    let mu = spec.mu.sample(rng);
    let delta = spec.delta.sample(rng);
    let y0 = match spec.init_mode {
        InitMode::Stationary => {
            let sd = (1.0 / (1.0 - rho * rho)).sqrt();
            Normal::new(mu / (1.0 - rho), sd).expect("finite sd").sample(rng)
        }
        InitMode::Fixed { mean, var } => Normal::new(mean, var.sqrt()).expect("finite sd").sample(rng),
    };
    let trend = |t: usize| delta * (t as f64).powi(spec.trend_power as i32);
    let recursive = spec.trend_mode == TrendMode::Recursive;
    let mut ar = y0;
    let mut walk = 0.0;
    let mut out = Vec::with_capacity(spec.periods + 1);
    for t in 0..=spec.periods {
        if t > 0 {
            let u: f64 = StandardNormal.sample(rng);
            let e: f64 = StandardNormal.sample(rng);
            ar = mu + rho * ar + u;
            if recursive && spec.trend {
                ar += trend(t);
            }
            walk += e;
        }
        let mut y = 0.0;
        if spec.stationary || recursive {
            y += ar;
        }
        if spec.random_walk {
            y += walk;
        }
        if spec.trend && !recursive {
            y += trend(t);
        }
        out.push(y);
    }
    out
}

/// Expected outcome path `e_t = rho e_{t-1} + delta t`, `t = 0..=periods`,
/// of the recursive-trend process with mean-zero fixed effects.
pub fn analytic_mean_recursion(rho: f64, delta: f64, y0_mean: f64, periods: usize) -> Vec<f64> {
    let mut e = Vec::with_capacity(periods + 1);
    e.push(y0_mean);
    for t in 1..=periods {
        e.push(rho * e[t - 1] + delta * t as f64);
    }
    e
}
