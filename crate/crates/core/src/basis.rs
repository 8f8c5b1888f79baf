//! Basis-function regressions and their forecast weights.
//!
//! A unit's counterfactual at `tau + h` is forecast by regressing its outcomes
//! over a window of pre-treatment periods on `b_0(t) = 1, b_1(t), ..., b_q(t)`
//! and evaluating the fit at the target period. The forecast is linear in the
//! window outcomes, `sum_t w_t y_t`, with weights that depend only on the
//! basis, the window and the target, and that sum to one.
//!
//! Least squares is solved through a Householder QR factorisation of the
//! column-scaled design. Polynomial windows are first mapped affinely onto
//! `[-1, 1]`; the span, and therefore the forecast, is unchanged.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Anticipation, UnitSeries};

/// Largest polynomial order accepted without an explicit override.
pub const MAX_DEFAULT_ORDER: usize = 8;

/// Relative threshold on the diagonal of R below which a design is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Tabulated basis functions `b_k(t)` on integer times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomBasis {
    table: BTreeMap<i64, Vec<f64>>,
}

impl CustomBasis {
    /// `rows` maps a time to `(b_0(t), ..., b_q(t))`. Requires `b_0 = 1`
    /// everywhere and linearly independent functions over the full table.
    pub fn new(rows: impl IntoIterator<Item = (i64, Vec<f64>)>) -> Result<Self> {
        let table: BTreeMap<i64, Vec<f64>> = rows.into_iter().collect();
        let width = table
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidConfig("custom basis table is empty".into()))?;
        if width == 0 || table.values().any(|r| r.len() != width) {
            return Err(Error::InvalidConfig("custom basis rows must share a non-zero width".into()));
        }
        if table.values().any(|r| r[0] != 1.0) {
            return Err(Error::InvalidConfig("custom basis must have b_0(t) = 1".into()));
        }
        let x = DMatrix::from_fn(table.len(), width, |i, j| table.values().nth(i).unwrap()[j]);
        check_rank(&scale_columns(x).0)?;
        Ok(Self { table })
    }

    pub fn order(&self) -> usize {
        self.table.values().next().map_or(0, |r| r.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisFamily {
    /// `b_k(t) = t^k`.
    Polynomial,
    /// `1, sin(2 pi t / P), cos(2 pi t / P), sin(4 pi t / P), ...`
    Fourier { period: f64 },
    Custom { basis: CustomBasis },
}

/// A basis family together with its order `q` (so `q + 1` functions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub order: usize,
    #[serde(default)]
    pub allow_high_order: bool,
}

impl BasisSpec {
    pub fn polynomial(order: usize) -> Self {
        Self {
            family: BasisFamily::Polynomial,
            order,
            allow_high_order: false,
        }
    }

    pub fn fourier(order: usize, period: f64) -> Self {
        Self {
            family: BasisFamily::Fourier { period },
            order,
            allow_high_order: false,
        }
    }

    pub fn custom(basis: CustomBasis) -> Self {
        Self {
            order: basis.order(),
            family: BasisFamily::Custom { basis },
            allow_high_order: false,
        }
    }

    pub fn with_high_order(mut self) -> Self {
        self.allow_high_order = true;
        self
    }

    pub fn n_functions(&self) -> usize {
        self.order + 1
    }

    /// Forecasts are unchanged when window and target shift by a constant.
    pub fn is_shift_invariant(&self) -> bool {
        !matches!(self.family, BasisFamily::Custom { .. })
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.order > MAX_DEFAULT_ORDER && !self.allow_high_order {
            return Err(Error::InvalidConfig(format!(
                "order {} exceeds {MAX_DEFAULT_ORDER}; enable high orders explicitly",
                self.order
            )));
        }
        match &self.family {
            BasisFamily::Fourier { period } if !(period.is_finite() && *period > 0.0) => {
                Err(Error::InvalidConfig(format!("Fourier period must be positive, got {period}")))
            }
            BasisFamily::Custom { basis } if basis.order() != self.order => Err(Error::InvalidConfig(format!(
                "custom basis has order {} but {} was requested",
                basis.order(),
                self.order
            ))),
            _ => Ok(()),
        }
    }

    /// Write `(b_0(t), ..., b_q(t))` into `row`.
    fn eval_into(&self, t: f64, row: &mut [f64]) -> Result<()> {
        match &self.family {
            BasisFamily::Polynomial => {
                let mut p = 1.0;
                for v in row.iter_mut() {
                    *v = p;
                    p *= t;
                }
            }
            BasisFamily::Fourier { period } => {
                row[0] = 1.0;
                for k in 1..row.len() {
                    let j = k.div_ceil(2) as f64;
                    let arg = 2.0 * PI * j * t / period;
                    row[k] = if k % 2 == 1 { arg.sin() } else { arg.cos() };
                }
            }
            BasisFamily::Custom { basis } => {
                let key = t as i64;
                let values = basis
                    .table
                    .get(&key)
                    .ok_or_else(|| Error::InvalidConfig(format!("custom basis has no entry for t = {key}")))?;
                row.copy_from_slice(values);
            }
        }
        Ok(())
    }
}

/// How many pre-treatment periods each unit's regression uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSpec {
    Fixed(usize),
    /// The full run of consecutive observed periods ending at `tau`.
    All,
    /// Per-unit lengths; units not listed use [`WindowSpec::All`].
    PerUnit(BTreeMap<String, usize>),
}

impl WindowSpec {
    pub fn resolve(&self, unit: &UnitSeries, _order: usize) -> usize {
        let all = || unit.tau.map_or(0, |tau| unit.contiguous_run_ending_at(tau));
        match self {
            WindowSpec::Fixed(r) => *r,
            WindowSpec::All => all(),
            WindowSpec::PerUnit(m) => m.get(&unit.unit_id).copied().unwrap_or_else(all),
        }
    }
}

/// What to do when the requested window is not fully observed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    #[default]
    Error,
    /// Shrink R_i to the longest consecutive run ending at `tau`.
    Shrink,
}

/// Basis, window and anticipation settings shared by all units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub basis: BasisSpec,
    pub window: WindowSpec,
    #[serde(default)]
    pub anticipation: Anticipation,
    #[serde(default)]
    pub gap_policy: GapPolicy,
}

impl ForecastConfig {
    pub fn new(basis: BasisSpec, window: WindowSpec) -> Self {
        Self {
            basis,
            window,
            anticipation: Anticipation::None,
            gap_policy: GapPolicy::Error,
        }
    }

    pub fn polynomial(order: usize, window: usize) -> Self {
        Self::new(BasisSpec::polynomial(order), WindowSpec::Fixed(window))
    }

    pub fn with_anticipation(mut self, anticipation: Anticipation) -> Self {
        self.anticipation = anticipation;
        self
    }

    pub fn with_gap_policy(mut self, policy: GapPolicy) -> Self {
        self.gap_policy = policy;
        self
    }
}

/// Forecast weights over a window of periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastWeights {
    pub times: Vec<i64>,
    pub weights: Vec<f64>,
}

impl ForecastWeights {
    pub fn apply(&self, y: &[f64]) -> f64 {
        debug_assert_eq!(y.len(), self.weights.len());
        self.weights.iter().zip(y).map(|(w, y)| w * y).sum()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `R x (q + 1)` matrix with rows `(b_0(c_s), ..., b_q(c_s))`, evaluated at the given times.
pub fn design_matrix(basis: &BasisSpec, window: &[i64]) -> Result<DMatrix<f64>> {
    basis.check()?;
    check_window(basis, window)?;
    let x = raw_design(basis, window.iter().map(|&t| t as f64))?;
    check_rank(&scale_columns(x.clone()).0)?;
    Ok(x)
}

fn raw_design(basis: &BasisSpec, times: impl ExactSizeIterator<Item = f64>) -> Result<DMatrix<f64>> {
    let cols = basis.n_functions();
    let mut x = DMatrix::zeros(times.len(), cols);
    let mut row = vec![0.0; cols];
    for (i, t) in times.enumerate() {
        basis.eval_into(t, &mut row)?;
        for (j, v) in row.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    Ok(x)
}

fn check_window(basis: &BasisSpec, window: &[i64]) -> Result<()> {
    if window.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("window times must be strictly increasing".into()));
    }
    if window.len() < basis.n_functions() {
        return Err(Error::TooFewObservations {
            needed: basis.n_functions(),
            got: window.len(),
        });
    }
    Ok(())
}

/// Basis rows at `times`, in the internal coordinates of `window`.
///
/// Polynomial windows are mapped affinely onto `[-1, 1]`, which leaves the
/// fitted values unchanged and keeps the design well conditioned.
pub(crate) fn internal_rows(basis: &BasisSpec, window: &[i64], times: &[i64]) -> Result<DMatrix<f64>> {
    match basis.family {
        BasisFamily::Polynomial => {
            let lo = window[0] as f64;
            let hi = window[window.len() - 1] as f64;
            let centre = 0.5 * (lo + hi);
            let half = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
            raw_design(basis, times.iter().map(|&t| (t as f64 - centre) / half))
        }
        _ => raw_design(basis, times.iter().map(|&t| t as f64)),
    }
}

/// Design and target row in the internal coordinates used for solving.
fn internal_system(basis: &BasisSpec, window: &[i64], target: i64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    basis.check()?;
    check_window(basis, window)?;
    let x = internal_rows(basis, window, window)?;
    let h = internal_rows(basis, window, &[target])?;
    Ok((x, h.row(0).transpose()))
}

/// Divide each column by its Euclidean norm. Returns the scaled matrix and the norms.
fn scale_columns(mut x: DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let norms = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.norm()));
    for (j, n) in norms.iter().enumerate() {
        if *n > 0.0 {
            x.column_mut(j).unscale_mut(*n);
        }
    }
    (x, norms)
}

fn check_rank(x: &DMatrix<f64>) -> Result<()> {
    let cols = x.ncols();
    if x.nrows() < cols {
        return Err(Error::RankDeficient {
            rank: x.nrows(),
            cols,
        });
    }
    let r = x.clone().qr().r();
    let diag: Vec<f64> = (0..cols).map(|k| r[(k, k)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let rank = diag.iter().filter(|d| **d > RANK_TOL * max.max(f64::MIN_POSITIVE)).count();
    if rank < cols {
        return Err(Error::RankDeficient { rank, cols });
    }
    Ok(())
}

/// A column-scaled QR factorisation of a full-rank design.
pub(crate) struct LeastSquares {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    norms: DVector<f64>,
}

impl LeastSquares {
    pub(crate) fn new(x: DMatrix<f64>) -> Result<Self> {
        let (xs, norms) = scale_columns(x);
        check_rank(&xs)?;
        let qr = xs.qr();
        Ok(Self {
            q: qr.q(),
            r: qr.r(),
            norms,
        })
    }

    /// Coefficients minimising `||y - X c||`.
    pub(crate) fn coefficients(&self, y: &DVector<f64>) -> DVector<f64> {
        let qty = self.q.transpose() * y;
        let c = self
            .r
            .solve_upper_triangular(&qty)
            .expect("triangular factor of a full-rank design is invertible");
        c.component_div(&self.norms)
    }

    /// `w` such that `w . y == h . coefficients(y)` for every `y`.
    pub(crate) fn weights_for(&self, h: &DVector<f64>) -> DVector<f64> {
        let hs = h.component_div(&self.norms);
        let z = self
            .r
            .transpose()
            .solve_lower_triangular(&hs)
            .expect("triangular factor of a full-rank design is invertible");
        &self.q * z
    }
}

/// Weights reproducing the least-squares forecast of `target` from `window`.
pub fn forecast_weights(basis: &BasisSpec, window: &[i64], target: i64) -> Result<ForecastWeights> {
    let (x, h) = internal_system(basis, window, target)?;
    let w = LeastSquares::new(x)?.weights_for(&h);
    Ok(ForecastWeights {
        times: window.to_vec(),
        weights: w.iter().copied().collect(),
    })
}

/// Fit the basis regression on `(window, y)` and evaluate it at `target`.
pub fn fit_and_forecast(basis: &BasisSpec, window: &[i64], y: &[f64], target: i64) -> Result<f64> {
    if y.len() != window.len() {
        return Err(Error::InvalidConfig(format!(
            "{} outcomes for a window of {} periods",
            y.len(),
            window.len()
        )));
    }
    let (x, h) = internal_system(basis, window, target)?;
    let c = LeastSquares::new(x)?.coefficients(&DVector::from_column_slice(y));
    Ok(h.dot(&c))
}

/// Closed-form one-step weights for a polynomial of order `q` fitted to the
/// last `q + 1` periods: `w_t = (-1)^(tau - t) * C(q + 1, tau - t + 1)`.
///
/// Times are relative to `tau`, i.e. `-q, ..., 0`.
pub fn binomial_weights(q: usize) -> ForecastWeights {
    let times: Vec<i64> = (-(q as i64)..=0).collect();
    let weights = times
        .iter()
        .map(|&t| {
            let lag = (-t) as usize;
            let sign = if lag % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial(q + 1, lag + 1)
        })
        .collect();
    ForecastWeights { times, weights }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128) as f64
}

/// One-step polynomial forecast with `R = q + 1`, built by repeatedly
/// subtracting the previous order's lagged forecast error.
///
/// `y` holds the last `q + 1` outcomes in time order.
pub fn iterative_forecast(y: &[f64], q: usize) -> Result<f64> {
    if y.len() != q + 1 {
        return Err(Error::InvalidConfig(format!(
            "iterative forecast of order {q} needs {} outcomes, got {}",
            q + 1,
            y.len()
        )));
    }
    // level[e]: order-k forecast of period e + 1 from the window ending at e.
    let mut level = y.to_vec();
    for k in 1..=q {
        for e in (k..=q).rev() {
            level[e] = level[e] - (level[e - 1] - y[e]);
        }
    }
    Ok(level[q])
}
