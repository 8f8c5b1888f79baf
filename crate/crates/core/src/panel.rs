//! Panel data model: ingestion, validation and time re-indexing.
//!
//! A panel is a set of unit time series. Each unit carries its own treatment
//! date `tau`, the last untreated period, so that treatment applies for
//! `t > tau`. Panels may be unbalanced and adoption may be staggered.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::ForecastConfig;
use crate::error::{Error, Result};

/// Time series of one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSeries {
    pub unit_id: String,
    /// Strictly increasing integer time indices.
    pub times: Vec<i64>,
    pub outcomes: Vec<f64>,
    /// Last untreated period. Controls may carry the cohort date used for alignment.
    pub tau: Option<i64>,
    pub is_control: bool,
    /// One covariate row per observation; missing entries are NaN.
    pub covariates: Option<Vec<Vec<f64>>>,
    /// Shift applied by re-indexing: original time = `times[k] + time_offset`.
    #[serde(default)]
    pub time_offset: i64,
    /// Anticipation periods already removed from the pre-treatment window.
    #[serde(default)]
    pub anticipation: i64,
}

impl UnitSeries {
    pub fn new(unit_id: impl Into<String>, times: Vec<i64>, outcomes: Vec<f64>, tau: Option<i64>) -> Self {
        Self {
            unit_id: unit_id.into(),
            times,
            outcomes,
            tau,
            is_control: false,
            covariates: None,
            time_offset: 0,
            anticipation: 0,
        }
    }

    pub fn control(mut self) -> Self {
        self.is_control = true;
        self
    }

    pub fn with_covariates(mut self, covariates: Vec<Vec<f64>>) -> Self {
        self.covariates = Some(covariates);
        self
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn index_of(&self, t: i64) -> Option<usize> {
        self.times.binary_search(&t).ok()
    }

    pub fn value_at(&self, t: i64) -> Option<f64> {
        self.index_of(t).map(|k| self.outcomes[k])
    }

    pub fn covariates_at(&self, t: i64) -> Option<&[f64]> {
        let k = self.index_of(t)?;
        self.covariates.as_ref().map(|c| c[k].as_slice())
    }

    /// Original (calendar) times before any re-indexing.
    pub fn original_times(&self) -> Vec<i64> {
        self.times.iter().map(|t| t + self.time_offset).collect()
    }

    /// Length of the run of consecutive observed periods ending at `end`.
    pub fn contiguous_run_ending_at(&self, end: i64) -> usize {
        let Some(mut k) = self.index_of(end) else {
            return 0;
        };
        let mut run = 1;
        while k > 0 && self.times[k - 1] == self.times[k] - 1 {
            run += 1;
            k -= 1;
        }
        run
    }

    /// Number of observations at or before `end`.
    pub fn count_up_to(&self, end: i64) -> usize {
        self.times.partition_point(|&t| t <= end)
    }

    /// Outcomes over `start..=end` if every period is observed.
    pub fn window(&self, start: i64, end: i64) -> Option<&[f64]> {
        let a = self.index_of(start)?;
        let b = self.index_of(end)?;
        ((b - a) as i64 == end - start).then(|| &self.outcomes[a..=b])
    }

    /// Horizon of a calendar period relative to the (effective) treatment date.
    pub fn horizon_for(&self, calendar_time: i64) -> Option<i64> {
        self.tau.map(|tau| calendar_time - self.time_offset - tau)
    }

    fn check(&self, n_cov: usize) -> Result<()> {
        if self.times.len() != self.outcomes.len() {
            return Err(Error::Schema(format!(
                "unit {}: {} times but {} outcomes",
                self.unit_id,
                self.times.len(),
                self.outcomes.len()
            )));
        }
        if let Some(w) = self.times.windows(2).find(|w| w[0] >= w[1]) {
            if w[0] == w[1] {
                return Err(Error::DuplicateObservation {
                    unit: self.unit_id.clone(),
                    time: w[0],
                });
            }
            return Err(Error::Schema(format!("unit {}: times are not increasing", self.unit_id)));
        }
        if let Some(cov) = &self.covariates {
            if cov.len() != self.times.len() || cov.iter().any(|row| row.len() != n_cov) {
                return Err(Error::Schema(format!(
                    "unit {}: covariate rows must match observations and have {} entries",
                    self.unit_id, n_cov
                )));
            }
        }
        Ok(())
    }
}

/// An immutable collection of unit series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelData {
    units: Vec<UnitSeries>,
    time_unit: String,
    covariate_names: Vec<String>,
}

impl PanelData {
    pub fn new(units: Vec<UnitSeries>, covariate_names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(units.len());
        for u in &units {
            if !seen.insert(u.unit_id.as_str()) {
                return Err(Error::Schema(format!("duplicate unit identifier {}", u.unit_id)));
            }
            u.check(covariate_names.len())?;
        }
        Ok(Self {
            units,
            time_unit: "period".to_string(),
            covariate_names,
        })
    }

    pub fn with_time_unit(mut self, label: impl Into<String>) -> Self {
        self.time_unit = label.into();
        self
    }

    pub fn units(&self) -> &[UnitSeries] {
        &self.units
    }

    pub fn unit(&self, id: &str) -> Option<&UnitSeries> {
        self.units.iter().find(|u| u.unit_id == id)
    }

    pub fn time_unit(&self) -> &str {
        &self.time_unit
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn treated(&self) -> impl Iterator<Item = &UnitSeries> {
        self.units.iter().filter(|u| !u.is_control)
    }

    pub fn controls(&self) -> impl Iterator<Item = &UnitSeries> {
        self.units.iter().filter(|u| u.is_control)
    }

    pub fn has_controls(&self) -> bool {
        self.units.iter().any(|u| u.is_control)
    }

    /// Same metadata, different units. Invariants are re-checked.
    pub(crate) fn map_units<F>(&self, f: F) -> Result<Self>
    where
        F: FnMut(&UnitSeries) -> Result<UnitSeries>,
    {
        let units = self.units.iter().map(f).collect::<Result<Vec<_>>>()?;
        let mut out = Self::new(units, self.covariate_names.clone())?;
        out.time_unit = self.time_unit.clone();
        Ok(out)
    }

    /// True when every unit is observed over the same set of periods.
    pub fn is_balanced(&self) -> bool {
        match self.units.split_first() {
            None => true,
            Some((first, rest)) => rest.iter().all(|u| u.times == first.times),
        }
    }

    /// The shared treatment date, if every unit has the same one.
    pub fn common_tau(&self) -> Option<i64> {
        let mut taus = self.units.iter().map(|u| u.tau);
        let first = taus.next()??;
        taus.all(|t| t == Some(first)).then_some(first)
    }

    /// Shift each unit to event time so its adoption period becomes 0.
    ///
    /// Idempotent: a unit already at `tau == 0` is left unchanged.
    pub fn reindex_time_to_adoption(&self) -> Result<Self> {
        self.map_units(|u| {
            let tau = u.tau.ok_or_else(|| Error::MissingTau(u.unit_id.clone()))?;
            let mut out = u.clone();
            out.times = u.times.iter().map(|t| t - tau).collect();
            out.tau = Some(0);
            out.time_offset = u.time_offset + tau;
            Ok(out)
        })
    }

    /// End each pre-treatment window at `tau - delta`.
    ///
    /// Horizons are counted from the new end point afterwards, so a unit with
    /// `tau = 5`, `delta = 1` evaluated at period 6 sits at horizon 2.
    pub fn apply_anticipation(&self, delta: &Anticipation) -> Result<Self> {
        if delta.is_zero() {
            return Ok(self.clone());
        }
        self.map_units(|u| {
            let d = delta.for_unit(&u.unit_id);
            let mut out = u.clone();
            if d == 0 {
                return Ok(out);
            }
            let Some(tau) = u.tau else {
                return Ok(out);
            };
            let new_tau = tau - d as i64;
            if u.count_up_to(new_tau) == 0 {
                return Err(Error::Window {
                    unit: u.unit_id.clone(),
                    reason: format!("anticipation of {d} periods leaves no pre-treatment observation"),
                });
            }
            out.tau = Some(new_tau);
            out.anticipation = u.anticipation + d as i64;
            Ok(out)
        })
    }

    /// Copy of the panel with every treatment date moved `lag` periods earlier.
    pub(crate) fn shift_tau(&self, lag: u32) -> Result<Self> {
        if lag == 0 {
            return Ok(self.clone());
        }
        self.map_units(|u| {
            let mut out = u.clone();
            out.tau = u.tau.map(|t| t - lag as i64);
            Ok(out)
        })
    }

    /// Diagnostics for `config`. Never alters the panel.
    pub fn validate(&self, config: &ForecastConfig) -> ValidationReport {
        let shifted;
        let panel = if config.anticipation.is_zero() {
            self
        } else {
            match self.apply_anticipation(&config.anticipation) {
                Ok(p) => {
                    shifted = p;
                    &shifted
                }
                Err(_) => self,
            }
        };
        let q = config.basis.order;
        let units = panel
            .units
            .iter()
            .map(|u| {
                let mut d = UnitDiagnostics {
                    unit_id: u.unit_id.clone(),
                    is_control: u.is_control,
                    tau: u.tau,
                    pre_run: 0,
                    window: None,
                    gap_in_window: false,
                    short_window: false,
                    fatal: false,
                    missing_tau: u.tau.is_none(),
                    covariates_complete: u
                        .covariates
                        .as_ref()
                        .map_or(panel.covariate_names.is_empty(), |c| c.iter().flatten().all(|x| x.is_finite())),
                };
                let Some(tau) = u.tau else {
                    d.fatal = !u.is_control;
                    return d;
                };
                if u.count_up_to(tau) == 0 {
                    d.fatal = !u.is_control;
                    return d;
                }
                d.pre_run = u.contiguous_run_ending_at(tau);
                let r = config.window.resolve(u, q);
                d.window = Some(r);
                d.short_window = d.pre_run < r;
                d.gap_in_window = (0..r as i64).any(|k| u.index_of(tau - k).is_none())
                    && u.times.first().is_some_and(|&t0| t0 <= tau - r as i64 + 1);
                d.fatal = r < q + 1 || d.pre_run < q + 1;
                d
            })
            .collect::<Vec<_>>();
        ValidationReport {
            fatal: units.iter().any(|u| u.fatal && !u.is_control),
            balanced: panel.is_balanced(),
            common_tau: panel.common_tau().is_some(),
            units,
        }
    }
}

/// Per-unit anticipation offsets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anticipation {
    #[default]
    None,
    Global(u32),
    PerUnit(BTreeMap<String, u32>),
}

impl Anticipation {
    pub fn for_unit(&self, id: &str) -> u32 {
        match self {
            Anticipation::None => 0,
            Anticipation::Global(d) => *d,
            Anticipation::PerUnit(m) => m.get(id).copied().unwrap_or(0),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Anticipation::None => true,
            Anticipation::Global(d) => *d == 0,
            Anticipation::PerUnit(m) => m.values().all(|&d| d == 0),
        }
    }
}

/// Diagnostics for one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitDiagnostics {
    pub unit_id: String,
    pub is_control: bool,
    pub tau: Option<i64>,
    /// Consecutive observed periods ending at `tau`.
    pub pre_run: usize,
    /// Resolved window length R_i.
    pub window: Option<usize>,
    pub gap_in_window: bool,
    pub short_window: bool,
    /// No feasible window for the requested order.
    pub fatal: bool,
    pub missing_tau: bool,
    pub covariates_complete: bool,
}

/// Validation metadata for a panel under a forecast configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub units: Vec<UnitDiagnostics>,
    pub balanced: bool,
    pub common_tau: bool,
    /// Some treated unit has no feasible window.
    pub fatal: bool,
}

impl ValidationReport {
    pub fn unit(&self, id: &str) -> Option<&UnitDiagnostics> {
        self.units.iter().find(|u| u.unit_id == id)
    }
}

/// Column names of the delimited input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    pub treated_at: String,
    pub control_flag: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            time: "time".into(),
            outcome: "outcome".into(),
            treated_at: "treated_at".into(),
            control_flag: "control_flag".into(),
        }
    }
}

struct UnitBuilder {
    rows: Vec<(i64, f64, Option<Vec<f64>>)>,
    tau: Option<i64>,
    control: Option<bool>,
}

fn parse_num<T: std::str::FromStr>(s: &str, column: &str, line: u64) -> Result<T> {
    s.trim().parse::<T>().map_err(|_| Error::NonNumeric {
        column: column.to_string(),
        value: s.to_string(),
        line,
    })
}

fn parse_flag(s: &str, line: u64, column: &str) -> Result<Option<bool>> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" => Ok(None),
        "1" | "true" | "yes" => Ok(Some(true)),
        "0" | "false" | "no" => Ok(Some(false)),
        _ => Err(Error::NonNumeric {
            column: column.to_string(),
            value: s.to_string(),
            line,
        }),
    }
}

/// Read a panel from delimited text with a header row.
///
/// Required columns: unit, time, outcome, treated_at. An optional control
/// flag column follows; every other column is read as a covariate.
pub fn load_panel<R: Read>(source: R, schema: &Schema) -> Result<PanelData> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let col = |name: &str| find(name).ok_or_else(|| Error::Schema(format!("missing column {name:?}")));
    let unit_col = col(&schema.unit)?;
    let time_col = col(&schema.time)?;
    let outcome_col = col(&schema.outcome)?;
    let tau_col = col(&schema.treated_at)?;
    let control_col = find(&schema.control_flag);
    let reserved = [Some(unit_col), Some(time_col), Some(outcome_col), Some(tau_col), control_col];
    let cov_cols: Vec<usize> = (0..headers.len()).filter(|k| !reserved.contains(&Some(*k))).collect();
    let covariate_names: Vec<String> = cov_cols.iter().map(|&k| headers[k].to_string()).collect();

    let mut order: Vec<String> = Vec::new();
    let mut builders: HashMap<String, UnitBuilder> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let unit = record[unit_col].to_string();
        let time: i64 = parse_num(&record[time_col], &schema.time, line)?;
        let outcome: f64 = parse_num(&record[outcome_col], &schema.outcome, line)?;
        let tau_field = record[tau_col].trim();
        let tau = if tau_field.is_empty() {
            None
        } else {
            Some(parse_num::<i64>(tau_field, &schema.treated_at, line)?)
        };
        let control = match control_col {
            Some(k) => parse_flag(&record[k], line, &schema.control_flag)?,
            None => None,
        };
        let covs = if cov_cols.is_empty() {
            None
        } else {
            Some(
                cov_cols
                    .iter()
                    .map(|&k| {
                        let v = record[k].trim();
                        if v.is_empty() {
                            Ok(f64::NAN)
                        } else {
                            parse_num::<f64>(v, &headers[k], line)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        };

        let b = builders.entry(unit.clone()).or_insert_with(|| {
            order.push(unit.clone());
            UnitBuilder {
                rows: Vec::new(),
                tau,
                control,
            }
        });
        if b.tau != tau {
            return Err(Error::Schema(format!("unit {unit}: inconsistent {} values", schema.treated_at)));
        }
        if control.is_some() && b.control.is_some() && b.control != control {
            return Err(Error::Schema(format!("unit {unit}: inconsistent {} values", schema.control_flag)));
        }
        b.control = b.control.or(control);
        b.rows.push((time, outcome, covs));
    }

    let mut units = Vec::with_capacity(order.len());
    for id in order {
        let mut b = builders.remove(&id).expect("builder exists for recorded unit");
        if b.tau.is_none() && b.control.is_none() {
            return Err(Error::MissingTreatment(id));
        }
        b.rows.sort_by_key(|r| r.0);
        if let Some(w) = b.rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateObservation { unit: id, time: w[0].0 });
        }
        let covariates = (!cov_cols.is_empty()).then(|| b.rows.iter().map(|r| r.2.clone().unwrap_or_default()).collect());
        units.push(UnitSeries {
            unit_id: id,
            times: b.rows.iter().map(|r| r.0).collect(),
            outcomes: b.rows.iter().map(|r| r.1).collect(),
            tau: b.tau,
            is_control: b.control.unwrap_or(false),
            covariates,
            time_offset: 0,
            anticipation: 0,
        });
    }
    PanelData::new(units, covariate_names)
}

pub fn load_panel_path(path: impl AsRef<Path>, schema: &Schema) -> Result<PanelData> {
    let file = std::fs::File::open(path)?;
    load_panel(std::io::BufReader::new(file), schema)
}

/// Write a panel in the layout read by [`load_panel`].
///
/// The control flag column is emitted only when the panel has controls.
pub fn write_panel<W: Write>(panel: &PanelData, sink: W) -> Result<()> {
    let schema = Schema::default();
    let with_flag = panel.has_controls();
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec![schema.unit, schema.time, schema.outcome, schema.treated_at];
    if with_flag {
        header.push(schema.control_flag);
    }
    header.extend(panel.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for u in &panel.units {
        for (k, (t, y)) in u.times.iter().zip(&u.outcomes).enumerate() {
            let mut row = vec![
                u.unit_id.clone(),
                t.to_string(),
                y.to_string(),
                u.tau.map(|t| t.to_string()).unwrap_or_default(),
            ];
            if with_flag {
                row.push(if u.is_control { "1" } else { "0" }.to_string());
            }
            if let Some(c) = &u.covariates {
                row.extend(c[k].iter().map(|x| if x.is_nan() { String::new() } else { x.to_string() }));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
