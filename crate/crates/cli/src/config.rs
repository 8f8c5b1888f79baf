//! Run configuration assembled from flags and an optional JSON file.
//!
//! Every field may come from either source. When both set a field, the
//! JSON file wins.

use std::path::PathBuf;
use std::str::FromStr;

use clap::ValueEnum;
use fte_core::{Anticipation, BasisSpec, ForecastConfig, GapPolicy, Schema, WindowSpec};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum EstimatorChoice {
    /// Polynomial-regression FAT.
    Pr,
    /// Model-based FAT with an Anderson–Hsiao first stage.
    Mb,
    /// FAT with unit-specific covariate coefficients.
    CovariateHet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GapChoice {
    Error,
    Shrink,
}

/// Pre-treatment window length: a fixed R or each unit's full run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowArg {
    Fixed(usize),
    All,
}

impl FromStr for WindowArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(Self::All);
        }
        s.parse::<usize>()
            .map(Self::Fixed)
            .map_err(|_| format!("window must be a positive integer or \"all\", got {s:?}"))
    }
}

impl Serialize for WindowArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Fixed(r) => s.serialize_u64(*r as u64),
            Self::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for WindowArg {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(r) => Ok(Self::Fixed(r)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Parse `"1,2,5"`, `"1..5"` (inclusive) or a mix such as `"0,2..4"`.
pub fn parse_list<T>(s: &str) -> Result<Vec<T>, String>
where
    T: FromStr + Copy + PartialOrd + TryFrom<u64> + Into<u64>,
{
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || format!("cannot parse {part:?} as a number or range");
        if let Some((a, b)) = part.split_once("..") {
            let lo: u64 = a.trim().parse().map_err(|_| bad())?;
            let hi: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            if lo > hi {
                return Err(format!("empty range {part:?}"));
            }
            for v in lo..=hi {
                out.push(T::try_from(v).map_err(|_| bad())?);
            }
        } else {
            out.push(part.parse::<T>().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err("list is empty".into());
    }
    Ok(out)
}

pub fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    parse_list::<u64>(s).map(|v| v.into_iter().map(|x| x as usize).collect())
}

pub fn parse_u32_list(s: &str) -> Result<Vec<u32>, String> {
    parse_list::<u32>(s)
}

/// A list flag value, kept whole so clap does not treat it as repeated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct List<T>(pub Vec<T>);

impl FromStr for List<usize> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_usize_list(s).map(List)
    }
}

impl FromStr for List<u32> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_u32_list(s).map(List)
    }
}

/// Optional settings shared by flags and the JSON config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub input: Option<PathBuf>,
    pub schema: Option<Schema>,
    pub q: Option<Vec<usize>>,
    pub r: Option<WindowArg>,
    pub h: Option<Vec<u32>>,
    pub lags: Option<Vec<u32>>,
    pub delta: Option<u32>,
    pub level: Option<f64>,
    pub estimator: Option<EstimatorChoice>,
    pub instrument_lag: Option<u32>,
    pub detrend: Option<bool>,
    pub covariates: Option<Vec<String>>,
    pub gap_policy: Option<GapChoice>,
    pub preset: Option<String>,
    pub spec_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub out_json: Option<PathBuf>,
    pub out_csv: Option<PathBuf>,
}

impl PartialConfig {
    /// Fields set in `self` override those in `base`.
    pub fn over(self, base: PartialConfig) -> PartialConfig {
        PartialConfig {
            input: self.input.or(base.input),
            schema: self.schema.or(base.schema),
            q: self.q.or(base.q),
            r: self.r.or(base.r),
            h: self.h.or(base.h),
            lags: self.lags.or(base.lags),
            delta: self.delta.or(base.delta),
            level: self.level.or(base.level),
            estimator: self.estimator.or(base.estimator),
            instrument_lag: self.instrument_lag.or(base.instrument_lag),
            detrend: self.detrend.or(base.detrend),
            covariates: self.covariates.or(base.covariates),
            gap_policy: self.gap_policy.or(base.gap_policy),
            preset: self.preset.or(base.preset),
            spec_file: self.spec_file.or(base.spec_file),
            seed: self.seed.or(base.seed),
            reps: self.reps.or(base.reps),
            out_json: self.out_json.or(base.out_json),
            out_csv: self.out_csv.or(base.out_csv),
        }
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn resolve(self) -> Result<RunConfig, Failure> {
        let q = self.q.unwrap_or_else(|| vec![1]);
        let h = self.h.unwrap_or_else(|| vec![1]);
        let level = self.level.unwrap_or(fte_core::estimators::DEFAULT_LEVEL);
        if q.is_empty() {
            return Err(Failure::usage("the q list must not be empty"));
        }
        if h.is_empty() || h.contains(&0) {
            return Err(Failure::usage("horizons must be at least 1"));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(Failure::usage("confidence level must lie in (0, 1)"));
        }
        if let Some(WindowArg::Fixed(0)) = self.r {
            return Err(Failure::usage("window length must be at least 1"));
        }
        Ok(RunConfig {
            input: self.input,
            schema: self.schema.unwrap_or_default(),
            q,
            r: self.r.unwrap_or(WindowArg::All),
            h,
            lags: self.lags.unwrap_or_else(|| vec![0, 1, 2, 3]),
            delta: self.delta.unwrap_or(0),
            level,
            estimator: self.estimator.unwrap_or(EstimatorChoice::Pr),
            instrument_lag: self.instrument_lag.unwrap_or(3),
            detrend: self.detrend.unwrap_or(true),
            covariates: self.covariates,
            gap_policy: self.gap_policy.unwrap_or(GapChoice::Error),
            preset: self.preset,
            spec_file: self.spec_file,
            seed: self.seed.unwrap_or(1),
            reps: self.reps,
        })
    }
}

/// Fully resolved settings, echoed into every JSON report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub schema: Schema,
    pub q: Vec<usize>,
    pub r: WindowArg,
    pub h: Vec<u32>,
    pub lags: Vec<u32>,
    pub delta: u32,
    pub level: f64,
    pub estimator: EstimatorChoice,
    pub instrument_lag: u32,
    pub detrend: bool,
    pub covariates: Option<Vec<String>>,
    pub gap_policy: GapChoice,
    pub preset: Option<String>,
    pub spec_file: Option<PathBuf>,
    pub seed: u64,
    pub reps: Option<usize>,
}

impl RunConfig {
    pub fn forecast(&self, q: usize) -> ForecastConfig {
        let window = match self.r {
            WindowArg::Fixed(r) => WindowSpec::Fixed(r),
            WindowArg::All => WindowSpec::All,
        };
        let anticipation = if self.delta == 0 {
            Anticipation::None
        } else {
            Anticipation::Global(self.delta)
        };
        let gap = match self.gap_policy {
            GapChoice::Error => GapPolicy::Error,
            GapChoice::Shrink => GapPolicy::Shrink,
        };
        ForecastConfig::new(BasisSpec::polynomial(q), window)
            .with_anticipation(anticipation)
            .with_gap_policy(gap)
    }

    /// Window length as reported in output rows; `None` for per-unit windows.
    pub fn r_value(&self) -> Option<usize> {
        match self.r {
            WindowArg::Fixed(r) => Some(r),
            WindowArg::All => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_and_ranges() {
        assert_eq!(parse_u32_list("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_u32_list("0, 2..=3,7").unwrap(), vec![0, 2, 3, 7]);
        assert_eq!(parse_usize_list("2").unwrap(), vec![2]);
        assert!(parse_u32_list("").is_err());
        assert!(parse_u32_list("3..1").is_err());
        assert!(parse_u32_list("a").is_err());
    }

    #[test]
    fn window_argument() {
        assert_eq!("all".parse::<WindowArg>().unwrap(), WindowArg::All);
        assert_eq!("5".parse::<WindowArg>().unwrap(), WindowArg::Fixed(5));
        assert!("-1".parse::<WindowArg>().is_err());
        let w: WindowArg = serde_json::from_str("\"ALL\"").unwrap();
        assert_eq!(w, WindowArg::All);
        let w: WindowArg = serde_json::from_str("4").unwrap();
        assert_eq!(w, WindowArg::Fixed(4));
    }

    #[test]
    fn file_values_win() {
        let flags = PartialConfig {
            q: Some(vec![0]),
            level: Some(0.9),
            ..Default::default()
        };
        let file = PartialConfig {
            q: Some(vec![2]),
            ..Default::default()
        };
        let c = file.over(flags).resolve().unwrap();
        assert_eq!(c.q, vec![2]);
        assert_eq!(c.level, 0.9);
    }

    #[test]
    fn invalid_settings_are_usage_errors() {
        let bad_h = PartialConfig {
            h: Some(vec![0]),
            ..Default::default()
        };
        assert_eq!(bad_h.resolve().unwrap_err().code, crate::EXIT_USAGE);
        let bad_level = PartialConfig {
            level: Some(1.5),
            ..Default::default()
        };
        assert_eq!(bad_level.resolve().unwrap_err().code, crate::EXIT_USAGE);
    }
}
