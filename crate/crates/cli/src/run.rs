//! Subcommand bodies and report serialization.

use std::io::Write;
use std::path::Path;

use fte_core::simulate::{preset, run_monte_carlo_at, McReport, Preset};
use fte_core::{
    covariate_fat_heterogeneous, dfat, fat, load_panel_path, model_based_fat_with_stage, placebo_fat, DfatEstimate,
    FatEstimate, MbConfig, PanelData, ValidationReport,
};
use serde::Serialize;

use crate::config::{EstimatorChoice, RunConfig};
use crate::{Failure, EXIT_ESTIMATION};

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Estimate,
    Placebo,
    Dfat,
    Simulate,
    Validate,
}

/// Rendered report, plus a failure to report after the files are written.
pub struct Output {
    pub json: String,
    pub csv: String,
    pub deferred: Option<Failure>,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    schema: u32,
    command: Kind,
    config: &'a RunConfig,
    results: T,
}

/// Compact first-stage summary for model-based rows.
#[derive(Debug, Clone, Serialize)]
pub struct StageSummary {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub n_units: usize,
    pub weak: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateRow {
    pub estimator: EstimatorChoice,
    pub q: usize,
    pub r: Option<usize>,
    pub lag: Option<u32>,
    pub h: u32,
    pub estimate: Option<FatEstimate>,
    pub first_stage: Option<StageSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DfatRow {
    pub q: usize,
    pub r: Option<usize>,
    pub h: u32,
    pub estimate: DfatEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateRow {
    pub q: usize,
    pub report: ValidationReport,
}

fn render<T: Serialize>(kind: Kind, config: &RunConfig, results: T) -> Result<String, Failure> {
    let report = Report {
        schema: SCHEMA_VERSION,
        command: kind,
        config,
        results,
    };
    let mut s = serde_json::to_string_pretty(&report).map_err(|e| Failure::usage(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn load(config: &RunConfig) -> Result<PanelData, Failure> {
    let path = config.input.as_ref().ok_or_else(|| Failure::usage("--input is required"))?;
    Ok(load_panel_path(path, &config.schema)?)
}

/// Refuse to estimate when some treated unit has no feasible window.
fn check_fatal(panel: &PanelData, config: &RunConfig, q: usize) -> Result<(), Failure> {
    let report = panel.validate(&config.forecast(q));
    if report.fatal {
        let ids: Vec<&str> = report
            .units
            .iter()
            .filter(|u| u.fatal)
            .map(|u| u.unit_id.as_str())
            .collect();
        return Err(Failure::data(format!(
            "no feasible window for q = {q} in unit(s) {}",
            ids.join(", ")
        )));
    }
    Ok(())
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>) -> Result<String, Failure> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        write(&mut w).map_err(|e| Failure::usage(e.to_string()))?;
        w.flush().map_err(|e| Failure::usage(e.to_string()))?;
    }
    String::from_utf8(buf).map_err(|e| Failure::usage(e.to_string()))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn estimate_csv(kind: Kind, rows: &[EstimateRow]) -> Result<String, Failure> {
    csv_string(|w| {
        w.write_record([
            "command", "estimator", "q", "r", "lag", "h", "point", "se", "ci_lo", "ci_hi", "level", "n_used",
            "n_dropped", "error",
        ])?;
        let command = match kind {
            Kind::Placebo => "placebo",
            _ => "estimate",
        };
        for row in rows {
            let e = row.estimate.as_ref();
            w.write_record([
                command.to_string(),
                estimator_name(row.estimator).to_string(),
                row.q.to_string(),
                opt(row.r),
                opt(row.lag),
                row.h.to_string(),
                opt(e.map(|e| e.point)),
                opt(e.and_then(|e| e.se)),
                opt(e.and_then(|e| e.ci).map(|c| c.0)),
                opt(e.and_then(|e| e.ci).map(|c| c.1)),
                opt(e.map(|e| e.level)),
                opt(e.map(|e| e.n_used)),
                opt(e.map(|e| e.dropped_units.len())),
                row.error.clone().unwrap_or_default(),
            ])?;
        }
        Ok(())
    })
}

fn estimator_name(e: EstimatorChoice) -> &'static str {
    match e {
        EstimatorChoice::Pr => "pr",
        EstimatorChoice::Mb => "mb",
        EstimatorChoice::CovariateHet => "covariate_het",
    }
}

fn estimate_one(panel: &PanelData, config: &RunConfig, q: usize, h: u32) -> fte_core::Result<EstimateRow> {
    let forecast = config.forecast(q);
    let (estimate, stage) = match config.estimator {
        EstimatorChoice::Pr => (fat(panel, &forecast, h)?, None),
        EstimatorChoice::Mb => {
            let mut mb = MbConfig::anderson_hsiao(forecast, config.instrument_lag, config.detrend);
            if let Some(c) = &config.covariates {
                mb = mb.with_covariates(c.clone());
            }
            model_based_fat_with_stage(panel, &mb, h)?
        }
        EstimatorChoice::CovariateHet => {
            let names = config
                .covariates
                .clone()
                .unwrap_or_else(|| panel.covariate_names().to_vec());
            (covariate_fat_heterogeneous(panel, &forecast, h, &names)?, None)
        }
    };
    Ok(EstimateRow {
        estimator: config.estimator,
        q,
        r: config.r_value(),
        lag: None,
        h,
        estimate: Some(estimate.with_level(config.level)),
        first_stage: stage.map(|s| StageSummary {
            n_units: s.n_units(),
            names: s.names,
            beta: s.beta,
            weak: s.weak,
        }),
        error: None,
    })
}

fn cmd_estimate(config: &RunConfig) -> Result<Output, Failure> {
    let panel = load(config)?;
    let mut rows = Vec::new();
    for &q in &config.q {
        check_fatal(&panel, config, q)?;
        for &h in &config.h {
            rows.push(estimate_one(&panel, config, q, h)?);
        }
    }
    Ok(Output {
        csv: estimate_csv(Kind::Estimate, &rows)?,
        json: render(Kind::Estimate, config, &rows)?,
        deferred: None,
    })
}

fn cmd_placebo(config: &RunConfig) -> Result<Output, Failure> {
    if config.estimator != EstimatorChoice::Pr {
        return Err(Failure::usage("placebo supports only the pr estimator"));
    }
    let panel = load(config)?;
    let mut rows = Vec::new();
    for &q in &config.q {
        let forecast = config.forecast(q);
        for &lag in &config.lags {
            for &h in &config.h {
                let (estimate, error) = match placebo_fat(&panel, &forecast, lag, h) {
                    Ok(e) => (Some(e.with_level(config.level)), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                rows.push(EstimateRow {
                    estimator: EstimatorChoice::Pr,
                    q,
                    r: config.r_value(),
                    lag: Some(lag),
                    h,
                    estimate,
                    first_stage: None,
                    error,
                });
            }
        }
    }
    let deferred = rows.iter().all(|r| r.error.is_some()).then(|| Failure {
        code: EXIT_ESTIMATION,
        message: "every placebo estimate failed".into(),
    });
    Ok(Output {
        csv: estimate_csv(Kind::Placebo, &rows)?,
        json: render(Kind::Placebo, config, &rows)?,
        deferred,
    })
}

fn cmd_dfat(config: &RunConfig) -> Result<Output, Failure> {
    let panel = load(config)?;
    if !panel.has_controls() {
        return Err(Failure::data("dfat needs control units, but the panel has none"));
    }
    let mut rows = Vec::new();
    for &q in &config.q {
        check_fatal(&panel, config, q)?;
        for &h in &config.h {
            let estimate = dfat(&panel, &config.forecast(q), h)?.with_level(config.level);
            rows.push(DfatRow {
                q,
                r: config.r_value(),
                h,
                estimate,
            });
        }
    }
    let csv = csv_string(|w| {
        w.write_record([
            "q", "r", "h", "point", "se", "ci_lo", "ci_hi", "level", "fat_treated", "fat_control", "n_treated",
            "n_control",
        ])?;
        for row in &rows {
            let e = &row.estimate;
            w.write_record([
                row.q.to_string(),
                opt(row.r),
                row.h.to_string(),
                e.point.to_string(),
                opt(e.se),
                opt(e.ci.map(|c| c.0)),
                opt(e.ci.map(|c| c.1)),
                e.level.to_string(),
                e.fat_treated.point.to_string(),
                e.fat_control.point.to_string(),
                e.fat_treated.n_used.to_string(),
                e.fat_control.n_used.to_string(),
            ])?;
        }
        Ok(())
    })?;
    Ok(Output {
        csv,
        json: render(Kind::Dfat, config, &rows)?,
        deferred: None,
    })
}

fn cmd_validate(config: &RunConfig) -> Result<Output, Failure> {
    let panel = load(config)?;
    let rows: Vec<ValidateRow> = config
        .q
        .iter()
        .map(|&q| ValidateRow {
            q,
            report: panel.validate(&config.forecast(q)),
        })
        .collect();
    let csv = csv_string(|w| {
        w.write_record([
            "q",
            "unit_id",
            "is_control",
            "tau",
            "pre_run",
            "window",
            "gap_in_window",
            "short_window",
            "fatal",
            "missing_tau",
            "covariates_complete",
        ])?;
        for row in &rows {
            for u in &row.report.units {
                w.write_record([
                    row.q.to_string(),
                    u.unit_id.clone(),
                    u.is_control.to_string(),
                    opt(u.tau),
                    u.pre_run.to_string(),
                    opt(u.window),
                    u.gap_in_window.to_string(),
                    u.short_window.to_string(),
                    u.fatal.to_string(),
                    u.missing_tau.to_string(),
                    u.covariates_complete.to_string(),
                ])?;
            }
        }
        Ok(())
    })?;
    Ok(Output {
        csv,
        json: render(Kind::Validate, config, &rows)?,
        deferred: None,
    })
}

fn cmd_simulate(config: &RunConfig) -> Result<Output, Failure> {
    let design: Preset = match (&config.spec_file, &config.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::usage(format!("invalid preset file: {e}")))?
        }
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(Failure::usage("simulate needs --preset or --spec-file")),
    };
    let reps = config.reps.unwrap_or(design.default_reps);
    let reports: Vec<McReport> = design
        .scenarios
        .iter()
        .map(|s| run_monte_carlo_at(&s.name, &s.spec, &design.grid, reps, config.seed, config.level))
        .collect::<fte_core::Result<_>>()?;
    let mut csv = String::new();
    let mut last_header: Option<String> = None;
    for report in &reports {
        let mut buf = Vec::new();
        report.write_table_csv(&mut buf)?;
        let text = String::from_utf8(buf).map_err(|e| Failure::usage(e.to_string()))?;
        let (header, body) = text.split_once('\n').unwrap_or((&text, ""));
        if last_header.as_deref() != Some(header) {
            if last_header.is_some() {
                csv.push('\n');
            }
            csv.push_str(header);
            csv.push('\n');
            last_header = Some(header.to_string());
        }
        csv.push_str(body);
    }
    #[derive(Serialize)]
    struct SimResults<'a> {
        preset: &'a str,
        n_reps: usize,
        reports: &'a [McReport],
    }
    let json = render(
        Kind::Simulate,
        config,
        SimResults {
            preset: &design.name,
            n_reps: reps,
            reports: &reports,
        },
    )?;
    Ok(Output {
        json,
        csv,
        deferred: None,
    })
}

pub fn execute(kind: Kind, config: &RunConfig) -> Result<Output, Failure> {
    match kind {
        Kind::Estimate => cmd_estimate(config),
        Kind::Placebo => cmd_placebo(config),
        Kind::Dfat => cmd_dfat(config),
        Kind::Simulate => cmd_simulate(config),
        Kind::Validate => cmd_validate(config),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

/// Write the report files; JSON goes to stdout when no path is given.
pub fn emit(output: &Output, json: Option<&Path>, csv: Option<&Path>) -> Result<(), Failure> {
    match json {
        Some(path) => write_file(path, &output.json)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(output.json.as_bytes())
                .map_err(|e| Failure::data(format!("cannot write to stdout: {e}")))?;
        }
    }
    if let Some(path) = csv {
        write_file(path, &output.csv)?;
    }
    match &output.deferred {
        Some(f) => Err(Failure {
            code: f.code,
            message: f.message.clone(),
        }),
        None => Ok(()),
    }
}
