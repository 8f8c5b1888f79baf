//! `fte`: forecasted treatment effects from the command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 estimation error.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{EstimatorChoice, GapChoice, List, PartialConfig, WindowArg};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_ESTIMATION: u8 = 3;

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<fte_core::Error> for Failure {
    fn from(e: fte_core::Error) -> Self {
        use fte_core::Error as E;
        let code = match &e {
            E::InvalidConfig(_) | E::UnknownPreset(_) | E::InvalidSpec(_) => EXIT_USAGE,
            E::Io(_)
            | E::Csv(_)
            | E::Schema(_)
            | E::DuplicateObservation { .. }
            | E::NonNumeric { .. }
            | E::MissingTreatment(_)
            | E::MissingTau(_)
            | E::Window { .. }
            | E::TooFewObservations { .. }
            | E::Unbalanced(_) => EXIT_DATA,
            E::RankDeficient { .. } | E::NoUsableUnits | E::FirstStage(_) => EXIT_ESTIMATION,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fte", version, about = "Forecasted treatment effects for short panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// FAT for every (q, h) pair.
    Estimate(RunArgs),
    /// Placebo FAT with treatment dates moved back by each lag.
    Placebo(RunArgs),
    /// Treated FAT minus control FAT.
    Dfat(RunArgs),
    /// Monte Carlo study for a named preset or a preset file.
    Simulate(RunArgs),
    /// Per-unit window diagnostics.
    Validate(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Panel CSV with columns unit,time,outcome,treated_at[,control_flag][,covariates...].
    #[arg(long)]
    input: Option<PathBuf>,
    /// Polynomial orders, e.g. `0,1,2` or `0..3`.
    #[arg(long)]
    q: Option<List<usize>>,
    /// Pre-treatment window length, or `all` for each unit's full run.
    #[arg(long)]
    r: Option<WindowArg>,
    /// Horizons, e.g. `1..5`.
    #[arg(long)]
    h: Option<List<u32>>,
    /// Placebo lags, e.g. `0..3`.
    #[arg(long)]
    lags: Option<List<u32>>,
    /// Anticipation periods before the treatment date.
    #[arg(long)]
    delta: Option<u32>,
    /// Confidence level of the intervals.
    #[arg(long)]
    level: Option<f64>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorChoice>,
    /// Anderson–Hsiao instrument lag for the model-based estimator.
    #[arg(long)]
    instrument_lag: Option<u32>,
    /// Double-difference the first stage to remove linear trends.
    #[arg(long)]
    detrend: Option<bool>,
    /// Covariate columns used by `covariate_het` (default: all).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long, value_enum)]
    gap_policy: Option<GapChoice>,
    #[arg(long)]
    unit_col: Option<String>,
    #[arg(long)]
    time_col: Option<String>,
    #[arg(long)]
    outcome_col: Option<String>,
    #[arg(long)]
    treated_col: Option<String>,
    #[arg(long)]
    control_col: Option<String>,
    /// Simulation preset name.
    #[arg(long)]
    preset: Option<String>,
    /// JSON preset definition, used instead of `--preset`.
    #[arg(long)]
    spec_file: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo replications (default: the preset's own count).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// JSON file with any of the settings above; its values win over flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl RunArgs {
    fn into_partial(self) -> (PartialConfig, Option<PathBuf>) {
        let schema_flags = [&self.unit_col, &self.time_col, &self.outcome_col, &self.treated_col, &self.control_col];
        let schema = schema_flags.iter().any(|f| f.is_some()).then(|| {
            let d = fte_core::Schema::default();
            fte_core::Schema {
                unit: self.unit_col.clone().unwrap_or(d.unit),
                time: self.time_col.clone().unwrap_or(d.time),
                outcome: self.outcome_col.clone().unwrap_or(d.outcome),
                treated_at: self.treated_col.clone().unwrap_or(d.treated_at),
                control_flag: self.control_col.clone().unwrap_or(d.control_flag),
            }
        });
        let partial = PartialConfig {
            input: self.input,
            schema,
            q: self.q.map(|l| l.0),
            r: self.r,
            h: self.h.map(|l| l.0),
            lags: self.lags.map(|l| l.0),
            delta: self.delta,
            level: self.level,
            estimator: self.estimator,
            instrument_lag: self.instrument_lag,
            detrend: self.detrend,
            covariates: self.covariates,
            gap_policy: self.gap_policy,
            preset: self.preset,
            spec_file: self.spec_file,
            seed: self.seed,
            reps: self.reps,
            out_json: self.out_json,
            out_csv: self.out_csv,
        };
        (partial, self.config)
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    let (kind, args) = match command {
        Command::Estimate(a) => (run::Kind::Estimate, a),
        Command::Placebo(a) => (run::Kind::Placebo, a),
        Command::Dfat(a) => (run::Kind::Dfat, a),
        Command::Simulate(a) => (run::Kind::Simulate, a),
        Command::Validate(a) => (run::Kind::Validate, a),
    };
    let (flags, config_path) = args.into_partial();
    let merged = match config_path {
        Some(path) => PartialConfig::from_json_file(&path)?.over(flags),
        None => flags,
    };
    let out_json = merged.out_json.clone();
    let out_csv = merged.out_csv.clone();
    let config = merged.resolve()?;
    let output = run::execute(kind, &config)?;
    run::emit(&output, out_json.as_deref(), out_csv.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
