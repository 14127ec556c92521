//! Command-line front end: `simulate` runs the 24-hour scenario and writes
//! the artifact set, `clear-hour` prints one hour's record as JSON.
//!
//! Exit codes: 0 success, 1 I/O or solver failure, 2 usage, schema,
//! validation or range errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use balmarket::grid::{read_system, AggregationMode, SettlementMode, ValidatedSystem};
use balmarket::scenario::{run_simulation, simulate_hour, WindScenario};
use balmarket::{report, Error};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "balmarket", version, about = "Hierarchical TSO/DSO balancing market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run all 24 hours and write results.json, the CSV series and summary.json.
    Simulate {
        #[command(flatten)]
        inputs: Inputs,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Clear a single hour and print its record as JSON.
    ClearHour {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        hour: usize,
    },
}

#[derive(Debug, Args)]
struct Inputs {
    #[arg(long)]
    network: PathBuf,
    /// One feeder file per DSO; repeat the flag.
    #[arg(long, required = true, num_args = 1..)]
    feeders: Vec<PathBuf>,
    #[arg(long)]
    bids: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    settlement: Option<Settlement>,
    #[arg(long)]
    loss_price: Option<f64>,
    #[arg(long, value_enum)]
    aggregation: Option<Aggregation>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Settlement {
    PayAsBid,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Aggregation {
    PassThrough,
    LossAdjusted,
}

impl Inputs {
    fn load(&self) -> Result<(ValidatedSystem, WindScenario), Error> {
        let mut system = read_system(&self.network, &self.feeders, &self.bids, &self.config)?;
        if let Some(s) = self.settlement {
            system.config.settlement_mode = match s {
                Settlement::PayAsBid => SettlementMode::PayAsBid,
                Settlement::Uniform => SettlementMode::Uniform,
            };
        }
        if let Some(p) = self.loss_price {
            system.config.loss_price = p;
        }
        if let Some(a) = self.aggregation {
            system.config.aggregation = match a {
                Aggregation::PassThrough => AggregationMode::PassThrough,
                Aggregation::LossAdjusted => AggregationMode::LossAdjusted,
            };
        }
        let system = ValidatedSystem::new(system)?;
        let scenario = WindScenario::load(&self.scenario)?;
        let violations = scenario.validate(system.network().bus_count());
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        Ok((system, scenario))
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::AtHour { source, .. } => exit_code(source),
        Error::Schema { .. } | Error::Invalid(_) | Error::HourOutOfRange(_) | Error::UnknownNode { .. } | Error::UnknownBus(_) => EXIT_INVALID,
        _ => EXIT_FAILURE,
    }
}

fn report_error(err: &Error, stderr: &mut dyn Write) -> i32 {
    let _ = writeln!(stderr, "error: {err}");
    for v in err.violations() {
        let _ = writeln!(stderr, "  {v}");
    }
    exit_code(err)
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{text}") } else { write!(stdout, "{text}") };
            return code;
        }
    };
    match cli.command {
        Command::Simulate { inputs, out } => {
            let (system, scenario) = match inputs.load() {
                Ok(v) => v,
                Err(e) => return report_error(&e, stderr),
            };
            let records = match run_simulation(&system, &scenario) {
                Ok(r) => r,
                Err(e) => return report_error(&e, stderr),
            };
            let art = match report::write_artifacts(&records, &out) {
                Ok(a) => a,
                Err(e) => return report_error(&e, stderr),
            };
            let s = &art.summary;
            let _ = writeln!(stdout, "{} hours ({} active) written to {}", s.hours, s.active_hours, out.display());
            let _ = writeln!(
                stdout,
                "TSO cost {} vs conventional {}: {}",
                report::fmt_num(s.total_tso_cost),
                report::fmt_num(s.total_conventional_cost),
                serde_json::to_string(&s.cheaper_option).unwrap_or_default().trim_matches('"')
            );
            for d in &s.dsos {
                let _ = writeln!(
                    stdout,
                    "{}: {} MW, revenue {}, profit {}",
                    balmarket::central::dso_name(d.dso),
                    report::fmt_num(d.accepted_mw),
                    report::fmt_num(d.revenue),
                    report::fmt_num(d.profit)
                );
            }
            EXIT_OK
        }
        Command::ClearHour { inputs, hour } => {
            let (system, scenario) = match inputs.load() {
                Ok(v) => v,
                Err(e) => return report_error(&e, stderr),
            };
            match simulate_hour(&system, &scenario, hour) {
                Ok(record) => {
                    let text = serde_json::to_string_pretty(&record).expect("records always serialize");
                    let _ = writeln!(stdout, "{text}");
                    EXIT_OK
                }
                Err(e) => report_error(&e, stderr),
            }
        }
    }
}
