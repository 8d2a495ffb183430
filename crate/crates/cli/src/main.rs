//! `orbitscope`: batch front end for the dilation-group toolkit.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde_json::{Map, Value};

use report::CliError;

#[derive(Parser, Debug)]
#[command(name = "orbitscope", version, about = "Orbit, section and wavelet analysis for abelian matrix dilation groups")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Report path (stdout when omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override the tolerance of the group spec.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Seed for every sampling step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Gauss-Legendre order per panel.
    #[arg(long, global = true)]
    pub quad_order: Option<usize>,
    /// Grid size: points per axis for `strata`, spatial grid size for `wavelet` / `cwt`.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrability verdict for a group spec.
    Classify {
        #[arg(long, required_unless_present = "table")]
        input: Option<PathBuf>,
        /// Emit verdicts for the five reference families instead.
        #[arg(long, conflicts_with = "input")]
        table: bool,
    },
    /// Orbit-dimension census over a sample cloud or grid.
    Strata {
        #[arg(long)]
        input: PathBuf,
        /// Number of cloud samples (ignored with --grid).
        #[arg(long, default_value_t = 4096)]
        samples: usize,
        /// Half-width of the sampled cube.
        #[arg(long, default_value_t = 2.0)]
        radius: f64,
        /// Fraction of samples the top stratum must exceed.
        #[arg(long, default_value_t = 0.99)]
        threshold: f64,
        /// Per-point orbit dimensions as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Section points for diagonal-plus-nilpotent and Case 1 families (JSON lines).
    Section {
        #[arg(long)]
        input: PathBuf,
        /// JSON array of points.
        #[arg(long)]
        points: PathBuf,
    },
    /// Quasi-section verdict for a union of boxes.
    Quasisection {
        #[arg(long)]
        input: PathBuf,
        /// `{"boxes": [...], "u": {...}}`.
        #[arg(long)]
        boxes: PathBuf,
    },
    /// Band-limited admissible vector from a quasi-section candidate.
    Wavelet {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
        /// Outer set scale factor when the box file has no "outer" entry.
        #[arg(long, default_value_t = orbitscope::wavelet::DEFAULT_ENLARGEMENT)]
        enlargement: f64,
        /// Build even if the quasi-section check fails.
        #[arg(long)]
        force: bool,
        /// Export the sampled ĝ lattice as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Lattice points per axis for the ĝ export.
        #[arg(long)]
        lattice: Option<usize>,
        /// Covered samples for the Calderón check.
        #[arg(long, default_value_t = 100)]
        calderon_samples: usize,
        /// Spatial spacing for the L¹ estimate.
        #[arg(long)]
        spacing: Option<f64>,
        /// Skip the L¹ estimate.
        #[arg(long)]
        no_l1: bool,
    },
    /// Discrete transform of a signal with a wavelet built by `wavelet`.
    Cwt {
        /// Report written by `wavelet`.
        #[arg(long)]
        wavelet: PathBuf,
        /// CSV with one sample per row (`re` or `re,im`), grid points in row-major order.
        #[arg(long)]
        signal: Option<PathBuf>,
        /// Band of the random test signal used when --signal is absent.
        #[arg(long, default_value_t = 0.9)]
        band: f64,
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long, default_value_t = orbitscope::wavelet::DEFAULT_PARAM_STEP)]
        param_step: f64,
        /// Coefficient slices as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("ORBITSCOPE_THREADS") else { return Ok(()) };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::usage(format!("ORBITSCOPE_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::usage(e.to_string()))
}

/// Flags given on the command line: raw strings, `true` for switches.
fn explicit_flags(matches: &ArgMatches) -> Map<String, Value> {
    let Some((name, sub)) = matches.subcommand() else { return Map::new() };
    let cmd = Cli::command();
    let Some(def) = cmd.find_subcommand(name) else { return Map::new() };
    def.get_arguments()
        .chain(cmd.get_arguments())
        .filter(|arg| sub.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine))
        .filter_map(|arg| {
            let id = arg.get_id().as_str();
            let value = if arg.get_action().takes_values() {
                let raw: Vec<String> = sub.get_raw(id)?.map(|v| v.to_string_lossy().into_owned()).collect();
                match raw.as_slice() {
                    [one] => Value::String(one.clone()),
                    _ => Value::from(raw),
                }
            } else {
                Value::Bool(true)
            };
            Some((id.to_string(), value))
        })
        .collect()
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = init_threads().and_then(|()| commands::run(&cli, explicit_flags(&matches)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
