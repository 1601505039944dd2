//! `prime-race`: densities, spectral sums, constructions and empirical races
//! from the command line.

mod commands;
mod output;

use clap::{Args, Parser, Subcommand, ValueEnum};
use race_core::config::{Calibration, CALIBRATION};
use race_core::error::RaceError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "prime-race", version, about = "Prime number races with many competitors")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    pub format: Format,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for cached smoothed sums.
    #[arg(long, env = "PRIME_RACE_CACHE", global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Smoothing parameter y; defaults to max(q², 10⁶).
    #[arg(long, global = true, value_parser = parse_real)]
    pub y: Option<f64>,
    /// How B_q(a, b) is computed.
    #[arg(long, value_enum, default_value_t = Route::Residue, global = true)]
    pub route: Route,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CalibrationArgs {
    #[arg(long, global = true, value_parser = parse_real)]
    pub smoothing_constant: Option<f64>,
    #[arg(long, global = true, value_parser = parse_real)]
    pub cross_route_c0: Option<f64>,
    #[arg(long, global = true, value_parser = parse_real)]
    pub b_bound: Option<f64>,
    #[arg(long, global = true, value_parser = parse_real)]
    pub structure_c: Option<f64>,
    #[arg(long, global = true, value_parser = parse_real)]
    pub series_budget_c: Option<f64>,
    #[arg(long, global = true, value_parser = parse_real)]
    pub two_way_budget_c: Option<f64>,
    /// Extreme-bias threshold τ in |δ − 1/r!| ≥ τ / log q.
    #[arg(long, global = true, value_parser = parse_real)]
    pub tau: Option<f64>,
}

impl CalibrationArgs {
    pub fn resolve(&self) -> Result<Calibration, RaceError> {
        let d = CALIBRATION;
        let cal = Calibration {
            smoothing_constant: self.smoothing_constant.unwrap_or(d.smoothing_constant),
            cross_route_c0: self.cross_route_c0.unwrap_or(d.cross_route_c0),
            b_bound: self.b_bound.unwrap_or(d.b_bound),
            structure_c: self.structure_c.unwrap_or(d.structure_c),
            series_budget_c: self.series_budget_c.unwrap_or(d.series_budget_c),
            two_way_budget_c: self.two_way_budget_c.unwrap_or(d.two_way_budget_c),
            tau: self.tau.unwrap_or(d.tau),
        };
        cal.validate()?;
        Ok(cal)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Table,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Residue,
    Character,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Theorem1,
    Corollary2,
    Corollary3,
    TwoWay,
    Surrogate,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Density of one ordering (or all orderings) of a race.
    Density {
        #[arg(long)]
        q: u64,
        /// Comma-separated residues, leader first.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        tuple: Vec<i64>,
        #[arg(long, value_enum, default_value_t = Method::Theorem1)]
        method: Method,
        /// Evaluate every ordering of the tuple and report their sum.
        #[arg(long)]
        all_orders: bool,
        #[arg(long, default_value = "1000000", value_parser = parse_count)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// B_q(a, b) for one pair, or for every ordered pair of distinct units.
    Bq {
        #[arg(long)]
        q: u64,
        #[arg(long, allow_hyphen_values = true, required_unless_present = "scan_all")]
        a: Option<i64>,
        #[arg(long, allow_hyphen_values = true, required_unless_present = "scan_all")]
        b: Option<i64>,
        #[arg(long)]
        scan_all: bool,
    },
    /// N_q, the variance scale of the race.
    Nq {
        #[arg(long)]
        q: u64,
    },
    /// The coefficients α_j(r), λ_j(r), β_{j,k}(r).
    Simplex {
        #[arg(long)]
        r: usize,
        #[arg(long, default_value = "1e-10", value_parser = parse_real)]
        precision: f64,
        /// Also estimate the coefficients by Monte Carlo with this many samples.
        #[arg(long, value_parser = parse_count)]
        samples: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// An explicit tuple with a predicted bias, evaluated in both orders.
    Construct {
        #[arg(long)]
        q: u64,
        #[arg(long)]
        r: usize,
        #[arg(long, value_parser = ["mixed-thm2", "squares-thm4", "nonsquares-thm4"])]
        variant: String,
        /// Skip evaluating the densities.
        #[arg(long)]
        no_evaluate: bool,
    },
    /// Two tuples ordered one way by Σκ_jC(a_j) and the other way by density.
    Counterexample {
        #[arg(long)]
        q: u64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        kappa: Vec<f64>,
    },
    /// Structural bias verdict and extreme-bias witness for a tuple.
    Classify {
        #[arg(long)]
        q: u64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        tuple: Vec<i64>,
        /// Also evaluate the series margin over all orderings.
        #[arg(long)]
        margin: bool,
    },
    /// Sieve the race up to X and measure every ordering.
    Race {
        #[arg(long)]
        q: u64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        classes: Vec<i64>,
        #[arg(long, value_parser = parse_count)]
        x: u64,
        /// Checkpoints per power of ten.
        #[arg(long, default_value_t = 4)]
        per_decade: u32,
        /// Trace file to resume from and save to.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the trace as CSV to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Mean of B_q and |B_q| over all ordered pairs of distinct units.
    AvgBq {
        #[arg(long)]
        q: u64,
    },
}

/// Integers given as `1000000`, `1e6` or `1_000_000`.
pub fn parse_count(s: &str) -> Result<u64, String> {
    let t = s.replace('_', "");
    if let Ok(v) = t.parse::<u64>() {
        return Ok(v);
    }
    match t.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 1.8e19 => Ok(v as u64),
        _ => Err(format!("expected a non-negative integer, got {s}")),
    }
}

pub fn parse_real(s: &str) -> Result<f64, String> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("expected a finite number, got {s}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set worker count: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e.downcast_ref::<RaceError>() {
                Some(RaceError::Config(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
