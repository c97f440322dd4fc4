//! The `decoy-qkd` command line.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use decoy_core::simulation::EveKind;

use crate::config::{load_config_with, ConfigError, ExperimentSpec, Overrides, ReportFormat};
use crate::experiment::{run_experiment_with_workers, workers_from_env, Row};
use crate::report::{emit_report, format_float, write_file, ReportError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "decoy-qkd", version, about = "Decoy-state BB84 simulation and key-rate analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze the single configured distance.
    Run(CommonArgs),
    /// Analyze every distance of the `sweep` section.
    Sweep(CommonArgs),
    /// Run the spec without an eavesdropper and under PNS, and report both.
    Compare(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides protocol.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides protocol.pulses_total.
    #[arg(long)]
    pub pulses: Option<u64>,
    /// Overrides output.directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides output.formats, e.g. `csv,json`.
    #[arg(long, value_delimiter = ',')]
    pub format: Option<Vec<FormatArg>>,
    /// Overrides eve.kind.
    #[arg(long)]
    pub eve: Option<EveArg>,
    /// Overrides eve.single_block_prob.
    #[arg(long)]
    pub block_prob: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EveArg {
    None,
    Pns,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            pulses: self.pulses,
            out: self.out.clone(),
            formats: self.format.as_ref().map(|list| {
                list.iter()
                    .map(|f| match f {
                        FormatArg::Csv => ReportFormat::Csv,
                        FormatArg::Json => ReportFormat::Json,
                    })
                    .collect()
            }),
            eve: self.eve.map(|e| match e {
                EveArg::None => EveKind::None,
                EveArg::Pns => EveKind::Pns,
            }),
            block_prob: self.block_prob,
        }
    }
}

/// A failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Runtime(_) => EXIT_RUNTIME,
            Failure::Io(_) => EXIT_IO,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) | Failure::Io(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(err: ConfigError) -> Self {
        match err {
            ConfigError::Read { .. } => Failure::Io(err.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(err: ReportError) -> Self {
        match err {
            ReportError::Empty => Failure::Runtime(err.to_string()),
            ReportError::Io { .. } => Failure::Io(err.to_string()),
        }
    }
}

/// Runs a parsed command; returns what would go to stdout.
pub fn execute(cli: &Cli) -> Result<String, Failure> {
    let workers = workers_from_env().map_err(Failure::Config)?;
    let (args, kind) = match &cli.command {
        Command::Run(a) => (a, "run"),
        Command::Sweep(a) => (a, "sweep"),
        Command::Compare(a) => (a, "compare"),
    };
    let mut spec = load_config_with(&args.config, &args.overrides())?;
    match kind {
        "run" => spec.sweep = None,
        "sweep" if spec.sweep.is_none() => {
            return Err(Failure::Config(
                "sweep needs sweep.start_km, sweep.end_km and sweep.step_km".into(),
            ))
        }
        _ => {}
    }

    if kind != "compare" {
        let rows = run(&spec, workers)?;
        let paths = emit_report(&rows, &spec, &spec.output.directory, "report", &spec.output.formats)?;
        let mut out = summary(&rows);
        for p in paths {
            let _ = writeln!(out, "wrote {}", p.display());
        }
        return Ok(out);
    }

    let mut honest = spec.clone();
    honest.eve.kind = EveKind::None;
    let mut attacked = spec.clone();
    attacked.eve.kind = EveKind::Pns;
    let none_rows = run(&honest, workers)?;
    let pns_rows = run(&attacked, workers)?;
    let dir = &spec.output.directory;
    let mut paths = emit_report(&none_rows, &honest, dir, "report_none", &spec.output.formats)?;
    paths.extend(emit_report(&pns_rows, &attacked, dir, "report_pns", &spec.output.formats)?);
    let delta = compare_csv(&none_rows, &pns_rows);
    let delta_path = dir.join("compare.csv");
    write_file(&delta_path, &delta)?;
    paths.push(delta_path);

    let mut out = String::new();
    for (a, b) in none_rows.iter().zip(&pns_rows) {
        let _ = writeln!(
            out,
            "{} km: R_decoy none={} pns={}  verdict none={} pns={}",
            a.distance_km,
            rate(a).map_or("-".into(), format_float),
            rate(b).map_or("-".into(), format_float),
            verdict(a),
            verdict(b),
        );
    }
    for p in paths {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    Ok(out)
}

fn run(spec: &ExperimentSpec, workers: Option<usize>) -> Result<Vec<Row>, Failure> {
    let rows = run_experiment_with_workers(spec, workers).map_err(Failure::Runtime)?;
    if rows.iter().all(|r| r.outcome.is_err()) {
        let first = rows[0].outcome.as_ref().unwrap_err();
        return Err(Failure::Runtime(format!("every point failed; first error: {first}")));
    }
    Ok(rows)
}

fn rate(row: &Row) -> Option<f64> {
    row.outcome.as_ref().ok().map(|p| p.analysis.report.r_decoy)
}

fn verdict(row: &Row) -> &'static str {
    match &row.outcome {
        Ok(p) => p.analysis.report.anomaly.verdict.as_str(),
        Err(_) => crate::report::ERROR_VERDICT,
    }
}

fn summary(rows: &[Row]) -> String {
    let mut out = String::new();
    for row in rows {
        match &row.outcome {
            Ok(p) => {
                let r = &p.analysis.report;
                let _ = writeln!(
                    out,
                    "{} km: R_decoy={} R_baseline={} verdict={}",
                    row.distance_km,
                    format_float(r.r_decoy),
                    format_float(r.r_baseline),
                    r.anomaly.verdict.as_str()
                );
            }
            Err(e) => {
                let _ = writeln!(out, "{} km: failed: {e}", row.distance_km);
            }
        }
    }
    out
}

pub const COMPARE_HEADER: &str = "distance_km,R_decoy_none,R_decoy_pns,delta_R_decoy,R_baseline_none,R_baseline_pns,verdict_none,verdict_pns";

/// Per-distance delta between an honest run and a PNS run of the same spec.
pub fn compare_csv(none: &[Row], pns: &[Row]) -> String {
    let mut out = String::new();
    out.push_str(COMPARE_HEADER);
    out.push('\n');
    let field = |x: Option<f64>| x.map(format_float).unwrap_or_default();
    for (a, b) in none.iter().zip(pns) {
        let base = |row: &Row| row.outcome.as_ref().ok().map(|p| p.analysis.report.r_baseline);
        let delta = rate(b).zip(rate(a)).map(|(x, y)| x - y);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            format_float(a.distance_km),
            field(rate(a)),
            field(rate(b)),
            field(delta),
            field(base(a)),
            field(base(b)),
            verdict(a),
            verdict(b),
        );
    }
    out
}
