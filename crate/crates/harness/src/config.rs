//! Experiment configuration.
//!
//! A config file is a list of `section.key = value` lines; `#` starts a
//! comment. Strings are double-quoted, lists are `["a", "b"]`, numbers may use
//! `_` separators. The same text can be written with `[section]` headers; both
//! spellings are read identically. Every key is optional:
//!
//! ```text
//! protocol.pulses_total = 1_000_000      # N
//! protocol.seed = 42
//! protocol.basis_match_prob = 0.5        # q
//! protocol.qber_abort_threshold = 0.11
//!
//! signal.mu = 0.5
//! signal.send_probability = 0.8          # default: 1 − enabled decoy probabilities
//! vacuum_decoy.enabled = true
//! vacuum_decoy.send_probability = 0.1
//! weak_decoy.enabled = true
//! weak_decoy.mu = 0.05
//! weak_decoy.send_probability = 0.1
//! hwang_decoy.enabled = false
//! hwang_decoy.mu = 2.0
//! hwang_decoy.send_probability = 0.1
//!
//! channel.distance_km = 50
//! channel.attenuation_db_per_km = 0.2
//! channel.extra_loss_db = 0
//! channel.detector_efficiency = 0.1
//! channel.dark_count_prob = 1e-5
//! channel.misalignment_error = 0.01
//!
//! eve.kind = "none"                      # none | pns
//! eve.single_block_prob = 1.0
//! eve.forward_transmittance = 1.0        # absent: split photons use the channel
//!
//! sweep.start_km = 10                    # all three or none
//! sweep.end_km = 100
//! sweep.step_km = 10
//!
//! analysis.confidence = 0.999999
//! analysis.z_threshold = 5
//! analysis.f_ec = 1.22
//! analysis.decoy_abort = false
//! analysis.statistics = "monte_carlo"    # monte_carlo | exact
//! analysis.bound_gains = false
//!
//! output.directory = "out"
//! output.formats = ["csv", "json"]       # or "csv,json"
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use decoy_core::analysis::{AnalysisParams, AnomalyParams};
use decoy_core::models::{ChannelDetector, ClassLabel, IntensityClass, SourceSchedule};
use decoy_core::simulation::{EveKind, EveStrategy, ProtocolConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Value;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("parse error in {origin}: {message}")]
    Parse { origin: String, message: String },

    #[error("unknown config keys: {}", keys.join(", "))]
    UnknownKeys { keys: Vec<String> },

    #[error("{key}: expected {expected}")]
    Type { key: String, expected: &'static str },

    #[error("invalid value for {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl From<decoy_core::Error> for ConfigError {
    fn from(err: decoy_core::Error) -> Self {
        match err {
            decoy_core::Error::Config { field, reason } => ConfigError::Invalid { field, reason },
            other => ConfigError::Invalid {
                field: "config".into(),
                reason: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticsMode {
    /// Statistics come from a simulated session.
    MonteCarlo,
    /// Statistics are the exact expectations of the channel model.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format `{other}`, expected csv or json")),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub start_km: f64,
    pub end_km: f64,
    pub step_km: f64,
}

impl Sweep {
    /// Distances `start + i·step` up to and including `end`.
    pub fn distances(&self) -> Vec<f64> {
        let count = ((self.end_km - self.start_km) / self.step_km + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| self.start_km + i as f64 * self.step_km)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub confidence: f64,
    pub z_threshold: f64,
    pub f_ec: f64,
    pub decoy_abort: bool,
    pub statistics: StatisticsMode,
    pub bound_gains: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub directory: PathBuf,
    pub formats: Vec<ReportFormat>,
}

/// Everything needed to run and report one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub protocol: ProtocolConfig,
    pub eve: EveStrategy,
    pub sweep: Option<Sweep>,
    pub analysis: AnalysisSettings,
    pub output: OutputSpec,
}

impl ExperimentSpec {
    pub fn analysis_params(&self) -> AnalysisParams {
        AnalysisParams {
            q: self.protocol.basis_match_prob,
            f_ec: self.analysis.f_ec,
            confidence: self.analysis.confidence,
            bound_gains: self.analysis.bound_gains,
            anomaly: AnomalyParams {
                z_threshold: self.analysis.z_threshold,
                qber_abort_threshold: self.protocol.qber_abort_threshold,
                decoy_abort: self.analysis.decoy_abort,
            },
        }
    }
}

/// Command-line values that replace the matching config keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub pulses: Option<u64>,
    pub out: Option<PathBuf>,
    pub formats: Option<Vec<ReportFormat>>,
    pub eve: Option<EveKind>,
    pub block_prob: Option<f64>,
}

pub fn load_config(path: &Path) -> Result<ExperimentSpec, ConfigError> {
    load_config_with(path, &Overrides::default())
}

pub fn load_config_with(path: &Path, overrides: &Overrides) -> Result<ExperimentSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, &path.display().to_string(), overrides)
}

/// Parses config text; `origin` names the source in error messages.
pub fn parse_config(text: &str, origin: &str, overrides: &Overrides) -> Result<ExperimentSpec, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
        origin: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    })?;
    let mut keys = Keys::default();
    flatten("", table, &mut keys.values);
    keys.apply(overrides);
    let spec = keys.build()?;
    let unknown: Vec<String> = keys.values.into_keys().collect();
    if !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys { keys: unknown });
    }
    Ok(spec)
}

fn flatten(prefix: &str, table: toml::Table, out: &mut BTreeMap<String, Value>) {
    for (key, value) in table {
        let full = if prefix.is_empty() {
            key
        } else {
            format!("{prefix}.{key}")
        };
        match value {
            Value::Table(inner) => flatten(&full, inner, out),
            other => {
                out.insert(full, other);
            }
        }
    }
}

#[derive(Default)]
struct Keys {
    values: BTreeMap<String, Value>,
}

impl Keys {
    fn apply(&mut self, o: &Overrides) {
        let mut set = |key: &str, value: Value| {
            self.values.insert(key.to_string(), value);
        };
        if let Some(seed) = o.seed {
            // seeds above i64::MAX travel as strings
            set("protocol.seed", Value::String(seed.to_string()));
        }
        if let Some(pulses) = o.pulses {
            set("protocol.pulses_total", Value::String(pulses.to_string()));
        }
        if let Some(out) = &o.out {
            set("output.directory", Value::String(out.display().to_string()));
        }
        if let Some(formats) = &o.formats {
            let list = formats.iter().map(|f| Value::String(f.to_string())).collect();
            set("output.formats", Value::Array(list));
        }
        if let Some(eve) = o.eve {
            set("eve.kind", Value::String(eve.to_string()));
        }
        if let Some(p) = o.block_prob {
            set("eve.single_block_prob", Value::Float(p));
        }
    }

    fn f64_opt(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.values.remove(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(x)),
            Some(Value::Integer(i)) => Ok(Some(i as f64)),
            Some(_) => Err(type_error(key, "a number")),
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.values.remove(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if i >= 0 => Ok(i as u64),
            Some(Value::Float(x)) if x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 => Ok(x as u64),
            Some(Value::String(s)) => s.parse().map_err(|_| type_error(key, "a non-negative integer")),
            Some(_) => Err(type_error(key, "a non-negative integer")),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.values.remove(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(b),
            Some(_) => Err(type_error(key, "true or false")),
        }
    }

    fn string(&mut self, key: &str, default: &str) -> Result<String, ConfigError> {
        match self.values.remove(key) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(type_error(key, "a quoted string")),
        }
    }

    fn formats(&mut self, key: &str) -> Result<Vec<ReportFormat>, ConfigError> {
        let items: Vec<String> = match self.values.remove(key) {
            None => return Ok(vec![ReportFormat::Csv]),
            Some(Value::String(s)) => s.split(',').map(str::to_string).collect(),
            Some(Value::Array(list)) => list
                .into_iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s),
                    _ => Err(type_error(key, "a list of strings")),
                })
                .collect::<Result<_, _>>()?,
            Some(_) => Err(type_error(key, "a list of formats"))?,
        };
        let mut formats = items
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<ReportFormat>, String>>()
            .map_err(|reason| invalid(key, reason))?;
        formats.sort();
        formats.dedup();
        if formats.is_empty() {
            return Err(invalid(key, "at least one format required"));
        }
        Ok(formats)
    }

    fn build(&mut self) -> Result<ExperimentSpec, ConfigError> {
        let schedule = self.schedule()?;

        let defaults = ChannelDetector::default();
        let channel = ChannelDetector {
            distance_km: self.f64("channel.distance_km", defaults.distance_km)?,
            attenuation_db_per_km: self.f64("channel.attenuation_db_per_km", defaults.attenuation_db_per_km)?,
            extra_loss_db: self.f64("channel.extra_loss_db", defaults.extra_loss_db)?,
            detector_efficiency: self.f64("channel.detector_efficiency", defaults.detector_efficiency)?,
            dark_count_prob: self.f64("channel.dark_count_prob", defaults.dark_count_prob)?,
            misalignment_error: self.f64("channel.misalignment_error", defaults.misalignment_error)?,
            erroneous_dark_fraction: defaults.erroneous_dark_fraction,
        };

        let base = ProtocolConfig::default();
        let protocol = ProtocolConfig {
            schedule,
            pulses_total: self.u64("protocol.pulses_total", base.pulses_total)?,
            channel,
            basis_match_prob: self.f64("protocol.basis_match_prob", base.basis_match_prob)?,
            rng_seed: self.u64("protocol.seed", base.rng_seed)?,
            qber_abort_threshold: self.f64("protocol.qber_abort_threshold", base.qber_abort_threshold)?,
        };
        protocol.validate()?;

        let kind = match self.string("eve.kind", "none")?.as_str() {
            "none" => EveKind::None,
            "pns" => EveKind::Pns,
            other => return Err(invalid("eve.kind", format!("expected none or pns, got `{other}`"))),
        };
        let eve = EveStrategy {
            kind,
            single_block_prob: self.f64("eve.single_block_prob", 1.0)?,
            forward_transmittance_override: self.f64_opt("eve.forward_transmittance")?,
        };
        eve.validate()?;

        let sweep = self.sweep()?;

        let defaults = AnalysisParams::default();
        let statistics = match self.string("analysis.statistics", "monte_carlo")?.as_str() {
            "monte_carlo" => StatisticsMode::MonteCarlo,
            "exact" => StatisticsMode::Exact,
            other => {
                return Err(invalid(
                    "analysis.statistics",
                    format!("expected monte_carlo or exact, got `{other}`"),
                ))
            }
        };
        let analysis = AnalysisSettings {
            confidence: self.f64("analysis.confidence", defaults.confidence)?,
            z_threshold: self.f64("analysis.z_threshold", defaults.anomaly.z_threshold)?,
            f_ec: self.f64("analysis.f_ec", defaults.f_ec)?,
            decoy_abort: self.bool("analysis.decoy_abort", defaults.anomaly.decoy_abort)?,
            statistics,
            bound_gains: self.bool("analysis.bound_gains", defaults.bound_gains)?,
        };
        if !(analysis.confidence > 0.5 && analysis.confidence < 1.0) {
            return Err(invalid("analysis.confidence", "must lie in (0.5, 1)"));
        }
        if analysis.z_threshold.is_nan() || analysis.z_threshold <= 0.0 {
            return Err(invalid("analysis.z_threshold", "must be > 0"));
        }
        if !(analysis.f_ec >= 1.0 && analysis.f_ec.is_finite()) {
            return Err(invalid("analysis.f_ec", "must be >= 1"));
        }

        let output = OutputSpec {
            directory: PathBuf::from(self.string("output.directory", "out")?),
            formats: self.formats("output.formats")?,
        };

        Ok(ExperimentSpec {
            protocol,
            eve,
            sweep,
            analysis,
            output,
        })
    }

    fn schedule(&mut self) -> Result<SourceSchedule, ConfigError> {
        let mut decoys = Vec::new();
        if self.bool("vacuum_decoy.enabled", true)? {
            let p = self.f64("vacuum_decoy.send_probability", 0.1)?;
            decoys.push(IntensityClass::new(ClassLabel::VacuumDecoy, 0.0, p)?);
        } else {
            self.values.remove("vacuum_decoy.send_probability");
        }
        for (label, mu_default) in [(ClassLabel::WeakDecoy, 0.05), (ClassLabel::HwangDecoy, 2.0)] {
            let enabled = self.bool(&format!("{label}.enabled"), label == ClassLabel::WeakDecoy)?;
            let mu = self.f64(&format!("{label}.mu"), mu_default)?;
            let p = self.f64(&format!("{label}.send_probability"), 0.1)?;
            if enabled {
                decoys.push(IntensityClass::new(label, mu, p)?);
            }
        }
        let decoy_total: f64 = decoys.iter().map(|c| c.send_probability).sum();
        let signal_mu = self.f64("signal.mu", 0.5)?;
        let signal_p = self.f64("signal.send_probability", 1.0 - decoy_total)?;
        let mut classes = vec![IntensityClass::new(ClassLabel::Signal, signal_mu, signal_p)?];
        classes.extend(decoys);
        Ok(SourceSchedule::new(classes)?)
    }

    fn sweep(&mut self) -> Result<Option<Sweep>, ConfigError> {
        let start = self.f64_opt("sweep.start_km")?;
        let end = self.f64_opt("sweep.end_km")?;
        let step = self.f64_opt("sweep.step_km")?;
        match (start, end, step) {
            (None, None, None) => Ok(None),
            (Some(start_km), Some(end_km), Some(step_km)) => {
                if step_km.is_nan() || step_km <= 0.0 {
                    return Err(invalid("sweep.step_km", "must be > 0"));
                }
                if !(start_km >= 0.0 && start_km <= end_km) {
                    return Err(invalid("sweep.start_km", "must satisfy 0 <= start_km <= end_km"));
                }
                Ok(Some(Sweep {
                    start_km,
                    end_km,
                    step_km,
                }))
            }
            _ => Err(invalid(
                "sweep",
                "start_km, end_km and step_km must be given together",
            )),
        }
    }
}

fn type_error(key: &str, expected: &'static str) -> ConfigError {
    ConfigError::Type {
        key: key.to_string(),
        expected,
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}
