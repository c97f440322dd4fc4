//! Decoy-state estimation and key-rate accounting.
//!
//! The vacuum decoy pins down the dark-count yield, the weak decoy lower-bounds
//! the single-photon yield and upper-bounds its error rate, and the GLLP rule
//! turns those bounds into a key rate. A baseline rate that assumes every
//! multi-photon pulse is compromised is computed alongside for comparison.

mod anomaly;
mod bounds;
mod interval;
mod key_rate;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::models::{ChannelDetector, ClassLabel, GainQber};
use crate::simulation::{expected_class_rates, ClassTally, EveStrategy, ObservedStatistics, ProtocolConfig};

pub use anomaly::{
    detect_anomaly, AnomalyParams, AnomalyVerdict, ClassCheck, Verdict, EXACT_RELATIVE_TOLERANCE,
};
pub use bounds::{estimate_e1_upper, estimate_y0, estimate_y1_lower, ErrorBound, SinglePhotonBound};
pub use interval::{clopper_pearson, Y0Estimate};
pub use key_rate::{baseline_key_rate, binary_entropy, gllp_key_rate};

/// Gain and error statistics of one class, either observed or exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    pub label: ClassLabel,
    pub mu: f64,
    pub gain: f64,
    pub qber: f64,
    /// Errors per sifted pulse.
    pub error_gain: f64,
    /// Sample size behind the rates; `None` for exact expectations.
    pub n_sifted: Option<u64>,
}

impl ClassRates {
    pub fn exact(label: ClassLabel, mu: f64, rates: GainQber) -> Self {
        ClassRates {
            label,
            mu,
            gain: rates.gain,
            qber: rates.qber,
            error_gain: rates.error_gain(),
            n_sifted: None,
        }
    }

    pub fn gain_qber(&self) -> GainQber {
        GainQber {
            gain: self.gain,
            qber: self.qber,
        }
    }
}

impl From<&ClassTally> for ClassRates {
    fn from(t: &ClassTally) -> Self {
        ClassRates {
            label: t.label,
            mu: t.mu,
            gain: t.gain(),
            qber: t.qber(),
            error_gain: t.error_gain(),
            n_sifted: Some(t.n_sifted),
        }
    }
}

pub fn observed_rates(stats: &ObservedStatistics) -> Vec<ClassRates> {
    stats.iter().map(ClassRates::from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    /// Sifting factor q.
    pub q: f64,
    /// Error-correction inefficiency f(E).
    pub f_ec: f64,
    /// Confidence of each y0 bound; the per-side tail is `1 − confidence`.
    pub confidence: f64,
    /// Replace observed gains by their Clopper–Pearson bounds in the
    /// direction that weakens each estimate (finite-size mode).
    pub bound_gains: bool,
    pub anomaly: AnomalyParams,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            q: 0.5,
            f_ec: 1.22,
            confidence: 1.0 - 1e-6,
            bound_gains: false,
            anomaly: AnomalyParams::default(),
        }
    }
}

impl AnalysisParams {
    pub fn tail(&self) -> f64 {
        1.0 - self.confidence
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyEstimate {
    pub y0: Y0Estimate,
    pub y1_lower: f64,
    pub q1_lower: f64,
    pub e1_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub q: f64,
    pub f_ec: f64,
    pub r_decoy: f64,
    pub r_baseline: f64,
    pub anomaly: AnomalyVerdict,
    /// Every bound or rate that had to be clamped into range.
    pub clamps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub signal: ClassRates,
    pub weak: Option<ClassRates>,
    pub estimate: DecoyEstimate,
    pub report: KeyRateReport,
}

/// Exact expected rates of every scheduled class on `config.channel` under `eve`.
pub fn exact_rates(config: &ProtocolConfig, eve: &EveStrategy) -> Result<Vec<ClassRates>> {
    config
        .schedule
        .classes()
        .iter()
        .map(|c| {
            let rates = expected_class_rates(c.mu, &config.channel, eve)?;
            Ok(ClassRates::exact(c.label, c.mu, rates))
        })
        .collect()
}

/// Runs the full chain on exact expected statistics, the infinite-sample
/// limit of a session. y0 is read off the vacuum class without uncertainty.
pub fn analyze_exact(
    config: &ProtocolConfig,
    eve: &EveStrategy,
    reference: &ChannelDetector,
    params: &AnalysisParams,
) -> Result<Analysis> {
    let rates = exact_rates(config, eve)?;
    let vacuum = rates.iter().find(|r| r.label == ClassLabel::VacuumDecoy);
    let y0 = vacuum.map_or_else(Y0Estimate::conservative_fallback, |v| Y0Estimate::exact(v.gain));
    let mut analysis = analyze_rates(&rates, y0, reference, params)?;
    if vacuum.is_none() {
        analysis.report.clamps.insert(0, "y0_fallback".to_string());
    }
    Ok(analysis)
}

/// Runs the full chain on observed tallies. Without a vacuum decoy the
/// conservative y0 interval [0, 1] is used and recorded as a clamp.
pub fn analyze_observed(
    stats: &ObservedStatistics,
    reference: &ChannelDetector,
    params: &AnalysisParams,
) -> Result<Analysis> {
    let mut clamps = Vec::new();
    let y0 = match estimate_y0(stats, params.tail()) {
        Ok(y0) => y0,
        Err(Error::Estimation(_)) => {
            clamps.push("y0_fallback".to_string());
            Y0Estimate::conservative_fallback()
        }
        Err(e) => return Err(e),
    };
    let mut analysis = analyze_rates(&observed_rates(stats), y0, reference, params)?;
    clamps.append(&mut analysis.report.clamps);
    analysis.report.clamps = clamps;
    Ok(analysis)
}

/// Runs the full chain on per-class rates with a given y0 estimate.
///
/// The vacuum class feeds y0 (via the caller), the signal and weak decoy feed
/// the single-photon bounds, and every class takes part in anomaly detection.
/// The lower end of the y0 interval is used wherever y0 is subtracted.
pub fn analyze_rates(
    rates: &[ClassRates],
    y0: Y0Estimate,
    reference: &ChannelDetector,
    params: &AnalysisParams,
) -> Result<Analysis> {
    let find = |label| rates.iter().find(|r| r.label == label).copied();
    let signal = find(ClassLabel::Signal)
        .ok_or_else(|| Error::Estimation("no signal class observed".into()))?;
    let weak = find(ClassLabel::WeakDecoy).filter(|w| w.n_sifted != Some(0));
    let e0 = reference.erroneous_dark_fraction;
    let mut clamps = Vec::new();

    let (y1_lower, q1_lower, e1_upper) = match weak {
        Some(weak) => {
            let (q_mu, q_nu, eq_nu) = if params.bound_gains {
                (
                    rate_bound(signal.gain, signal.n_sifted, params.tail(), Side::Upper)?,
                    rate_bound(weak.gain, weak.n_sifted, params.tail(), Side::Lower)?,
                    rate_bound(weak.error_gain, weak.n_sifted, params.tail(), Side::Upper)?,
                )
            } else {
                (signal.gain, weak.gain, weak.error_gain)
            };
            let y1 = estimate_y1_lower(signal.mu, q_mu, weak.mu, q_nu, y0.lo)?;
            if y1.clamped {
                clamps.push("y1_lower".to_string());
            }
            let e_nu = if q_nu > 0.0 { (eq_nu / q_nu).min(1.0) } else { 0.0 };
            let e1 = estimate_e1_upper(weak.mu, q_nu, e_nu, y0.lo, e0, y1.y1_lower)?;
            if e1.clamped {
                clamps.push("e1_upper".to_string());
            }
            (y1.y1_lower, y1.q1_lower, e1.e1_upper)
        }
        None => {
            clamps.push("no_weak_decoy".to_string());
            (0.0, 0.0, 0.5)
        }
    };

    let signal_rates = signal.gain_qber();
    let raw_decoy = key_rate::gllp_raw(params.q, params.f_ec, &signal_rates, q1_lower, e1_upper)?;
    if raw_decoy < 0.0 {
        clamps.push("r_decoy".to_string());
    }
    let raw_baseline = key_rate::baseline_raw(params.q, params.f_ec, &signal_rates, signal.mu)?;
    if raw_baseline < 0.0 {
        clamps.push("r_baseline".to_string());
    }

    let anomaly = detect_anomaly(rates, reference, &params.anomaly)?;

    Ok(Analysis {
        signal,
        weak,
        estimate: DecoyEstimate {
            y0,
            y1_lower,
            q1_lower,
            e1_upper,
        },
        report: KeyRateReport {
            q: params.q,
            f_ec: params.f_ec,
            r_decoy: raw_decoy.max(0.0),
            r_baseline: raw_baseline.max(0.0),
            anomaly,
            clamps,
        },
    })
}

#[derive(Clone, Copy)]
enum Side {
    Lower,
    Upper,
}

// one end of the binomial interval around a per-sifted-pulse rate
fn rate_bound(rate: f64, n_sifted: Option<u64>, tail: f64, side: Side) -> Result<f64> {
    let Some(n) = n_sifted.filter(|&n| n > 0) else {
        return Ok(rate);
    };
    let successes = (rate * n as f64).round() as u64;
    let (lo, hi) = clopper_pearson(successes, n, tail)?;
    Ok(match side {
        Side::Lower => lo,
        Side::Upper => hi,
    })
}

/// Decoy key rate as a function of the five estimated inputs, y0 used in both
/// subtractions.
fn decoy_rate_at(
    signal: &ClassRates,
    weak: &ClassRates,
    inputs: [f64; 5],
    e0: f64,
    params: &AnalysisParams,
) -> Result<f64> {
    let [q_mu, eq_mu, q_nu, eq_nu, y0] = inputs.map(|x| x.clamp(0.0, 1.0));
    let y1 = estimate_y1_lower(signal.mu, q_mu, weak.mu, q_nu, y0)?;
    let e_nu = if q_nu > 0.0 { (eq_nu / q_nu).min(1.0) } else { 0.0 };
    let e1 = estimate_e1_upper(weak.mu, q_nu, e_nu, y0, e0, y1.y1_lower)?;
    let e_mu = if q_mu > 0.0 { (eq_mu / q_mu).min(1.0) } else { 0.0 };
    let signal_rates = GainQber {
        gain: q_mu,
        qber: e_mu,
    };
    gllp_key_rate(params.q, params.f_ec, &signal_rates, y1.q1_lower, e1.e1_upper)
}

/// Delta-method standard error of the decoy key rate.
///
/// Gain and error gain of the signal and weak classes carry binomial
/// (co)variances from their sifted counts; y0 contributes the standard
/// deviation implied by the width of its interval. Derivatives are central
/// finite differences of the full estimation chain.
pub fn decoy_rate_std_error(analysis: &Analysis, reference: &ChannelDetector, params: &AnalysisParams) -> Result<f64> {
    let signal = analysis.signal;
    let weak = analysis
        .weak
        .ok_or_else(|| Error::Estimation("rate uncertainty needs a weak decoy".into()))?;
    let (Some(n_mu), Some(n_nu)) = (signal.n_sifted, weak.n_sifted) else {
        return Ok(0.0);
    };
    let y0 = analysis.estimate.y0;
    let e0 = reference.erroneous_dark_fraction;
    let base = [signal.gain, signal.error_gain, weak.gain, weak.error_gain, y0.lo];

    let mut grad = [0.0; 5];
    for (i, g) in grad.iter_mut().enumerate() {
        let h = 1e-4 * base[i].abs().max(1e-9);
        let mut up = base;
        let mut down = base;
        up[i] += h;
        down[i] = (down[i] - h).max(0.0);
        let span = up[i] - down[i];
        *g = (decoy_rate_at(&signal, &weak, up, e0, params)?
            - decoy_rate_at(&signal, &weak, down, e0, params)?)
            / span;
    }

    // Var(Q) = Q(1−Q)/n, Var(EQ) = EQ(1−EQ)/n, Cov(Q, EQ) = EQ(1−Q)/n
    let class_var = |g_q: f64, g_eq: f64, r: &ClassRates, n: u64| {
        let n = n.max(1) as f64;
        let (q, eq) = (r.gain, r.error_gain);
        (g_q * g_q * q * (1.0 - q) + g_eq * g_eq * eq * (1.0 - eq) + 2.0 * g_q * g_eq * eq * (1.0 - q)) / n
    };
    let z_tail = Normal::standard().inverse_cdf(params.confidence);
    let sigma_y0 = (y0.hi - y0.lo) / (2.0 * z_tail);

    let variance = class_var(grad[0], grad[1], &signal, n_mu)
        + class_var(grad[2], grad[3], &weak, n_nu)
        + (grad[4] * sigma_y0).powi(2);
    Ok(variance.sqrt())
}
