//! Closed-form source, channel and detector models.
//!
//! Everything here is a pure function of its arguments. The simulator samples
//! from these distributions and the tests use them as the analytic reference
//! for what a session should observe.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};

/// Probability that a dark-count click lands on the wrong bit.
pub const ERRONEOUS_DARK_FRACTION: f64 = 0.5;

/// Tolerance on the sum of send probabilities across a schedule.
pub const SEND_PROBABILITY_TOLERANCE: f64 = 1e-12;

/// The pulse classes Alice can interleave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Signal,
    VacuumDecoy,
    WeakDecoy,
    HwangDecoy,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Signal,
        ClassLabel::VacuumDecoy,
        ClassLabel::WeakDecoy,
        ClassLabel::HwangDecoy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Signal => "signal",
            ClassLabel::VacuumDecoy => "vacuum_decoy",
            ClassLabel::WeakDecoy => "weak_decoy",
            ClassLabel::HwangDecoy => "hwang_decoy",
        }
    }

    pub fn is_decoy(self) -> bool {
        self != ClassLabel::Signal
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassLabel::ALL
            .into_iter()
            .find(|label| label.as_str() == s)
            .ok_or_else(|| Error::config("class", format!("unknown class label `{s}`")))
    }
}

/// One intensity setting of the source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityClass {
    pub label: ClassLabel,
    /// Mean photon number per pulse.
    pub mu: f64,
    pub send_probability: f64,
}

impl IntensityClass {
    pub fn new(label: ClassLabel, mu: f64, send_probability: f64) -> Result<Self> {
        let class = IntensityClass {
            label,
            mu,
            send_probability,
        };
        class.validate()?;
        Ok(class)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("{}.{name}", self.label);
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::config(field("mu"), format!("must be >= 0, got {}", self.mu)));
        }
        if self.label == ClassLabel::VacuumDecoy && self.mu != 0.0 {
            return Err(Error::config(field("mu"), "a vacuum decoy has mu = 0"));
        }
        if !(0.0..=1.0).contains(&self.send_probability) {
            return Err(Error::config(
                field("send_probability"),
                format!("must lie in [0, 1], got {}", self.send_probability),
            ));
        }
        Ok(())
    }
}

/// The set of intensity classes Alice chooses from, pulse by pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<IntensityClass>", into = "Vec<IntensityClass>")]
pub struct SourceSchedule {
    classes: Vec<IntensityClass>,
}

impl SourceSchedule {
    pub fn new(classes: Vec<IntensityClass>) -> Result<Self> {
        for class in &classes {
            class.validate()?;
        }
        for label in ClassLabel::ALL {
            let count = classes.iter().filter(|c| c.label == label).count();
            if label == ClassLabel::Signal && count != 1 {
                return Err(Error::config(
                    "schedule",
                    format!("exactly one signal class required, found {count}"),
                ));
            }
            if count > 1 {
                return Err(Error::config(
                    "schedule",
                    format!("class `{label}` appears {count} times"),
                ));
            }
        }
        let total: f64 = classes.iter().map(|c| c.send_probability).sum();
        if (total - 1.0).abs() > SEND_PROBABILITY_TOLERANCE {
            return Err(Error::config(
                "schedule",
                format!("send probabilities sum to {total}, expected 1"),
            ));
        }
        let schedule = SourceSchedule { classes };
        if let (Some(signal), Some(weak)) = (
            schedule.get(ClassLabel::Signal),
            schedule.get(ClassLabel::WeakDecoy),
        ) {
            if weak.mu >= signal.mu || weak.mu == 0.0 {
                return Err(Error::config(
                    "weak_decoy.mu",
                    format!(
                        "must satisfy 0 < weak_decoy.mu < signal.mu, got {} vs {}",
                        weak.mu, signal.mu
                    ),
                ));
            }
        }
        Ok(schedule)
    }

    pub fn classes(&self) -> &[IntensityClass] {
        &self.classes
    }

    pub fn get(&self, label: ClassLabel) -> Option<&IntensityClass> {
        self.classes.iter().find(|c| c.label == label)
    }

    pub fn signal(&self) -> &IntensityClass {
        self.get(ClassLabel::Signal)
            .expect("schedule invariant: exactly one signal class")
    }
}

impl TryFrom<Vec<IntensityClass>> for SourceSchedule {
    type Error = Error;

    fn try_from(classes: Vec<IntensityClass>) -> Result<Self> {
        SourceSchedule::new(classes)
    }
}

impl From<SourceSchedule> for Vec<IntensityClass> {
    fn from(schedule: SourceSchedule) -> Self {
        schedule.classes
    }
}

/// Fiber channel plus threshold detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelDetector {
    pub distance_km: f64,
    pub attenuation_db_per_km: f64,
    pub extra_loss_db: f64,
    pub detector_efficiency: f64,
    /// Dark-count click probability per gate (Y0).
    pub dark_count_prob: f64,
    /// Probability a detected photon lands on the wrong bit (e_d).
    pub misalignment_error: f64,
    /// Error probability of a dark-count click (e0).
    pub erroneous_dark_fraction: f64,
}

impl Default for ChannelDetector {
    fn default() -> Self {
        ChannelDetector {
            distance_km: 50.0,
            attenuation_db_per_km: 0.2,
            extra_loss_db: 0.0,
            detector_efficiency: 0.1,
            dark_count_prob: 1e-5,
            misalignment_error: 0.01,
            erroneous_dark_fraction: ERRONEOUS_DARK_FRACTION,
        }
    }
}

impl ChannelDetector {
    pub fn with_distance(self, distance_km: f64) -> Self {
        ChannelDetector {
            distance_km,
            ..self
        }
    }

    /// Total loss in dB between Alice and the detector, detector excluded.
    pub fn loss_db(&self) -> f64 {
        self.attenuation_db_per_km * self.distance_km + self.extra_loss_db
    }

    /// Overall single-photon transmittance η, detector efficiency included.
    pub fn transmittance(&self) -> f64 {
        transmittance(self)
    }

    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("channel.distance_km", self.distance_km),
            ("channel.attenuation_db_per_km", self.attenuation_db_per_km),
            ("channel.extra_loss_db", self.extra_loss_db),
        ];
        for (field, value) in non_negative {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::config(field, format!("must be >= 0, got {value}")));
            }
        }
        if !(0.0..=1.0).contains(&self.detector_efficiency) {
            return Err(Error::config(
                "channel.detector_efficiency",
                format!("must lie in [0, 1], got {}", self.detector_efficiency),
            ));
        }
        if !(0.0..1.0).contains(&self.dark_count_prob) {
            return Err(Error::config(
                "channel.dark_count_prob",
                format!("must lie in [0, 1), got {}", self.dark_count_prob),
            ));
        }
        if !(0.0..=0.5).contains(&self.misalignment_error) {
            return Err(Error::config(
                "channel.misalignment_error",
                format!("must lie in [0, 0.5], got {}", self.misalignment_error),
            ));
        }
        if !(0.0..=1.0).contains(&self.erroneous_dark_fraction) {
            return Err(Error::config(
                "channel.erroneous_dark_fraction",
                format!("must lie in [0, 1], got {}", self.erroneous_dark_fraction),
            ));
        }
        let eta = self.transmittance();
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::config(
                "channel",
                format!("transmittance must lie in (0, 1], got {eta}"),
            ));
        }
        Ok(())
    }
}

/// Number of Poisson terms summed for a series at mean `mu`.
///
/// The tail beyond this point is below 1e-12 for every mu up to 5.
pub fn truncation_limit(mu: f64) -> u32 {
    let n = (mu + 10.0 * mu.sqrt() + 20.0).ceil();
    (n as u32).max(20)
}

/// Probability that a phase-randomized coherent pulse of mean `mu` carries
/// exactly `n` photons. Evaluated in log space so large `n` does not overflow.
pub fn poisson_pmf(mu: f64, n: u32) -> Result<f64> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::Domain {
            name: "mu",
            value: mu,
            expected: "mean photon number must be finite and >= 0",
        });
    }
    if mu == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    let n_f = f64::from(n);
    let log_p = -mu + n_f * mu.ln() - statrs::function::gamma::ln_gamma(n_f + 1.0);
    Ok(log_p.exp())
}

/// η = 10^(−loss/10) · detector efficiency.
pub fn transmittance(cd: &ChannelDetector) -> f64 {
    10f64.powf(-cd.loss_db() / 10.0) * cd.detector_efficiency
}

/// Click probability given `n` photons reach the channel: the dark process and
/// each photon fire independently, so Y_n = 1 − (1 − y0)(1 − η)^n.
pub fn yield_n(y0: f64, eta: f64, n: u32) -> Result<f64> {
    check_probability("y0", y0)?;
    check_probability("eta", eta)?;
    Ok(y0 + (1.0 - y0) * (1.0 - (1.0 - eta).powi(n as i32)))
}

/// Expected gain and QBER of one intensity class on an honest channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainQber {
    pub gain: f64,
    pub qber: f64,
}

impl GainQber {
    /// E·Q, the probability a sifted pulse clicks and is in error.
    pub fn error_gain(&self) -> f64 {
        self.gain * self.qber
    }
}

/// Closed-form gain Q = 1 − (1 − Y0)e^(−ημ) and QBER from
/// E·Q = e0·Y0 + e_d·(1 − e^(−ημ)).
pub fn expected_gain_qber(mu: f64, cd: &ChannelDetector) -> Result<GainQber> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::Domain {
            name: "mu",
            value: mu,
            expected: "mean photon number must be finite and >= 0",
        });
    }
    let y0 = cd.dark_count_prob;
    let x = cd.transmittance() * mu;
    // 1 − e^(−x), accurate for tiny x
    let photon_click = -(-x).exp_m1();
    let gain = photon_click + y0 * (-x).exp();
    let error_gain = cd.erroneous_dark_fraction * y0 + cd.misalignment_error * photon_click;
    let qber = if gain > 0.0 {
        error_gain / gain
    } else {
        cd.erroneous_dark_fraction
    };
    Ok(GainQber { gain, qber })
}
