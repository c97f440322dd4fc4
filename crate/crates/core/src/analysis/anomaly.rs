use serde::{Deserialize, Serialize};

use super::ClassRates;
use crate::error::{Error, Result};
use crate::models::{expected_gain_qber, ChannelDetector, ClassLabel};

/// Relative deviation tolerated between exact rates and the honest model.
pub const EXACT_RELATIVE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyParams {
    pub z_threshold: f64,
    pub qber_abort_threshold: f64,
    /// Also abort when a weak or Hwang decoy's QBER exceeds the threshold.
    pub decoy_abort: bool,
}

impl Default for AnomalyParams {
    fn default() -> Self {
        AnomalyParams {
            z_threshold: 5.0,
            qber_abort_threshold: 0.11,
            decoy_abort: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Clean,
    Flagged,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Clean => "clean",
            Verdict::Flagged => "flagged",
        }
    }
}

/// Observed-versus-predicted comparison for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassCheck {
    pub label: ClassLabel,
    pub predicted_gain: f64,
    pub observed_gain: f64,
    pub z_gain: f64,
    pub predicted_error_gain: f64,
    pub observed_error_gain: f64,
    pub z_error_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    pub verdict: Verdict,
    pub checks: Vec<ClassCheck>,
    /// Why the verdict is flagged, one entry per tripped rule.
    pub reasons: Vec<String>,
    pub warnings: Vec<String>,
}

impl AnomalyVerdict {
    pub fn is_flagged(&self) -> bool {
        self.verdict == Verdict::Flagged
    }

    pub fn check(&self, label: ClassLabel) -> Option<&ClassCheck> {
        self.checks.iter().find(|c| c.label == label)
    }
}

fn z_score(observed: f64, predicted: f64, n_sifted: Option<u64>) -> f64 {
    let diff = observed - predicted;
    let sigma = match n_sifted {
        Some(n) => (predicted * (1.0 - predicted) / n as f64).sqrt(),
        // exact rates: any deviation beyond rounding is infinitely significant
        None if diff.abs() <= EXACT_RELATIVE_TOLERANCE * predicted.abs() => return 0.0,
        None => 0.0,
    };
    if sigma > 0.0 {
        diff / sigma
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Compares each class against the honest channel Alice and Bob calibrated.
///
/// A class is inconsistent when its gain or its error gain sits more than
/// `z_threshold` binomial standard deviations from the prediction. The verdict
/// is also flagged when the signal QBER exceeds the abort threshold.
pub fn detect_anomaly(
    rates: &[ClassRates],
    reference: &ChannelDetector,
    params: &AnomalyParams,
) -> Result<AnomalyVerdict> {
    if !rates.iter().any(|r| r.label.is_decoy()) {
        return Err(Error::Estimation(
            "anomaly detection needs at least one decoy class".into(),
        ));
    }
    let mut checks = Vec::new();
    let mut reasons = Vec::new();
    let mut warnings = Vec::new();

    for class in rates {
        if class.n_sifted == Some(0) {
            warnings.push(format!("{}: no sifted pulses, skipped", class.label));
            continue;
        }
        let predicted = expected_gain_qber(class.mu, reference)?;
        let check = ClassCheck {
            label: class.label,
            predicted_gain: predicted.gain,
            observed_gain: class.gain,
            z_gain: z_score(class.gain, predicted.gain, class.n_sifted),
            predicted_error_gain: predicted.error_gain(),
            observed_error_gain: class.error_gain,
            z_error_gain: z_score(class.error_gain, predicted.error_gain(), class.n_sifted),
        };
        if check.z_gain.abs() > params.z_threshold {
            reasons.push(format!("{}: gain z = {:.3}", class.label, check.z_gain));
        }
        if check.z_error_gain.abs() > params.z_threshold {
            reasons.push(format!(
                "{}: error gain z = {:.3}",
                class.label, check.z_error_gain
            ));
        }
        let qber_checked = match class.label {
            ClassLabel::Signal => true,
            ClassLabel::WeakDecoy | ClassLabel::HwangDecoy => params.decoy_abort,
            ClassLabel::VacuumDecoy => false,
        };
        if qber_checked && class.qber > params.qber_abort_threshold {
            reasons.push(format!(
                "{}: QBER {:.5} above abort threshold {}",
                class.label, class.qber, params.qber_abort_threshold
            ));
        }
        checks.push(check);
    }

    let verdict = if reasons.is_empty() {
        Verdict::Clean
    } else {
        Verdict::Flagged
    };
    Ok(AnomalyVerdict {
        verdict,
        checks,
        reasons,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GainQber;

    fn exact_rates(cd: &ChannelDetector) -> Vec<ClassRates> {
        [
            (ClassLabel::Signal, 0.5),
            (ClassLabel::VacuumDecoy, 0.0),
            (ClassLabel::WeakDecoy, 0.05),
        ]
        .into_iter()
        .map(|(label, mu)| ClassRates::exact(label, mu, expected_gain_qber(mu, cd).unwrap()))
        .collect()
    }

    #[test]
    fn honest_exact_rates_are_clean() {
        let cd = ChannelDetector::default();
        let v = detect_anomaly(&exact_rates(&cd), &cd, &AnomalyParams::default()).unwrap();
        assert_eq!(v.verdict, Verdict::Clean);
        assert!(v.checks.iter().all(|c| c.z_gain == 0.0 && c.z_error_gain == 0.0));
    }

    #[test]
    fn exact_rates_on_a_different_channel_are_flagged() {
        let cd = ChannelDetector::default();
        let shorter = cd.with_distance(40.0);
        let v = detect_anomaly(&exact_rates(&shorter), &cd, &AnomalyParams::default()).unwrap();
        assert!(v.is_flagged());
    }

    #[test]
    fn dead_detector_is_flagged() {
        let cd = ChannelDetector::default();
        let rates: Vec<ClassRates> = exact_rates(&cd)
            .into_iter()
            .map(|r| ClassRates {
                gain: 0.0,
                qber: 0.0,
                error_gain: 0.0,
                n_sifted: Some(4_000_000),
                ..r
            })
            .collect();
        let v = detect_anomaly(&rates, &cd, &AnomalyParams::default()).unwrap();
        assert!(v.is_flagged());
        assert!(v.check(ClassLabel::Signal).unwrap().z_gain < -5.0);
    }

    #[test]
    fn qber_abort_rule() {
        let cd = ChannelDetector::default();
        let mut rates = exact_rates(&cd);
        rates[0] = ClassRates {
            n_sifted: Some(1_000_000),
            qber: 0.2,
            ..rates[0]
        };
        let v = detect_anomaly(&rates, &cd, &AnomalyParams::default()).unwrap();
        assert!(v.reasons.iter().any(|r| r.contains("abort")));
    }

    #[test]
    fn decoy_abort_switch_ignores_vacuum() {
        let cd = ChannelDetector::default();
        let rates = exact_rates(&cd);
        let params = AnomalyParams {
            decoy_abort: true,
            ..AnomalyParams::default()
        };
        // vacuum QBER is 0.5 by construction and must not trip the switch
        assert!(!detect_anomaly(&rates, &cd, &params).unwrap().is_flagged());

        let mut noisy = rates.clone();
        noisy[2].qber = 0.3;
        assert!(!detect_anomaly(&noisy, &cd, &AnomalyParams::default())
            .unwrap()
            .is_flagged());
        assert!(detect_anomaly(&noisy, &cd, &params).unwrap().is_flagged());
    }

    #[test]
    fn skipped_classes_and_missing_decoys() {
        let cd = ChannelDetector::default();
        let mut rates = exact_rates(&cd);
        rates[1].n_sifted = Some(0);
        let v = detect_anomaly(&rates, &cd, &AnomalyParams::default()).unwrap();
        assert_eq!(v.warnings.len(), 1);
        assert!(v.check(ClassLabel::VacuumDecoy).is_none());

        let signal_only = vec![ClassRates::exact(
            ClassLabel::Signal,
            0.5,
            GainQber { gain: 0.005, qber: 0.01 },
        )];
        assert!(detect_anomaly(&signal_only, &cd, &AnomalyParams::default()).is_err());
    }
}
