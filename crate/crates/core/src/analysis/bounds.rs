use serde::{Deserialize, Serialize};

use super::interval::{clopper_pearson, Y0Estimate};
use crate::error::{check_probability, Error, Result};
use crate::models::ClassLabel;
use crate::simulation::ObservedStatistics;

/// Estimates the dark-count yield from the vacuum decoy: the point estimate is
/// detections per sifted pulse, bracketed by Clopper–Pearson bounds with
/// per-side tail probability `tail`.
///
/// Without a vacuum class the caller should fall back to
/// [`Y0Estimate::conservative_fallback`].
pub fn estimate_y0(stats: &ObservedStatistics, tail: f64) -> Result<Y0Estimate> {
    let vacuum = stats.get(ClassLabel::VacuumDecoy).ok_or_else(|| {
        Error::Estimation(
            "no vacuum decoy observed; use the conservative fallback y0 in [0, 1]".into(),
        )
    })?;
    if vacuum.n_sifted == 0 {
        return Err(Error::Estimation(
            "vacuum decoy has no sifted pulses; use the conservative fallback y0 in [0, 1]".into(),
        ));
    }
    let (lo, hi) = clopper_pearson(vacuum.n_detected_sifted, vacuum.n_sifted, tail)?;
    Ok(Y0Estimate {
        point: vacuum.gain(),
        lo,
        hi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinglePhotonBound {
    pub y1_lower: f64,
    pub q1_lower: f64,
    /// The raw bound fell outside [0, 1].
    pub clamped: bool,
}

/// Lower bound on the single-photon yield from a signal of mean `mu` and a
/// weaker decoy of mean `nu`.
///
/// Eliminating the two-photon term between the two gain expansions gives
///
/// ```text
/// Y1 >= mu / (mu·nu − nu²) · (Q_nu·e^nu − Q_mu·e^mu·nu²/mu² − (mu² − nu²)/mu² · y0)
/// ```
///
/// with Q1 = Y1·mu·e^(−mu). `y0` enters with a negative sign, so pass the
/// lower end of its interval.
pub fn estimate_y1_lower(
    mu: f64,
    q_mu: f64,
    nu: f64,
    q_nu: f64,
    y0: f64,
) -> Result<SinglePhotonBound> {
    if !(nu > 0.0 && nu < mu && mu.is_finite()) {
        return Err(Error::Domain {
            name: "nu",
            value: nu,
            expected: "decoy intensity must satisfy 0 < nu < mu",
        });
    }
    check_probability("q_mu", q_mu)?;
    check_probability("q_nu", q_nu)?;
    check_probability("y0", y0)?;

    let mu2 = mu * mu;
    let nu2 = nu * nu;
    let raw = mu / (mu * nu - nu2)
        * (q_nu * nu.exp() - q_mu * mu.exp() * nu2 / mu2 - (mu2 - nu2) / mu2 * y0);
    let y1_lower = raw.clamp(0.0, 1.0);
    Ok(SinglePhotonBound {
        y1_lower,
        q1_lower: y1_lower * mu * (-mu).exp(),
        clamped: y1_lower != raw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub e1_upper: f64,
    pub clamped: bool,
}

/// Upper bound on the single-photon error rate from the weak decoy's own
/// error statistics: e1 <= (E_nu·Q_nu·e^nu − e0·y0) / (nu·Y1_L), clamped to
/// [0, 0.5]. A zero yield bound gives 0.5, meaning singles carry no key.
pub fn estimate_e1_upper(
    nu: f64,
    q_nu: f64,
    e_nu: f64,
    y0: f64,
    e0: f64,
    y1_lower: f64,
) -> Result<ErrorBound> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Domain {
            name: "nu",
            value: nu,
            expected: "decoy intensity must be > 0",
        });
    }
    check_probability("q_nu", q_nu)?;
    check_probability("e_nu", e_nu)?;
    check_probability("y0", y0)?;
    check_probability("e0", e0)?;
    check_probability("y1_lower", y1_lower)?;

    if y1_lower == 0.0 {
        return Ok(ErrorBound {
            e1_upper: 0.5,
            clamped: true,
        });
    }
    let raw = (e_nu * q_nu * nu.exp() - e0 * y0) / (nu * y1_lower);
    let e1_upper = raw.clamp(0.0, 0.5);
    Ok(ErrorBound {
        e1_upper,
        clamped: e1_upper != raw,
    })
}
