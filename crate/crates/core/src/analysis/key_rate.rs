use crate::error::{check_probability, Error, Result};
use crate::models::GainQber;

/// Smallest single-photon gain used as a divisor in the baseline QBER.
const TINY: f64 = 1e-300;

/// Binary Shannon entropy in bits, with H2(0) = H2(1) = 0.
pub fn binary_entropy(x: f64) -> Result<f64> {
    check_probability("x", x)?;
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (-x).ln_1p() / std::f64::consts::LN_2)
}

fn check_rate_inputs(q: f64, f_ec: f64, signal: &GainQber) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain {
            name: "q",
            value: q,
            expected: "sifting factor must lie in (0, 1]",
        });
    }
    if !(f_ec >= 1.0 && f_ec.is_finite()) {
        return Err(Error::Domain {
            name: "f_ec",
            value: f_ec,
            expected: "error-correction inefficiency must be >= 1",
        });
    }
    check_probability("q_mu", signal.gain)?;
    check_probability("e_mu", signal.qber)?;
    Ok(())
}

/// Unclamped q·(−Q_mu·f·H2(E_mu) + Q1·(1 − H2(e1))).
pub(crate) fn gllp_raw(q: f64, f_ec: f64, signal: &GainQber, q1_lower: f64, e1_upper: f64) -> Result<f64> {
    check_rate_inputs(q, f_ec, signal)?;
    check_probability("q1_lower", q1_lower)?;
    check_probability("e1_upper", e1_upper)?;
    let ec_cost = signal.gain * f_ec * binary_entropy(signal.qber)?;
    let privacy = q1_lower * (1.0 - binary_entropy(e1_upper)?);
    Ok(q * (privacy - ec_cost))
}

/// GLLP key rate per pulse: error correction is paid on every sifted signal
/// bit, privacy amplification credits only the single-photon share. Negative
/// values clamp to 0 (abort).
pub fn gllp_key_rate(q: f64, f_ec: f64, signal: &GainQber, q1_lower: f64, e1_upper: f64) -> Result<f64> {
    Ok(gllp_raw(q, f_ec, signal, q1_lower, e1_upper)?.max(0.0))
}

pub(crate) fn baseline_raw(q: f64, f_ec: f64, signal: &GainQber, mu: f64) -> Result<f64> {
    check_rate_inputs(q, f_ec, signal)?;
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::Domain {
            name: "mu",
            value: mu,
            expected: "mean photon number must be finite and >= 0",
        });
    }
    let p_multi = 1.0 - (-mu).exp() * (1.0 + mu);
    let q1_worst = (signal.gain - p_multi).max(0.0);
    let e1_worst = (signal.error_gain() / q1_worst.max(TINY)).min(0.5);
    gllp_raw(q, f_ec, signal, q1_worst.min(1.0), e1_worst)
}

/// Key rate without decoys: every multi-photon pulse is assumed tagged, so
/// only Q_mu − P(n ≥ 2) counts as single-photon gain and all errors are
/// charged to it.
pub fn baseline_key_rate(q: f64, f_ec: f64, signal: &GainQber, mu: f64) -> Result<f64> {
    Ok(baseline_raw(q, f_ec, signal, mu)?.max(0.0))
}
