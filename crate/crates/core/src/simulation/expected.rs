use super::{EveKind, EveStrategy};
use crate::error::Result;
use crate::models::{expected_gain_qber, poisson_pmf, truncation_limit, ChannelDetector, GainQber};

/// Expected gain and QBER of a class when Eve runs `eve` on the channel.
///
/// With no eavesdropper this is the closed form from [`expected_gain_qber`].
/// Under PNS the photon-number series is summed term by term: blocked singles
/// only click by dark count, and split pulses forward n − 1 photons over
/// Eve's line (or the ordinary channel when she has no override).
pub fn expected_class_rates(mu: f64, cd: &ChannelDetector, eve: &EveStrategy) -> Result<GainQber> {
    let honest = expected_gain_qber(mu, cd)?;
    if eve.kind == EveKind::None {
        return Ok(honest);
    }
    let y0 = cd.dark_count_prob;
    let e0 = cd.erroneous_dark_fraction;
    let ed = cd.misalignment_error;
    let eta = cd.transmittance();
    let forward = eve.forward_transmittance_override.unwrap_or(eta);

    let clicks = |photons: u32, t: f64| {
        let miss = (1.0 - t).powi(photons as i32);
        (1.0 - (1.0 - y0) * miss, e0 * y0 + ed * (1.0 - miss))
    };

    let mut gain = 0.0;
    let mut error_gain = 0.0;
    for n in 0..=truncation_limit(mu) {
        let p = poisson_pmf(mu, n)?;
        let (y, ey) = match n {
            0 => clicks(0, eta),
            1 => {
                let (y1, ey1) = clicks(1, eta);
                let b = eve.single_block_prob;
                (b * y0 + (1.0 - b) * y1, b * e0 * y0 + (1.0 - b) * ey1)
            }
            _ => clicks(n - 1, forward),
        };
        gain += p * y;
        error_gain += p * ey;
    }
    let qber = if gain > 0.0 { error_gain / gain } else { e0 };
    Ok(GainQber { gain, qber })
}
