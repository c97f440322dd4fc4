use decoy_core::models::{
    expected_gain_qber, poisson_pmf, truncation_limit, yield_n, ChannelDetector,
};
use proptest::prelude::*;

/// Channel with a prescribed overall transmittance: lossless fiber, efficiency = eta.
fn channel_with_eta(eta: f64, y0: f64, ed: f64) -> ChannelDetector {
    ChannelDetector {
        distance_km: 0.0,
        extra_loss_db: 0.0,
        detector_efficiency: eta,
        dark_count_prob: y0,
        misalignment_error: ed,
        ..ChannelDetector::default()
    }
}

/// Σ P_n·Y_n and Σ P_n·(e0·Y0 + e_d·(1 − (1−η)^n)) summed to n = 50, with the
/// pmf built by the multiplicative recurrence rather than log-gamma.
fn series_gain(mu: f64, eta: f64, y0: f64, ed: f64) -> (f64, f64) {
    let mut p = (-mu).exp();
    let (mut q, mut eq) = (0.0, 0.0);
    for n in 0..=50u32 {
        if n > 0 {
            p *= mu / f64::from(n);
        }
        let miss = (1.0 - eta).powi(n as i32);
        q += p * (1.0 - (1.0 - y0) * miss);
        eq += p * (0.5 * y0 + ed * (1.0 - miss));
    }
    (q, eq)
}

#[test]
fn closed_form_matches_series_on_grid() {
    for mu in [0.0, 0.05, 0.1, 0.5, 1.0, 2.0] {
        for eta in [1e-4, 1e-2, 0.5] {
            for y0 in [0.0, 1e-6, 1e-4] {
                let cd = channel_with_eta(eta, y0, 0.01);
                let g = expected_gain_qber(mu, &cd).unwrap();
                let (q, eq) = series_gain(mu, eta, y0, 0.01);
                assert!((g.gain - q).abs() <= 1e-10, "Q mu={mu} eta={eta} y0={y0}");
                assert!(
                    (g.error_gain() - eq).abs() <= 1e-10,
                    "EQ mu={mu} eta={eta} y0={y0}"
                );
            }
        }
    }
}

#[test]
fn series_examples_from_the_worked_chain() {
    let (q, eq) = series_gain(0.5, 0.01, 1e-5, 0.01);
    assert!((q - 4.99747e-3).abs() < 1e-8);
    assert!((eq / q - 0.010981).abs() < 1e-6);
    let (q_weak, _) = series_gain(0.05, 0.01, 1e-5, 0.01);
    assert!((q_weak - 5.0987e-4).abs() < 1e-8);
}

proptest! {
    #[test]
    fn pmf_mass_is_complete(mu in 0.0f64..5.0) {
        let n = truncation_limit(mu);
        let total: f64 = (0..=n).map(|k| poisson_pmf(mu, k).unwrap()).sum();
        prop_assert!(total >= 1.0 - 1e-12);
        prop_assert!(total <= 1.0 + 1e-12);
    }

    #[test]
    fn yields_increase_with_photon_number(y0 in 0.0f64..1.0, eta in 0.0f64..=1.0, n in 0u32..60) {
        let a = yield_n(y0, eta, n).unwrap();
        let b = yield_n(y0, eta, n + 1).unwrap();
        prop_assert!(b >= a);
        if eta == 0.0 {
            prop_assert_eq!(a, b);
        } else if eta < 1.0 && y0 < 1.0 && b < 1.0 {
            prop_assert!(b > a);
        }
    }

    #[test]
    fn gain_monotone_and_bounded(
        mu in 0.0f64..3.0,
        dmu in 0.0f64..1.0,
        eta in 1e-6f64..1.0,
        deta in 0.0f64..0.5,
        y0 in 0.0f64..1e-3,
        ed in 0.0f64..0.5,
    ) {
        let cd = channel_with_eta(eta, y0, ed);
        let cd_more = channel_with_eta((eta + deta).min(1.0), y0, ed);
        let g = expected_gain_qber(mu, &cd).unwrap();
        let g_mu = expected_gain_qber(mu + dmu, &cd).unwrap();
        let g_eta = expected_gain_qber(mu, &cd_more).unwrap();
        prop_assert!(g_mu.gain >= g.gain);
        prop_assert!(g_eta.gain >= g.gain);
        prop_assert!(g_mu.error_gain() >= g.error_gain() - 1e-18);

        let photon = -(-eta * mu).exp_m1();
        let lower = (y0 * (-eta * mu).exp()).max((1.0 - y0) * photon);
        prop_assert!(g.gain >= lower - 1e-18);
        prop_assert!((0.0..=1.0).contains(&g.qber));
    }

    #[test]
    fn transmittance_decreases_with_distance(d in 0.0f64..300.0, dd in 0.0f64..50.0) {
        let near = ChannelDetector::default().with_distance(d);
        let far = near.with_distance(d + dd);
        prop_assert!(far.transmittance() <= near.transmittance());
        prop_assert!(near.transmittance() > 0.0 && near.transmittance() <= 1.0);
    }
}
