use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

const BISECTION_STEPS: usize = 200;

/// Exact binomial (Clopper–Pearson) bounds for `successes` out of `trials`.
///
/// Each side is a one-sided bound with tail probability `tail`: the true
/// proportion lies below `lo` with probability at most `tail`, and above `hi`
/// with probability at most `tail`.
pub fn clopper_pearson(successes: u64, trials: u64, tail: f64) -> Result<(f64, f64)> {
    if trials == 0 || successes > trials {
        return Err(Error::Estimation(format!(
            "binomial interval needs 0 <= successes <= trials and trials > 0, got {successes}/{trials}"
        )));
    }
    if !(tail > 0.0 && tail < 0.5) {
        return Err(Error::Domain {
            name: "tail",
            value: tail,
            expected: "tail probability must lie in (0, 0.5)",
        });
    }
    let k = successes as f64;
    let n = trials as f64;

    // P(X >= k | p) = I_p(k, n - k + 1), increasing in p
    let lo = if successes == 0 {
        0.0
    } else {
        solve_increasing(|p| beta_reg(k, n - k + 1.0, p), tail)
    };
    // P(X <= k | p) = 1 - I_p(k + 1, n - k), decreasing in p
    let hi = if successes == trials {
        1.0
    } else {
        solve_increasing(|p| beta_reg(k + 1.0, n - k, p), 1.0 - tail)
    };
    Ok((lo, hi))
}

// smallest p in [0, 1] with f(p) >= target, for f increasing in p
fn solve_increasing(f: impl Fn(f64) -> f64, target: f64) -> f64 {
    let (mut a, mut b) = (0.0_f64, 1.0_f64);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if f(mid) < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Dark-count yield estimated from the vacuum decoy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Y0Estimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Y0Estimate {
    /// The bounds to use when no vacuum decoy was sent.
    pub fn conservative_fallback() -> Self {
        Y0Estimate {
            point: 0.0,
            lo: 0.0,
            hi: 1.0,
        }
    }

    pub fn exact(y0: f64) -> Self {
        Y0Estimate {
            point: y0,
            lo: y0,
            hi: y0,
        }
    }

    pub fn contains(&self, y0: f64) -> bool {
        self.lo <= y0 && y0 <= self.hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_successes_matches_closed_form() {
        let (lo, hi) = clopper_pearson(0, 1_000_000, 1e-6).unwrap();
        assert_eq!(lo, 0.0);
        // 1 - tail^(1/n)
        let expected = -(1e-6f64.ln() / 1e6).exp_m1();
        assert!((hi - expected).abs() < 1e-12, "{hi} vs {expected}");
        assert!((hi - 1.3815e-5).abs() < 1e-8);
    }

    #[test]
    fn all_successes() {
        let (lo, hi) = clopper_pearson(50, 50, 1e-6).unwrap();
        assert_eq!(hi, 1.0);
        let expected = 1e-6f64.powf(1.0 / 50.0);
        assert!((lo - expected).abs() < 1e-12);
    }

    #[test]
    fn interval_brackets_point_and_tails_hold() {
        // tails checked against the binomial sums directly
        let (k, n, tail) = (7u64, 40u64, 0.025);
        let (lo, hi) = clopper_pearson(k, n, tail).unwrap();
        let p_hat = k as f64 / n as f64;
        assert!(lo < p_hat && p_hat < hi);

        let binom = |p: f64, j: u64| {
            let ln_c = statrs::function::factorial::ln_binomial(n, j);
            (ln_c + j as f64 * p.ln() + (n - j) as f64 * (1.0 - p).ln()).exp()
        };
        let upper_tail_at_lo: f64 = (k..=n).map(|j| binom(lo, j)).sum();
        let lower_tail_at_hi: f64 = (0..=k).map(|j| binom(hi, j)).sum();
        assert!((upper_tail_at_lo - tail).abs() < 1e-9);
        assert!((lower_tail_at_hi - tail).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(clopper_pearson(1, 0, 0.01).is_err());
        assert!(clopper_pearson(5, 4, 0.01).is_err());
        assert!(clopper_pearson(1, 4, 0.7).is_err());
    }
}
