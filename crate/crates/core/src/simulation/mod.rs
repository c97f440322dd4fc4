//! Monte Carlo execution of a decoy-state BB84 session.
//!
//! Pulses are simulated in fixed-size blocks. Block `b` draws from a ChaCha8
//! stream seeded with the session seed and stream index `b`, so the result is
//! the same for any number of worker threads. Within a pulse the draws are
//! consumed in this order:
//!
//! 1. intensity class
//! 2. photon number (inverse CDF, one uniform)
//! 3. Alice's bit, then Alice's basis
//! 4. Eve's blocking draw (only under PNS with exactly one photon)
//! 5. one draw per photon reaching the channel
//! 6. dark count
//! 7. Bob's basis (matches Alice's with probability q)
//! 8. Bob's bit: one draw when he clicks
//!
//! Bob's bit on a click: basis mismatch gives a random bit; a photon-only click
//! is flipped with probability e_d; a dark-only click errs with probability e0;
//! when both fire the bit is uniformly random.

mod expected;
mod tally;
mod trace;

use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    poisson_pmf, truncation_limit, ChannelDetector, ClassLabel, IntensityClass, SourceSchedule,
};

pub use expected::expected_class_rates;
pub use tally::{sift_and_tally, ClassTally, ObservedStatistics};
pub use trace::{write_trace, TRACE_HEADER};

/// Pulses per RNG stream.
pub const BLOCK_SIZE: u64 = 1 << 16;

/// Largest session for which a pulse trace may be retained.
pub const MAX_TRACE_PULSES: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub schedule: SourceSchedule,
    pub pulses_total: u64,
    pub channel: ChannelDetector,
    /// Probability that Bob's basis matches Alice's (q).
    pub basis_match_prob: f64,
    pub rng_seed: u64,
    pub qber_abort_threshold: f64,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        for class in self.schedule.classes() {
            class.validate()?;
        }
        if self.pulses_total == 0 {
            return Err(Error::config("protocol.pulses_total", "must be >= 1"));
        }
        if !(self.basis_match_prob > 0.0 && self.basis_match_prob <= 1.0) {
            return Err(Error::config(
                "protocol.basis_match_prob",
                format!("must lie in (0, 1], got {}", self.basis_match_prob),
            ));
        }
        if !(0.0..=1.0).contains(&self.qber_abort_threshold) {
            return Err(Error::config(
                "protocol.qber_abort_threshold",
                format!("must lie in [0, 1], got {}", self.qber_abort_threshold),
            ));
        }
        self.channel.validate()
    }
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let schedule = SourceSchedule::new(vec![
            IntensityClass {
                label: ClassLabel::Signal,
                mu: 0.5,
                send_probability: 0.8,
            },
            IntensityClass {
                label: ClassLabel::VacuumDecoy,
                mu: 0.0,
                send_probability: 0.1,
            },
            IntensityClass {
                label: ClassLabel::WeakDecoy,
                mu: 0.05,
                send_probability: 0.1,
            },
        ])
        .expect("default schedule is valid");
        ProtocolConfig {
            schedule,
            pulses_total: 1_000_000,
            channel: ChannelDetector::default(),
            basis_match_prob: 0.5,
            rng_seed: 42,
            qber_abort_threshold: 0.11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EveKind {
    None,
    Pns,
}

impl fmt::Display for EveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EveKind::None => "none",
            EveKind::Pns => "pns",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EveStrategy {
    pub kind: EveKind,
    /// Probability Eve suppresses a single-photon pulse.
    pub single_block_prob: f64,
    /// Transmittance of Eve's own line for the photons she forwards.
    pub forward_transmittance_override: Option<f64>,
}

impl EveStrategy {
    pub fn none() -> Self {
        EveStrategy {
            kind: EveKind::None,
            single_block_prob: 0.0,
            forward_transmittance_override: None,
        }
    }

    pub fn pns(single_block_prob: f64, forward_transmittance_override: Option<f64>) -> Self {
        EveStrategy {
            kind: EveKind::Pns,
            single_block_prob,
            forward_transmittance_override,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.single_block_prob) {
            return Err(Error::config(
                "eve.single_block_prob",
                format!("must lie in [0, 1], got {}", self.single_block_prob),
            ));
        }
        if let Some(t) = self.forward_transmittance_override {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::config(
                    "eve.forward_transmittance",
                    format!("must lie in (0, 1], got {t}"),
                ));
            }
        }
        Ok(())
    }
}

impl Default for EveStrategy {
    fn default() -> Self {
        EveStrategy::none()
    }
}

/// What Eve did to a pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EveAction {
    Pass,
    Blocked,
    /// Eve kept `kept` photons and forwarded the rest.
    Split { kept: u32 },
}

impl fmt::Display for EveAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EveAction::Pass => f.write_str("pass"),
            EveAction::Blocked => f.write_str("blocked"),
            EveAction::Split { kept } => write!(f, "split_{kept}_kept"),
        }
    }
}

/// The life of one pulse, from Alice's source to Bob's detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub index: u64,
    pub class: ClassLabel,
    pub photon_number_emitted: u32,
    pub alice_bit: bool,
    pub alice_basis: bool,
    pub eve_action: EveAction,
    /// Photons entering the final stretch to Bob, after Eve.
    pub photon_number_arriving: u32,
    pub bob_clicked: bool,
    pub bob_bit: Option<bool>,
    pub bob_basis: bool,
}

/// Eve's photon-number-splitting rule: suppress singles (with probability
/// `single_block_prob`), keep one photon of every multi-photon pulse.
///
/// A uniform is drawn from `rng` only for a single photon under PNS.
pub fn pns_decision<R: Rng + ?Sized>(photon_number: u32, eve: &EveStrategy, rng: &mut R) -> EveAction {
    match (eve.kind, photon_number) {
        (EveKind::None, _) | (EveKind::Pns, 0) => EveAction::Pass,
        (EveKind::Pns, 1) => {
            if rng.random::<f64>() < eve.single_block_prob {
                EveAction::Blocked
            } else {
                EveAction::Pass
            }
        }
        (EveKind::Pns, _) => EveAction::Split { kept: 1 },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutput {
    pub statistics: ObservedStatistics,
    pub trace: Option<Vec<PulseRecord>>,
}

/// Runs `config.pulses_total` pulses through Eve, the channel and Bob's
/// detector and returns the sifted per-class tallies. With `keep_trace` every
/// pulse record is also returned, which is refused above [`MAX_TRACE_PULSES`].
///
/// Blocks are processed on the current rayon pool.
pub fn run_session(config: &ProtocolConfig, eve: &EveStrategy, keep_trace: bool) -> Result<SessionOutput> {
    config.validate()?;
    eve.validate()?;
    if keep_trace && config.pulses_total > MAX_TRACE_PULSES {
        return Err(Error::config(
            "protocol.pulses_total",
            format!(
                "trace retention is limited to {MAX_TRACE_PULSES} pulses, got {}",
                config.pulses_total
            ),
        ));
    }

    let kernel = PulseKernel::new(config, eve)?;
    let blocks = config.pulses_total.div_ceil(BLOCK_SIZE);
    let shards: Vec<(ObservedStatistics, Vec<PulseRecord>)> = (0..blocks)
        .into_par_iter()
        .map(|block| kernel.run_block(block, keep_trace))
        .collect();

    let mut statistics = ObservedStatistics::for_schedule(&config.schedule);
    let mut trace = keep_trace.then(Vec::new);
    for (shard, records) in shards {
        statistics = statistics.merge(&shard);
        if let Some(trace) = trace.as_mut() {
            trace.extend(records);
        }
    }
    Ok(SessionOutput { statistics, trace })
}

struct ClassSampler {
    label: ClassLabel,
    /// Cumulative send probability up to and including this class.
    cumulative: f64,
    mu: f64,
    photon_cdf: Vec<f64>,
}

impl ClassSampler {
    fn photon_number(&self, u: f64) -> u32 {
        match self.photon_cdf.iter().position(|&c| u < c) {
            Some(n) => n as u32,
            None => self.tail_photon_number(u),
        }
    }

    // beyond the table: keep accumulating pmf terms
    fn tail_photon_number(&self, u: f64) -> u32 {
        let mut n = self.photon_cdf.len() as u32;
        let mut cdf = self.photon_cdf.last().copied().unwrap_or(0.0);
        let mut pmf = poisson_pmf(self.mu, n).unwrap_or(0.0);
        loop {
            cdf += pmf;
            if u < cdf || pmf == 0.0 {
                return n;
            }
            n += 1;
            pmf *= self.mu / f64::from(n);
        }
    }
}

struct PulseKernel {
    classes: Vec<ClassSampler>,
    eve: EveStrategy,
    seed: u64,
    pulses_total: u64,
    eta: f64,
    forward: f64,
    y0: f64,
    e0: f64,
    ed: f64,
    q: f64,
}

impl PulseKernel {
    fn new(config: &ProtocolConfig, eve: &EveStrategy) -> Result<Self> {
        let mut cumulative = 0.0;
        let mut classes = Vec::with_capacity(config.schedule.classes().len());
        for class in config.schedule.classes() {
            cumulative += class.send_probability;
            let mut photon_cdf = Vec::new();
            let mut acc = 0.0;
            for n in 0..=truncation_limit(class.mu) {
                acc += poisson_pmf(class.mu, n)?;
                photon_cdf.push(acc);
            }
            classes.push(ClassSampler {
                label: class.label,
                cumulative,
                mu: class.mu,
                photon_cdf,
            });
        }
        let eta = config.channel.transmittance();
        Ok(PulseKernel {
            classes,
            eve: *eve,
            seed: config.rng_seed,
            pulses_total: config.pulses_total,
            eta,
            forward: eve.forward_transmittance_override.unwrap_or(eta),
            y0: config.channel.dark_count_prob,
            e0: config.channel.erroneous_dark_fraction,
            ed: config.channel.misalignment_error,
            q: config.basis_match_prob,
        })
    }

    fn run_block(&self, block: u64, keep_trace: bool) -> (ObservedStatistics, Vec<PulseRecord>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(block);
        let start = block * BLOCK_SIZE;
        let end = (start + BLOCK_SIZE).min(self.pulses_total);

        let mut tallies: Vec<ClassTally> = self
            .classes
            .iter()
            .map(|c| ClassTally::new(c.label, c.mu))
            .collect();
        let mut records = Vec::new();
        if keep_trace {
            records.reserve((end - start) as usize);
        }
        for index in start..end {
            let (class_idx, record) = self.pulse(index, &mut rng);
            tallies[class_idx].record(&record);
            if keep_trace {
                records.push(record);
            }
        }
        (ObservedStatistics::from_tallies(tallies), records)
    }

    fn pulse(&self, index: u64, rng: &mut ChaCha8Rng) -> (usize, PulseRecord) {
        let u_class: f64 = rng.random();
        let class_idx = self
            .classes
            .iter()
            .position(|c| u_class < c.cumulative)
            .unwrap_or(self.classes.len() - 1);
        let class = &self.classes[class_idx];

        let emitted = class.photon_number(rng.random());
        let alice_bit: bool = rng.random();
        let alice_basis: bool = rng.random();

        let eve_action = pns_decision(emitted, &self.eve, rng);
        let (arriving, t) = match eve_action {
            EveAction::Pass => (emitted, self.eta),
            EveAction::Blocked => (0, self.eta),
            EveAction::Split { kept } => (emitted - kept, self.forward),
        };

        let mut photon_fired = false;
        for _ in 0..arriving {
            photon_fired |= rng.random::<f64>() < t;
        }
        let dark_fired = rng.random::<f64>() < self.y0;

        let bob_basis = if rng.random::<f64>() < self.q {
            alice_basis
        } else {
            !alice_basis
        };

        let bob_clicked = photon_fired || dark_fired;
        let bob_bit = bob_clicked.then(|| {
            if bob_basis != alice_basis || (photon_fired && dark_fired) {
                rng.random::<bool>()
            } else {
                let flip = if photon_fired { self.ed } else { self.e0 };
                alice_bit ^ (rng.random::<f64>() < flip)
            }
        });

        let record = PulseRecord {
            index,
            class: class.label,
            photon_number_emitted: emitted,
            alice_bit,
            alice_basis,
            eve_action,
            photon_number_arriving: arriving,
            bob_clicked,
            bob_bit,
            bob_basis,
        };
        (class_idx, record)
    }
}
