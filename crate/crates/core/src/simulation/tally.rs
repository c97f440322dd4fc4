use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PulseRecord;
use crate::models::{ClassLabel, SourceSchedule};

/// Sifted counts for one intensity class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassTally {
    pub label: ClassLabel,
    pub mu: f64,
    pub n_sent: u64,
    pub n_sifted: u64,
    pub n_detected_sifted: u64,
    pub n_errors_sifted: u64,
}

impl ClassTally {
    pub fn new(label: ClassLabel, mu: f64) -> Self {
        ClassTally {
            label,
            mu,
            n_sent: 0,
            n_sifted: 0,
            n_detected_sifted: 0,
            n_errors_sifted: 0,
        }
    }

    /// Observed gain, detections per sifted pulse. Zero when nothing was sifted.
    pub fn gain(&self) -> f64 {
        if self.n_sifted == 0 {
            0.0
        } else {
            self.n_detected_sifted as f64 / self.n_sifted as f64
        }
    }

    /// Observed QBER among sifted detections.
    pub fn qber(&self) -> f64 {
        self.n_errors_sifted as f64 / self.n_detected_sifted.max(1) as f64
    }

    /// Errors per sifted pulse, the observed E·Q.
    pub fn error_gain(&self) -> f64 {
        if self.n_sifted == 0 {
            0.0
        } else {
            self.n_errors_sifted as f64 / self.n_sifted as f64
        }
    }

    pub fn record(&mut self, pulse: &PulseRecord) {
        self.n_sent += 1;
        if pulse.alice_basis != pulse.bob_basis {
            return;
        }
        self.n_sifted += 1;
        if pulse.bob_clicked {
            self.n_detected_sifted += 1;
            if pulse.bob_bit != Some(pulse.alice_bit) {
                self.n_errors_sifted += 1;
            }
        }
    }

    fn absorb(&mut self, other: &ClassTally) {
        self.n_sent += other.n_sent;
        self.n_sifted += other.n_sifted;
        self.n_detected_sifted += other.n_detected_sifted;
        self.n_errors_sifted += other.n_errors_sifted;
    }
}

/// Per-class tallies of a session. Merging is associative and commutative, so
/// shards can be combined in any grouping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservedStatistics {
    classes: BTreeMap<ClassLabel, ClassTally>,
}

impl ObservedStatistics {
    /// All-zero tallies for every class in `schedule`.
    pub fn for_schedule(schedule: &SourceSchedule) -> Self {
        let classes = schedule
            .classes()
            .iter()
            .map(|c| (c.label, ClassTally::new(c.label, c.mu)))
            .collect();
        ObservedStatistics { classes }
    }

    pub fn from_tallies(tallies: impl IntoIterator<Item = ClassTally>) -> Self {
        let mut stats = ObservedStatistics::default();
        for tally in tallies {
            stats.insert(tally);
        }
        stats
    }

    fn insert(&mut self, tally: ClassTally) {
        self.classes
            .entry(tally.label)
            .and_modify(|t| t.absorb(&tally))
            .or_insert(tally);
    }

    pub fn get(&self, label: ClassLabel) -> Option<&ClassTally> {
        self.classes.get(&label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClassTally> {
        self.classes.values()
    }

    pub fn record(&mut self, pulse: &PulseRecord) {
        if let Some(tally) = self.classes.get_mut(&pulse.class) {
            tally.record(pulse);
        }
    }

    pub fn merge(mut self, other: &ObservedStatistics) -> Self {
        for tally in other.iter() {
            self.insert(*tally);
        }
        self
    }

    pub fn total_sent(&self) -> u64 {
        self.iter().map(|t| t.n_sent).sum()
    }

    pub fn total_sifted(&self) -> u64 {
        self.iter().map(|t| t.n_sifted).sum()
    }
}

/// Groups records by class, drops basis mismatches and counts detections and
/// errors among the rest.
pub fn sift_and_tally(records: &[PulseRecord], schedule: &SourceSchedule) -> ObservedStatistics {
    let mut stats = ObservedStatistics::for_schedule(schedule);
    for record in records {
        stats.record(record);
    }
    stats
}
