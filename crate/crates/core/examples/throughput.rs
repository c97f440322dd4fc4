use std::time::Instant;

use decoy_core::simulation::{run_session, EveStrategy, ProtocolConfig};

fn main() {
    let config = ProtocolConfig {
        pulses_total: 10_000_000,
        ..ProtocolConfig::default()
    };
    let start = Instant::now();
    let out = run_session(&config, &EveStrategy::none(), false).unwrap();
    let elapsed = start.elapsed();
    println!(
        "{} pulses in {:.2?} ({:.1} ns/pulse)",
        out.statistics.total_sent(),
        elapsed,
        elapsed.as_nanos() as f64 / config.pulses_total as f64
    );
}
