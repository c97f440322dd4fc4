use std::io::{self, Write};

use super::PulseRecord;

pub const TRACE_HEADER: &str =
    "index,class,n_emitted,alice_bit,alice_basis,eve_action,n_arrived,clicked,bob_bit,bob_basis";

/// Writes one comma-separated line per pulse, header first. A pulse Bob did
/// not detect has an empty `bob_bit` field.
pub fn write_trace<W: Write>(records: &[PulseRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in records {
        let bob_bit = r.bob_bit.map(|b| u8::from(b).to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.index,
            r.class,
            r.photon_number_emitted,
            u8::from(r.alice_bit),
            u8::from(r.alice_basis),
            r.eve_action,
            r.photon_number_arriving,
            u8::from(r.bob_clicked),
            bob_bit,
            u8::from(r.bob_basis),
        )?;
    }
    out.flush()
}
