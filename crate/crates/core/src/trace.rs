//! Append-only event log.
//!
//! One record per bus cycle, interrupt, trip, ring delivery, or front-panel
//! signal change, as a line of eight space-separated fields:
//!
//! ```text
//! time_ps kind space address width data outcome slot
//! ```
//!
//! `address` is always `0x` + six hex digits, `data` is `0x` + four hex
//! digits, and `-` stands for a field that does not apply to the record
//! kind. The format is frozen; runs with identical inputs produce
//! byte-identical logs.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::bus::{AddressSpace, CycleOutcome, DataWidth};

/// One trace record, not yet formatted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceRecord {
    Cycle {
        kind: &'static str,
        space: AddressSpace,
        address: u32,
        width: DataWidth,
        data: u16,
        outcome: CycleOutcome,
        slot: Option<u8>,
    },
    /// Interrupt-acknowledge cycle; `level` stands in the address field.
    Iack {
        level: u8,
        width: DataWidth,
        vector: u16,
        outcome: CycleOutcome,
        slot: Option<u8>,
    },
    /// Interrupt request posted.
    IrqPosted { level: u8, width: DataWidth, vector: u16, slot: u8 },
    /// Machine-protection shutdown assertion; `reason` is the encoded cause.
    Trip { reason: u16, slot: u8 },
    /// Ring frame arrival (or drop) at a board; `serial` is the receiver.
    Ring { dest: u8, payload: u16, delivered: bool, serial: u8 },
    /// High-voltage front-panel optical output edge.
    HvOptical { signal: HvSignal, asserted: bool, slot: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HvSignal {
    On,
    Fault,
}

enum Sink {
    Null,
    Memory(Vec<u8>),
    File(BufWriter<File>),
}

/// The event log writer.
pub struct TraceLog {
    sink: Sink,
}

impl TraceLog {
    /// Discard all records (benchmarks).
    pub fn null() -> Self {
        Self { sink: Sink::Null }
    }

    /// Collect records in memory; retrieve with [`TraceLog::bytes`].
    pub fn memory() -> Self {
        Self { sink: Sink::Memory(Vec::new()) }
    }

    pub fn file(path: &Path) -> io::Result<Self> {
        Ok(Self { sink: Sink::File(BufWriter::new(File::create(path)?)) })
    }

    pub fn bytes(&self) -> &[u8] {
        match &self.sink {
            Sink::Memory(buf) => buf,
            _ => &[],
        }
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(self.bytes()).into_owned()
    }

    pub fn flush(&mut self) -> io::Result<()> {
        if let Sink::File(w) = &mut self.sink {
            w.flush()?;
        }
        Ok(())
    }

    pub fn log(&mut self, time_ps: u64, record: TraceRecord) {
        if matches!(self.sink, Sink::Null) {
            return;
        }
        let line = format_record(time_ps, &record);
        match &mut self.sink {
            Sink::Null => {}
            Sink::Memory(buf) => buf.extend_from_slice(line.as_bytes()),
            Sink::File(w) => {
                // Trace write failures abort the run loudly rather than
                // silently producing a truncated log.
                w.write_all(line.as_bytes()).expect("trace write failed");
            }
        }
    }
}

fn slot_field(slot: Option<u8>) -> String {
    match slot {
        Some(s) => s.to_string(),
        None => "-".to_string(),
    }
}

fn format_record(time_ps: u64, record: &TraceRecord) -> String {
    match record {
        TraceRecord::Cycle { kind, space, address, width, data, outcome, slot } => format!(
            "{} {} {} 0x{:06x} {} 0x{:04x} {} {}\n",
            time_ps,
            kind,
            space.label(),
            address,
            width.label(),
            data,
            outcome.label(),
            slot_field(*slot),
        ),
        TraceRecord::Iack { level, width, vector, outcome, slot } => format!(
            "{} iack - 0x{:06x} {} 0x{:04x} {} {}\n",
            time_ps,
            *level as u32,
            width.label(),
            vector,
            outcome.label(),
            slot_field(*slot),
        ),
        TraceRecord::IrqPosted { level, width, vector, slot } => format!(
            "{} irq - 0x{:06x} {} 0x{:04x} - {}\n",
            time_ps, *level as u32, width.label(), vector, slot,
        ),
        TraceRecord::Trip { reason, slot } => {
            format!("{} trip - - - 0x{:04x} - {}\n", time_ps, reason, slot)
        }
        TraceRecord::Ring { dest, payload, delivered, serial } => format!(
            "{} ring - 0x{:06x} - 0x{:04x} {} {}\n",
            time_ps,
            *dest as u32,
            payload,
            if *delivered { "delivered" } else { "dropped" },
            serial,
        ),
        TraceRecord::HvOptical { signal, asserted, slot } => format!(
            "{} hv - - - 0x{:04x} {} {}\n",
            time_ps,
            *asserted as u16,
            match signal {
                HvSignal::On => "on",
                HvSignal::Fault => "fault",
            },
            slot,
        ),
    }
}
