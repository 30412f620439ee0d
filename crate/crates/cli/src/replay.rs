//! Offline decode of a history-buffer dump into CSV, oldest record first.

use vmesim_core::boards::mps::{read_dump, reconstruct, FormatError, HistoryRecord};

pub const CSV_HEADER: &str =
    "time,injector,station_1,station_2,station_3,station_4,station_5,station_6,station_7,loss,flags";

fn csv_row(rec: &HistoryRecord) -> String {
    let mut row = format!("{},{:.2}", rec.timestamp_kticks as u64 * 1024, rec.injector_ua());
    for s in 0..7 {
        row.push_str(&format!(",{:.2}", rec.station_ua(s)));
    }
    row.push_str(&format!(",{:.2},0x{:04x}", rec.loss_ua(), rec.flags));
    row
}

/// Decode a dump file's bytes to CSV. `time` is in 40 MHz ticks (quantized
/// to 1024-tick units by the record format); currents are in µA.
pub fn replay_to_csv(dump_bytes: &[u8]) -> Result<String, FormatError> {
    let (buffer, pointer) = read_dump(dump_bytes)?;
    let records = reconstruct(buffer, pointer)?;
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for rec in &records {
        out.push_str(&csv_row(rec));
        out.push('\n');
    }
    Ok(out)
}
