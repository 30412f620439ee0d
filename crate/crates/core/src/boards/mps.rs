//! Machine-protection comparator: computes instantaneous and integrated
//! beam loss from the injector and end-station currents, enforces operator
//! limits, latches a machine shutdown, and records history in an 8 MiB
//! circular buffer readable over VME. Runs at 40 MHz behind a 16-bit slave
//! interface.

use thiserror::Error;

use crate::boards::{AccessReq, Board, BoardCtx, InterfaceWidth, WindowId};
use crate::clock::ClockRate;
use crate::scalar::{leaky_integrate_step, offset_binary_code, round_half_away};
use crate::slave::{Access, AccessFault, RegisterDescriptor, RegisterFile, RegisterMap};
use crate::trace::TraceRecord;
use crate::Real;

/// Circular-buffer geometry: fixed 24-byte records in 8 MiB of SDRAM.
pub const BUFFER_BYTES: usize = 8 * 1024 * 1024;
pub const RECORD_BYTES: usize = 24;
pub const BUFFER_CAPACITY: usize = BUFFER_BYTES / RECORD_BYTES; // 349525

/// Sample clock for frame timestamps.
pub const TICKS_PER_SECOND: f64 = 40_000_000.0;

pub const FLAG_VALID: u16 = 0x0001;
pub const FLAG_SHUTDOWN: u16 = 0x0002;

pub const MAX_STATIONS: usize = 7;

/// One synchronized set of beam-current readings.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentFrame {
    /// 40 MHz tick count.
    pub timestamp_ticks: u64,
    pub injector_ua: Real,
    pub station_ua: Vec<Real>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShutdownReason {
    None,
    /// Location 0 is the injector; 1..=7 are the end stations.
    LocationLimit(usize),
    IntegratedLimit,
}

impl ShutdownReason {
    pub fn code(self) -> u16 {
        match self {
            ShutdownReason::None => 0,
            ShutdownReason::LocationLimit(i) => 1 + i as u16,
            ShutdownReason::IntegratedLimit => 9,
        }
    }
}

/// Verdict for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripDecision {
    pub instantaneous_ua: Real,
    pub integrated_uas: Real,
    pub shutdown: bool,
    pub reason: ShutdownReason,
    /// True only in the frame whose evaluation asserted the shutdown.
    pub tripped_now: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpsConfig {
    pub station_count: usize,
    pub injector_limit_ua: Real,
    pub station_limits_ua: Vec<Real>,
    pub integrated_limit_uas: Real,
    /// Decay constant applied while the loss is below the knee.
    pub tau_low_loss_s: Real,
    /// Decay constant applied at or above the knee. Must not be shorter
    /// than `tau_low_loss_s`: large losses are retained longer so the
    /// integrated term trips sooner.
    pub tau_high_loss_s: Real,
    pub loss_knee_ua: Real,
    pub dac_full_scale_ua: Real,
}

impl Default for MpsConfig {
    fn default() -> Self {
        Self {
            station_count: 3,
            injector_limit_ua: 200.0,
            station_limits_ua: vec![60.0; MAX_STATIONS],
            integrated_limit_uas: 100.0,
            tau_low_loss_s: 1.0,
            tau_high_loss_s: 10.0,
            loss_knee_ua: 50.0,
            dac_full_scale_ua: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("station count {0} outside 1..=7")]
    BadStationCount(usize),
    #[error("high-loss tau {high} shorter than low-loss tau {low}: adaptivity direction reversed")]
    TauDirection { low: Real, high: Real },
    #[error("need {want} station limits, got {got}")]
    LimitCount { want: usize, got: usize },
    #[error("non-positive decay constant")]
    BadTau,
}

impl MpsConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=MAX_STATIONS).contains(&self.station_count) {
            return Err(ConfigError::BadStationCount(self.station_count));
        }
        if self.station_limits_ua.len() < self.station_count {
            return Err(ConfigError::LimitCount {
                want: self.station_count,
                got: self.station_limits_ua.len(),
            });
        }
        if self.tau_low_loss_s <= 0.0
            || self.tau_high_loss_s <= 0.0
            || self.tau_low_loss_s.is_nan()
            || self.tau_high_loss_s.is_nan()
        {
            return Err(ConfigError::BadTau);
        }
        if self.tau_high_loss_s < self.tau_low_loss_s {
            return Err(ConfigError::TauDirection {
                low: self.tau_low_loss_s,
                high: self.tau_high_loss_s,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame carries {got} stations, configured for {want}")]
    StationCount { want: usize, got: usize },
    #[error("non-finite current value")]
    NonFinite,
    #[error("timestamp not after the previous frame")]
    NonMonotonicTimestamp,
}

/// Fixed 24-byte history record. All fields big-endian on the wire;
/// currents in 0.01 µA units, the timestamp in units of 1024 ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistoryRecord {
    pub timestamp_kticks: u32,
    pub injector_cua: u16,
    pub station_cua: [u16; MAX_STATIONS],
    pub loss_cua: i16,
    pub flags: u16,
}

impl HistoryRecord {
    pub fn encode(&self) -> [u8; RECORD_BYTES] {
        let mut out = [0u8; RECORD_BYTES];
        out[0..4].copy_from_slice(&self.timestamp_kticks.to_be_bytes());
        out[4..6].copy_from_slice(&self.injector_cua.to_be_bytes());
        for (i, s) in self.station_cua.iter().enumerate() {
            out[6 + 2 * i..8 + 2 * i].copy_from_slice(&s.to_be_bytes());
        }
        out[20..22].copy_from_slice(&self.loss_cua.to_be_bytes());
        out[22..24].copy_from_slice(&self.flags.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < RECORD_BYTES {
            return Err(FormatError::Truncated);
        }
        let mut station_cua = [0u16; MAX_STATIONS];
        for (i, s) in station_cua.iter_mut().enumerate() {
            *s = u16::from_be_bytes([bytes[6 + 2 * i], bytes[7 + 2 * i]]);
        }
        Ok(Self {
            timestamp_kticks: u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
            injector_cua: u16::from_be_bytes([bytes[4], bytes[5]]),
            station_cua,
            loss_cua: i16::from_be_bytes([bytes[20], bytes[21]]),
            flags: u16::from_be_bytes([bytes[22], bytes[23]]),
        })
    }

    pub fn injector_ua(&self) -> Real {
        self.injector_cua as Real / 100.0
    }

    pub fn station_ua(&self, station: usize) -> Real {
        self.station_cua[station] as Real / 100.0
    }

    pub fn loss_ua(&self) -> Real {
        self.loss_cua as Real / 100.0
    }
}

/// Quantize a current onto the 0.01 µA recording grid.
pub fn encode_current_cua(ua: Real) -> u16 {
    let code = round_half_away(ua * 100.0);
    code.clamp(0.0, 65535.0) as u16
}

pub fn encode_loss_cua(ua: Real) -> i16 {
    let code = round_half_away(ua * 100.0);
    code.clamp(i16::MIN as Real, i16::MAX as Real) as i16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("buffer or record truncated")]
    Truncated,
    #[error("pointer {0:#x} is not a record boundary inside the buffer")]
    BadPointer(u32),
    #[error("record at {0:#x} fails the validity flag")]
    InvalidRecord(u32),
    #[error("bad dump magic")]
    BadMagic,
}

/// Rebuild the history, oldest first, from raw buffer bytes and the
/// oldest-record pointer. Walking stops cleanly at the first never-written
/// slot; a slot with garbage flags is a format error.
pub fn reconstruct(buffer: &[u8], pointer: u32) -> Result<Vec<HistoryRecord>, FormatError> {
    let slots = buffer.len() / RECORD_BYTES;
    if slots == 0 {
        return Err(FormatError::Truncated);
    }
    if !(pointer as usize).is_multiple_of(RECORD_BYTES) || pointer as usize >= slots * RECORD_BYTES {
        return Err(FormatError::BadPointer(pointer));
    }
    let start_slot = pointer as usize / RECORD_BYTES;
    let mut records = Vec::new();
    for k in 0..slots {
        let slot = (start_slot + k) % slots;
        let off = slot * RECORD_BYTES;
        let bytes = &buffer[off..off + RECORD_BYTES];
        let rec = HistoryRecord::decode(bytes)?;
        if rec.flags & FLAG_VALID == 0 {
            if bytes.iter().any(|&b| b != 0) {
                return Err(FormatError::InvalidRecord(off as u32));
            }
            break;
        }
        records.push(rec);
    }
    Ok(records)
}

const DUMP_MAGIC: &[u8; 4] = b"MPSB";
const DUMP_VERSION: u16 = 1;

/// Serialize buffer + pointer as the on-disk dump: a 16-byte header
/// followed by the raw buffer image.
pub fn write_dump(out: &mut impl std::io::Write, buffer: &[u8], pointer: u32) -> std::io::Result<()> {
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&DUMP_VERSION.to_be_bytes())?;
    out.write_all(&(RECORD_BYTES as u16).to_be_bytes())?;
    out.write_all(&pointer.to_be_bytes())?;
    out.write_all(&[0u8; 4])?;
    out.write_all(buffer)
}

pub fn read_dump(bytes: &[u8]) -> Result<(&[u8], u32), FormatError> {
    if bytes.len() < 16 + RECORD_BYTES {
        return Err(FormatError::Truncated);
    }
    if &bytes[0..4] != DUMP_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let pointer = u32::from_be_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
    Ok((&bytes[16..], pointer))
}

const REG_STATUS: usize = 0;
const REG_REASON: usize = 1;
const REG_CONTROL: usize = 2;
const REG_DAC: usize = 3;
const REG_PTR_LO: usize = 4;
const REG_PTR_HI: usize = 5;
const REG_INT_LIMIT: usize = 6;
const REG_INJ_LIMIT: usize = 7;
const REG_STATION_BASE: usize = 8;

fn mps_map() -> RegisterMap {
    let mut regs = vec![
        RegisterDescriptor { name: "status", offset: 0x00, width_bits: 16, access: Access::RO, reset_value: 0 },
        RegisterDescriptor { name: "reason", offset: 0x02, width_bits: 16, access: Access::RO, reset_value: 0 },
        RegisterDescriptor { name: "control", offset: 0x04, width_bits: 16, access: Access::WO, reset_value: 0 },
        RegisterDescriptor { name: "dac", offset: 0x06, width_bits: 16, access: Access::RO, reset_value: 32768 },
        RegisterDescriptor { name: "pointer_lo", offset: 0x08, width_bits: 16, access: Access::RO, reset_value: 0 },
        RegisterDescriptor { name: "pointer_hi", offset: 0x0A, width_bits: 16, access: Access::RO, reset_value: 0 },
        RegisterDescriptor { name: "integrated_limit", offset: 0x0C, width_bits: 16, access: Access::RW, reset_value: 10000 },
        RegisterDescriptor { name: "injector_limit", offset: 0x0E, width_bits: 16, access: Access::RW, reset_value: 20000 },
    ];
    let names: [&'static str; MAX_STATIONS] = [
        "station_limit_1",
        "station_limit_2",
        "station_limit_3",
        "station_limit_4",
        "station_limit_5",
        "station_limit_6",
        "station_limit_7",
    ];
    for (i, name) in names.iter().enumerate() {
        regs.push(RegisterDescriptor {
            name,
            offset: 0x10 + 2 * i as u32,
            width_bits: 16,
            access: Access::RW,
            reset_value: 6000,
        });
    }
    RegisterMap::new(regs, 32).expect("static map")
}

pub struct MpsBoard {
    regs: RegisterFile,
    config: MpsConfig,
    buffer: Vec<u8>,
    /// Next slot to write, as a byte offset.
    write_ptr: u32,
    /// Records written, saturating at the capacity.
    filled: usize,
    integrated_uas: Real,
    shutdown: bool,
    reason: ShutdownReason,
    last_timestamp: Option<u64>,
    dac_code: u16,
}

impl MpsBoard {
    pub fn new(config: MpsConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut board = Self {
            regs: RegisterFile::new(mps_map()),
            config,
            buffer: vec![0; BUFFER_BYTES],
            write_ptr: 0,
            filled: 0,
            integrated_uas: 0.0,
            shutdown: false,
            reason: ShutdownReason::None,
            last_timestamp: None,
            dac_code: 32768,
        };
        board.sync_limit_registers();
        Ok(board)
    }

    pub fn config(&self) -> &MpsConfig {
        &self.config
    }

    pub fn integrated_uas(&self) -> Real {
        self.integrated_uas
    }

    pub fn shutdown(&self) -> bool {
        self.shutdown
    }

    pub fn reason(&self) -> ShutdownReason {
        self.reason
    }

    pub fn buffer(&self) -> &[u8] {
        &self.buffer
    }

    /// Byte offset of the oldest record (the pointer register pair).
    pub fn oldest_pointer(&self) -> u32 {
        if self.filled < BUFFER_CAPACITY {
            0
        } else {
            self.write_ptr
        }
    }

    pub fn records_stored(&self) -> usize {
        self.filled
    }

    pub fn dac_code(&self) -> u16 {
        self.dac_code
    }

    /// Injector current minus the summed end-station currents. May be
    /// negative (measurement skew).
    pub fn instantaneous_loss(&self, frame: &CurrentFrame) -> Result<Real, FrameError> {
        if frame.station_ua.len() != self.config.station_count {
            return Err(FrameError::StationCount {
                want: self.config.station_count,
                got: frame.station_ua.len(),
            });
        }
        if !frame.injector_ua.is_finite() || frame.station_ua.iter().any(|v| !v.is_finite()) {
            return Err(FrameError::NonFinite);
        }
        Ok(frame.injector_ua - frame.station_ua.iter().sum::<Real>())
    }

    /// One leaky-integrator step with the adaptive decay constant.
    pub fn integrate_step(config: &MpsConfig, integrated: Real, loss_ua: Real, dt_s: Real) -> Real {
        leaky_integrate_step(
            integrated,
            loss_ua,
            dt_s,
            config.tau_low_loss_s,
            config.tau_high_loss_s,
            config.loss_knee_ua,
        )
    }

    /// 16-bit offset-binary DAC code for an instantaneous loss.
    pub fn loss_dac(&self, loss_ua: Real) -> u16 {
        offset_binary_code(loss_ua, self.config.dac_full_scale_ua, 16) as u16
    }

    /// Operator reset: clears the shutdown latch, optionally the
    /// accumulated loss.
    pub fn operator_reset(&mut self, clear_integrated: bool) {
        self.shutdown = false;
        self.reason = ShutdownReason::None;
        if clear_integrated {
            self.integrated_uas = 0.0;
        }
    }

    /// Ingest one current frame: integrate, compare against limits, latch a
    /// shutdown on the first violated limit, and append a history record.
    pub fn process_frame(
        &mut self,
        frame: &CurrentFrame,
        ctx: &mut BoardCtx,
    ) -> Result<TripDecision, FrameError> {
        let loss = self.instantaneous_loss(frame)?;

        if let Some(prev) = self.last_timestamp {
            if frame.timestamp_ticks <= prev {
                return Err(FrameError::NonMonotonicTimestamp);
            }
            let dt_s = (frame.timestamp_ticks - prev) as Real / TICKS_PER_SECOND;
            self.integrated_uas = Self::integrate_step(&self.config, self.integrated_uas, loss, dt_s);
        }
        self.last_timestamp = Some(frame.timestamp_ticks);

        let mut tripped_now = false;
        if !self.shutdown {
            let violation = if frame.injector_ua > self.config.injector_limit_ua {
                Some(ShutdownReason::LocationLimit(0))
            } else if let Some(k) = (0..self.config.station_count)
                .find(|&k| frame.station_ua[k] > self.config.station_limits_ua[k])
            {
                Some(ShutdownReason::LocationLimit(k + 1))
            } else if self.integrated_uas > self.config.integrated_limit_uas {
                Some(ShutdownReason::IntegratedLimit)
            } else {
                None
            };
            if let Some(reason) = violation {
                self.shutdown = true;
                self.reason = reason;
                tripped_now = true;
                ctx.trace.log(ctx.now_ps, TraceRecord::Trip { reason: reason.code(), slot: ctx.slot });
            }
        }

        let mut station_cua = [0u16; MAX_STATIONS];
        for (i, ua) in frame.station_ua.iter().enumerate() {
            station_cua[i] = encode_current_cua(*ua);
        }
        let record = HistoryRecord {
            timestamp_kticks: (frame.timestamp_ticks / 1024) as u32,
            injector_cua: encode_current_cua(frame.injector_ua),
            station_cua,
            loss_cua: encode_loss_cua(loss),
            flags: FLAG_VALID | if self.shutdown { FLAG_SHUTDOWN } else { 0 },
        };
        self.append_record(&record);

        self.dac_code = self.loss_dac(loss);
        self.sync_state_registers();

        Ok(TripDecision {
            instantaneous_ua: loss,
            integrated_uas: self.integrated_uas,
            shutdown: self.shutdown,
            reason: self.reason,
            tripped_now,
        })
    }

    fn append_record(&mut self, record: &HistoryRecord) {
        let off = self.write_ptr as usize;
        self.buffer[off..off + RECORD_BYTES].copy_from_slice(&record.encode());
        self.write_ptr += RECORD_BYTES as u32;
        if self.write_ptr as usize >= BUFFER_CAPACITY * RECORD_BYTES {
            self.write_ptr = 0;
        }
        if self.filled < BUFFER_CAPACITY {
            self.filled += 1;
        }
    }

    /// History oldest to newest, as currently stored.
    pub fn history(&self) -> Vec<HistoryRecord> {
        reconstruct(&self.buffer, self.oldest_pointer()).expect("board-written buffer is well formed")
    }

    fn sync_state_registers(&mut self) {
        self.regs.set(REG_STATUS, self.shutdown as u16);
        self.regs.set(REG_REASON, self.reason.code());
        self.regs.set(REG_DAC, self.dac_code);
        let ptr = self.oldest_pointer();
        self.regs.set(REG_PTR_LO, (ptr & 0xFFFF) as u16);
        self.regs.set(REG_PTR_HI, (ptr >> 16) as u16);
    }

    fn sync_limit_registers(&mut self) {
        self.regs.set(REG_INT_LIMIT, encode_current_cua(self.config.integrated_limit_uas));
        self.regs.set(REG_INJ_LIMIT, encode_current_cua(self.config.injector_limit_ua));
        for i in 0..MAX_STATIONS {
            self.regs.set(REG_STATION_BASE + i, encode_current_cua(self.config.station_limits_ua[i]));
        }
    }
}

impl Board for MpsBoard {
    fn kind(&self) -> &'static str {
        "mps"
    }

    fn clock(&self) -> ClockRate {
        ClockRate::Mhz40
    }

    fn iface(&self) -> InterfaceWidth {
        InterfaceWidth::Bits16
    }

    fn register_map(&self) -> &RegisterMap {
        self.regs.map()
    }

    fn window_len(&self, window: WindowId) -> Option<u32> {
        match window {
            WindowId::Registers => Some(self.regs.map().window_bytes()),
            WindowId::Memory => Some(BUFFER_BYTES as u32),
        }
    }

    fn supports_block(&self, window: WindowId) -> bool {
        window == WindowId::Memory
    }

    fn tick(&mut self, _n: u64, _ctx: &mut BoardCtx) {}

    fn reset(&mut self, _ctx: &mut BoardCtx) {
        self.regs.reset();
        self.buffer.fill(0);
        self.write_ptr = 0;
        self.filled = 0;
        self.integrated_uas = 0.0;
        self.shutdown = false;
        self.reason = ShutdownReason::None;
        self.last_timestamp = None;
        self.dac_code = 32768;
        self.sync_limit_registers();
        self.sync_state_registers();
    }

    fn access(
        &mut self,
        window: WindowId,
        offset: u32,
        req: AccessReq,
        _ctx: &mut BoardCtx,
    ) -> Result<u16, AccessFault> {
        match window {
            WindowId::Registers => match req {
                AccessReq::Read { width } => {
                    self.sync_state_registers();
                    self.regs.bus_read(offset, width)
                }
                AccessReq::Write { width, data } => {
                    let note = self.regs.bus_write(offset, width, data)?;
                    match note.index {
                        REG_CONTROL => {
                            if note.written & 0x01 != 0 {
                                self.operator_reset(note.written & 0x02 != 0);
                            } else if note.written & 0x02 != 0 {
                                self.integrated_uas = 0.0;
                            }
                        }
                        REG_INT_LIMIT => {
                            self.config.integrated_limit_uas = note.written as Real / 100.0;
                        }
                        REG_INJ_LIMIT => {
                            self.config.injector_limit_ua = note.written as Real / 100.0;
                        }
                        i if (REG_STATION_BASE..REG_STATION_BASE + MAX_STATIONS).contains(&i) => {
                            self.config.station_limits_ua[i - REG_STATION_BASE] =
                                note.written as Real / 100.0;
                        }
                        _ => {}
                    }
                    Ok(data)
                }
                AccessReq::Rmw { .. } => Err(AccessFault::Unmapped),
            },
            WindowId::Memory => match req {
                AccessReq::Read { width } => {
                    let len = width.bytes();
                    if offset + len > BUFFER_BYTES as u32 {
                        return Err(AccessFault::Unmapped);
                    }
                    let off = offset as usize;
                    Ok(match width {
                        crate::bus::DataWidth::D08 => self.buffer[off] as u16,
                        crate::bus::DataWidth::D16 => {
                            ((self.buffer[off] as u16) << 8) | self.buffer[off + 1] as u16
                        }
                    })
                }
                // The history buffer is read-only from the bus.
                AccessReq::Write { .. } | AccessReq::Rmw { .. } => Err(AccessFault::WriteToReadOnly),
            },
        }
    }
}
