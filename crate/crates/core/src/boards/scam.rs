//! Timing-pulse generator board: three programmable pulse channels (one per
//! experimental hall) plus 16 optical I/O lines, on a 16 MHz clock behind an
//! 8-bit slave interface.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boards::{AccessReq, Board, BoardCtx, InterfaceWidth, WindowId};
use crate::clock::ClockRate;
use crate::slave::{Access, AccessFault, RegisterDescriptor, RegisterFile, RegisterMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hall {
    A,
    B,
    C,
}

impl Hall {
    pub const ALL: [Hall; 3] = [Hall::A, Hall::B, Hall::C];

    pub fn index(self) -> usize {
        match self {
            Hall::A => 0,
            Hall::B => 1,
            Hall::C => 2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Hall::A => 'a',
            Hall::B => 'b',
            Hall::C => 'c',
        }
    }
}

/// Pulse-train programming for one hall, in 16 MHz ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub period_ticks: u64,
    pub width_ticks: u64,
    pub delay_ticks: u64,
    pub enabled: bool,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.period_ticks == 0 || self.width_ticks == 0 {
            return Err(ConfigError::ZeroField);
        }
        if self.width_ticks >= self.period_ticks {
            return Err(ConfigError::WidthNotBelowPeriod {
                width: self.width_ticks,
                period: self.period_ticks,
            });
        }
        if self.delay_ticks >= self.period_ticks {
            return Err(ConfigError::DelayNotBelowPeriod {
                delay: self.delay_ticks,
                period: self.period_ticks,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("pulse width {width} must be below period {period}")]
    WidthNotBelowPeriod { width: u64, period: u64 },
    #[error("delay {delay} must be below period {period}")]
    DelayNotBelowPeriod { delay: u64, period: u64 },
    #[error("period and width must be positive")]
    ZeroField,
}

/// One waveform edge: the output changes to `level` at `tick`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub tick: u64,
    pub level: bool,
}

/// A stretch of the channel timeline governed by one config. `None` means
/// the channel is disabled for the stretch.
#[derive(Debug, Clone, Copy)]
struct Segment {
    start_tick: u64,
    config: Option<ChannelConfig>,
}

#[derive(Debug, Clone)]
struct Channel {
    segments: Vec<Segment>,
    /// Config staged by a reconfigure, applied at `0`'s period boundary.
    pending: Option<(u64, Option<ChannelConfig>)>,
}

impl Channel {
    fn new() -> Self {
        Self { segments: vec![Segment { start_tick: 0, config: None }], pending: None }
    }

    fn active_at(&self, tick: u64) -> (usize, &Segment) {
        let idx = self
            .segments
            .iter()
            .rposition(|s| s.start_tick <= tick)
            .expect("segment timeline starts at 0");
        (idx, &self.segments[idx])
    }

    /// Tick at which a config staged at `now` becomes active: the next
    /// period boundary of the running train, or immediately when disabled.
    fn application_tick(&self, now: u64) -> u64 {
        let (_, seg) = self.active_at(now);
        match seg.config {
            None => now,
            Some(cfg) => {
                let elapsed = now - seg.start_tick;
                let k = elapsed.div_ceil(cfg.period_ticks);
                seg.start_tick + k * cfg.period_ticks
            }
        }
    }

    fn stage(&mut self, now: u64, config: Option<ChannelConfig>) {
        self.pending = Some((self.application_tick(now), config));
    }

    fn commit_due(&mut self, now: u64) {
        if let Some((at, config)) = self.pending {
            if at <= now {
                self.segments.push(Segment { start_tick: at, config });
                self.pending = None;
            }
        }
    }

    /// Pulse intervals `[rise, rise + width)` whose rising edge lies in the
    /// given segment and that intersect `[from, to)`.
    fn segment_intervals(
        &self,
        seg_idx: usize,
        from: u64,
        to: u64,
        out: &mut Vec<(u64, u64)>,
    ) {
        let seg = &self.segments[seg_idx];
        let Some(cfg) = seg.config else { return };
        let seg_end = self
            .segments
            .get(seg_idx + 1)
            .map(|s| s.start_tick)
            .unwrap_or(u64::MAX);
        let first_rise = seg.start_tick + cfg.delay_ticks;
        if first_rise >= to || first_rise >= seg_end {
            return;
        }
        // Skip pulses that end at or before the window start.
        let k0 = if from > first_rise + cfg.width_ticks {
            (from - first_rise - cfg.width_ticks) / cfg.period_ticks
        } else {
            0
        };
        let mut k = k0;
        loop {
            let rise = first_rise + k * cfg.period_ticks;
            if rise >= to || rise >= seg_end {
                break;
            }
            let fall = rise + cfg.width_ticks;
            if fall > from {
                out.push((rise, fall));
            }
            k += 1;
        }
    }

    /// Edges in `[from, to)`, including the timeline staged by `pending`.
    fn edges(&self, from: u64, to: u64) -> Vec<Edge> {
        let timeline = self.timeline_with_pending();
        let mut intervals = Vec::new();
        for idx in 0..timeline.segments.len() {
            timeline.segment_intervals(idx, from, to, &mut intervals);
        }
        // Pulses straddling a reconfigure boundary may overlap the next
        // train; merge so the edge list stays alternating.
        let mut merged: Vec<(u64, u64)> = Vec::new();
        for (rise, fall) in intervals {
            match merged.last_mut() {
                Some(last) if rise <= last.1 => last.1 = last.1.max(fall),
                _ => merged.push((rise, fall)),
            }
        }
        let mut edges = Vec::new();
        for (rise, fall) in merged {
            if rise >= from {
                edges.push(Edge { tick: rise, level: true });
            }
            if fall < to {
                edges.push(Edge { tick: fall, level: false });
            }
        }
        edges
    }

    fn timeline_with_pending(&self) -> Channel {
        let mut copy = self.clone();
        if let Some((at, config)) = copy.pending.take() {
            copy.segments.push(Segment { start_tick: at, config });
        }
        copy
    }

    fn level_at(&self, tick: u64) -> bool {
        !self.timeline_with_pending().edges_level_probe(tick)
    }

    fn edges_level_probe(&self, tick: u64) -> bool {
        // Low iff no pulse interval covers `tick`; a pulse can carry over
        // from the previous segment, so probe a window one period back.
        let (idx, seg) = self.active_at(tick);
        let lookback = seg
            .config
            .map(|c| c.period_ticks)
            .unwrap_or(0)
            .max(self.segments[idx.saturating_sub(1)].config.map(|c| c.period_ticks).unwrap_or(0));
        let from = tick.saturating_sub(2 * lookback.max(1));
        let mut intervals = Vec::new();
        let start_idx = if idx == 0 { 0 } else { idx - 1 };
        for i in start_idx..=idx {
            self.segment_intervals(i, from, tick + 1, &mut intervals);
        }
        !intervals.iter().any(|&(r, f)| r <= tick && tick < f)
    }
}

const CTRL: usize = 0;
const PERIOD_BASE: usize = 1;
const WIDTH_BASE: usize = 4;

fn scam_map() -> RegisterMap {
    let regs = vec![
        RegisterDescriptor { name: "control", offset: 0, width_bits: 8, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "period_a", offset: 1, width_bits: 8, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "period_b", offset: 2, width_bits: 8, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "period_c", offset: 3, width_bits: 8, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "width_a", offset: 4, width_bits: 8, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "width_b", offset: 5, width_bits: 8, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "width_c", offset: 6, width_bits: 8, access: Access::RW, reset_value: 0 },
    ];
    RegisterMap::new(regs, 8).expect("static map")
}

/// The System Catch All timing board.
pub struct ScamBoard {
    regs: RegisterFile,
    channels: [Channel; 3],
    now_ticks: u64,
    /// Optical input lines 3..16 (0..3 mirror the hall outputs).
    optical_in: [bool; 16],
}

impl ScamBoard {
    pub fn new() -> Self {
        Self {
            regs: RegisterFile::new(scam_map()),
            channels: [Channel::new(), Channel::new(), Channel::new()],
            now_ticks: 0,
            optical_in: [false; 16],
        }
    }

    pub fn now_ticks(&self) -> u64 {
        self.now_ticks
    }

    /// Stage a full-resolution channel config; it takes effect at the next
    /// period boundary of the running train.
    pub fn configure_channel(&mut self, hall: Hall, config: ChannelConfig) -> Result<(), ConfigError> {
        config.validate()?;
        let staged = if config.enabled { Some(config) } else { None };
        self.channels[hall.index()].stage(self.now_ticks, staged);
        Ok(())
    }

    /// Edges of a hall's output in `[from_tick, to_tick)`.
    pub fn waveform(&self, hall: Hall, from_tick: u64, to_tick: u64) -> Vec<Edge> {
        assert!(from_tick <= to_tick, "waveform window reversed");
        self.channels[hall.index()].edges(from_tick, to_tick)
    }

    pub fn level(&self, hall: Hall, tick: u64) -> bool {
        self.channels[hall.index()].level_at(tick)
    }

    /// CSV rows `tick,hall,level` for every edge of every hall in the window.
    pub fn waveform_csv(&self, from_tick: u64, to_tick: u64) -> String {
        let mut out = String::from("tick,hall,level\n");
        let mut rows: Vec<(u64, Hall, bool)> = Vec::new();
        for hall in Hall::ALL {
            for e in self.waveform(hall, from_tick, to_tick) {
                rows.push((e.tick, hall, e.level));
            }
        }
        rows.sort_by_key(|&(t, h, _)| (t, h.index()));
        for (tick, hall, level) in rows {
            out.push_str(&format!("{},{},{}\n", tick, hall.letter(), level as u8));
        }
        out
    }

    /// Level of an optical line. Lines 0..3 mirror the hall outputs; the
    /// rest are inputs driven by the scenario.
    pub fn optical_line(&self, index: usize) -> bool {
        assert!(index < 16);
        match index {
            0 => self.level(Hall::A, self.now_ticks),
            1 => self.level(Hall::B, self.now_ticks),
            2 => self.level(Hall::C, self.now_ticks),
            _ => self.optical_in[index],
        }
    }

    pub fn set_optical_input(&mut self, index: usize, level: bool) {
        assert!((3..16).contains(&index), "lines 0..3 are outputs");
        self.optical_in[index] = level;
    }

    /// The 18 front-panel Lemo connectors, as named lines mirroring
    /// internal signals (they are not separately programmable).
    pub fn lemo_lines(&self) -> [(&'static str, bool); 18] {
        let ctrl = self.regs.get(CTRL);
        let mut lines = [("gnd", false); 18];
        lines[0] = ("pulse_a", self.level(Hall::A, self.now_ticks));
        lines[1] = ("pulse_b", self.level(Hall::B, self.now_ticks));
        lines[2] = ("pulse_c", self.level(Hall::C, self.now_ticks));
        lines[3] = ("enable_a", ctrl & 0x01 != 0);
        lines[4] = ("enable_b", ctrl & 0x02 != 0);
        lines[5] = ("enable_c", ctrl & 0x04 != 0);
        lines
    }

    /// Re-stage a hall's config from the register values. Invalid
    /// combinations (zero period, width not below period) are ignored and
    /// the running train is left untouched.
    fn restage_from_registers(&mut self, hall: Hall) {
        let i = hall.index();
        let enabled = self.regs.get(CTRL) & (1 << i) != 0;
        let period = (self.regs.get(PERIOD_BASE + i) as u64) * 256;
        let width = self.regs.get(WIDTH_BASE + i) as u64;
        let current_delay = self
            .channels[i]
            .timeline_with_pending()
            .segments
            .last()
            .and_then(|s| s.config)
            .map(|c| c.delay_ticks)
            .unwrap_or(0);
        if !enabled {
            self.channels[i].stage(self.now_ticks, None);
            return;
        }
        let cfg = ChannelConfig {
            period_ticks: period,
            width_ticks: width,
            delay_ticks: current_delay,
            enabled: true,
        };
        if cfg.validate().is_ok() {
            self.channels[i].stage(self.now_ticks, Some(cfg));
        }
    }
}

impl Default for ScamBoard {
    fn default() -> Self {
        Self::new()
    }
}

impl Board for ScamBoard {
    fn kind(&self) -> &'static str {
        "scam"
    }

    fn clock(&self) -> ClockRate {
        ClockRate::Mhz16
    }

    fn iface(&self) -> InterfaceWidth {
        InterfaceWidth::Bits8
    }

    fn register_map(&self) -> &RegisterMap {
        self.regs.map()
    }

    fn tick(&mut self, n: u64, _ctx: &mut BoardCtx) {
        self.now_ticks += n;
        for ch in &mut self.channels {
            ch.commit_due(self.now_ticks);
        }
    }

    fn reset(&mut self, _ctx: &mut BoardCtx) {
        self.regs.reset();
        self.channels = [Channel::new(), Channel::new(), Channel::new()];
        self.optical_in = [false; 16];
        // The tick counter is time, not state; it survives reset.
    }

    fn access(
        &mut self,
        window: WindowId,
        offset: u32,
        req: AccessReq,
        _ctx: &mut BoardCtx,
    ) -> Result<u16, AccessFault> {
        if window != WindowId::Registers {
            return Err(AccessFault::Unmapped);
        }
        match req {
            AccessReq::Read { width } => self.regs.bus_read(offset, width),
            AccessReq::Write { width, data } => {
                let note = self.regs.bus_write(offset, width, data)?;
                match note.index {
                    CTRL => {
                        for hall in Hall::ALL {
                            self.restage_from_registers(hall);
                        }
                    }
                    i if (PERIOD_BASE..PERIOD_BASE + 3).contains(&i) => {
                        self.restage_from_registers(Hall::ALL[i - PERIOD_BASE]);
                    }
                    i if (WIDTH_BASE..WIDTH_BASE + 3).contains(&i) => {
                        self.restage_from_registers(Hall::ALL[i - WIDTH_BASE]);
                    }
                    _ => {}
                }
                Ok(data)
            }
            AccessReq::Rmw { .. } => Err(AccessFault::Unmapped),
        }
    }
}
