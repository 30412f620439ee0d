//! Fiber token-ring timing board network: serial-addressed frames circulate
//! board to board, address 0 broadcasts, and a matching receive latches the
//! payload and raises a D08 vectored interrupt when enabled. Boards run at
//! 20 MHz behind a 16-bit slave interface with twelve 8-bit registers.

use thiserror::Error;

use crate::boards::{AccessReq, Board, BoardCtx, InterfaceWidth, SimAction, WindowId};
use crate::bus::DataWidth;
use crate::clock::ClockRate;
use crate::slave::{Access, AccessFault, RegisterDescriptor, RegisterFile, RegisterMap};

/// Serial address reserved for broadcast frames.
pub const BROADCAST: u8 = 0;

/// One ring message: destination serial address and a 16-bit payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingFrame {
    pub dest: u8,
    pub payload: u16,
    pub origin: u8,
}

const SYNC: u8 = 0x7E;

/// Serialize a frame onto the wire: sync, dest, payload, XOR checksum.
pub fn encode_frame(frame: &RingFrame) -> [u8; 5] {
    let hi = (frame.payload >> 8) as u8;
    let lo = frame.payload as u8;
    [SYNC, frame.dest, hi, lo, frame.dest ^ hi ^ lo]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("bad sync byte {0:#04x}")]
    BadSync(u8),
    #[error("checksum mismatch")]
    BadChecksum,
    #[error("frame truncated")]
    Truncated,
}

pub fn decode_frame(bytes: &[u8]) -> Result<(u8, u16), FrameError> {
    if bytes.len() < 5 {
        return Err(FrameError::Truncated);
    }
    if bytes[0] != SYNC {
        return Err(FrameError::BadSync(bytes[0]));
    }
    if bytes[1] ^ bytes[2] ^ bytes[3] != bytes[4] {
        return Err(FrameError::BadChecksum);
    }
    Ok((bytes[1], ((bytes[2] as u16) << 8) | bytes[3] as u16))
}

const REG_CONTROL: usize = 0;
const REG_STATUS: usize = 1;
const REG_SERIAL: usize = 2;
const REG_IRQ_VECTOR: usize = 3;
const REG_IRQ_LEVEL: usize = 4;
const REG_PAYLOAD_LO: usize = 5;
const REG_PAYLOAD_HI: usize = 6;
const REG_TX_DEST: usize = 7;
const REG_TX_PAYLOAD_LO: usize = 8;
const REG_TX_PAYLOAD_HI: usize = 9;
const REG_TX_GO: usize = 10;
const REG_ERRORS: usize = 11;

const CTRL_IRQ_ENABLE: u16 = 0x01;
const STATUS_FRESH: u16 = 0x01;
const STATUS_DOWN: u16 = 0x02;

fn ring_map() -> RegisterMap {
    let regs = vec![
        RegisterDescriptor { name: "control", offset: 0, width_bits: 8, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "status", offset: 1, width_bits: 8, access: Access::RO, reset_value: 0 },
        RegisterDescriptor { name: "serial", offset: 2, width_bits: 8, access: Access::RO, reset_value: 0 },
        RegisterDescriptor { name: "irq_vector", offset: 3, width_bits: 8, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "irq_level", offset: 4, width_bits: 8, access: Access::RW, reset_value: 3 },
        RegisterDescriptor { name: "payload_lo", offset: 5, width_bits: 8, access: Access::RO, reset_value: 0 },
        RegisterDescriptor { name: "payload_hi", offset: 6, width_bits: 8, access: Access::RO, reset_value: 0 },
        RegisterDescriptor { name: "tx_dest", offset: 7, width_bits: 8, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "tx_payload_lo", offset: 8, width_bits: 8, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "tx_payload_hi", offset: 9, width_bits: 8, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "tx_go", offset: 10, width_bits: 8, access: Access::WO, reset_value: 0 },
        RegisterDescriptor { name: "errors", offset: 11, width_bits: 8, access: Access::RO, reset_value: 0 },
    ];
    RegisterMap::new(regs, 16).expect("static map")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ConfigureError {
    #[error("status/ID {0:#x} does not fit the D08 width")]
    VectorTooWide(u16),
    #[error("interrupt level {0} outside 1..=7")]
    BadLevel(u8),
    #[error("serial address 0 is the broadcast address")]
    ZeroSerial,
}

/// One 30 Hz timing-distribution board.
pub struct RingBoard {
    regs: RegisterFile,
    serial: u8,
    down: bool,
}

impl RingBoard {
    pub fn new(serial: u8) -> Result<Self, ConfigureError> {
        if serial == BROADCAST {
            return Err(ConfigureError::ZeroSerial);
        }
        let mut regs = RegisterFile::new(ring_map());
        regs.set(REG_SERIAL, serial as u16);
        Ok(Self { regs, serial, down: false })
    }

    pub fn serial(&self) -> u8 {
        self.serial
    }

    pub fn is_down(&self) -> bool {
        self.down
    }

    /// Fault injection: a down board neither receives nor forwards.
    pub fn set_down(&mut self, down: bool) {
        self.down = down;
        let mut status = self.regs.get(REG_STATUS);
        if down {
            status |= STATUS_DOWN;
        } else {
            status &= !STATUS_DOWN;
        }
        self.regs.set(REG_STATUS, status);
    }

    pub fn configure(&mut self, irq_enabled: bool, irq_level: u8, vector: u16) -> Result<(), ConfigureError> {
        if vector > 0xFF {
            return Err(ConfigureError::VectorTooWide(vector));
        }
        if !(1..=7).contains(&irq_level) {
            return Err(ConfigureError::BadLevel(irq_level));
        }
        let ctrl = self.regs.get(REG_CONTROL);
        self.regs.set(
            REG_CONTROL,
            if irq_enabled { ctrl | CTRL_IRQ_ENABLE } else { ctrl & !CTRL_IRQ_ENABLE },
        );
        self.regs.set(REG_IRQ_LEVEL, irq_level as u16);
        self.regs.set(REG_IRQ_VECTOR, vector);
        Ok(())
    }

    pub fn irq_enabled(&self) -> bool {
        self.regs.get(REG_CONTROL) & CTRL_IRQ_ENABLE != 0
    }

    /// Posting level; the register stores whatever was written, values
    /// outside 1..=7 fall back to level 3.
    pub fn irq_level(&self) -> u8 {
        let level = self.regs.get(REG_IRQ_LEVEL) as u8;
        if (1..=7).contains(&level) {
            level
        } else {
            3
        }
    }

    pub fn last_payload(&self) -> u16 {
        (self.regs.get(REG_PAYLOAD_HI) << 8) | self.regs.get(REG_PAYLOAD_LO)
    }

    pub fn error_count(&self) -> u16 {
        self.regs.get(REG_ERRORS)
    }

    /// Pending transmit programmed through the tx registers.
    pub fn tx_frame(&self) -> RingFrame {
        RingFrame {
            dest: self.regs.get(REG_TX_DEST) as u8,
            payload: (self.regs.get(REG_TX_PAYLOAD_HI) << 8) | self.regs.get(REG_TX_PAYLOAD_LO),
            origin: self.serial,
        }
    }

    /// Handle a frame arriving from the predecessor. `wire_ok` is the
    /// checksum verdict. Returns true when the board decoded the frame as
    /// addressed to it (broadcast or serial match).
    pub fn on_receive(&mut self, frame: &RingFrame, wire_ok: bool, ctx: &mut BoardCtx) -> bool {
        debug_assert!(!self.down, "network must not deliver to a down board");
        if !wire_ok {
            let n = self.regs.get(REG_ERRORS).wrapping_add(1) & 0xFF;
            self.regs.set(REG_ERRORS, n);
            return false;
        }
        let matches = frame.dest == BROADCAST || frame.dest == self.serial;
        if matches {
            self.regs.set(REG_PAYLOAD_LO, frame.payload & 0xFF);
            self.regs.set(REG_PAYLOAD_HI, frame.payload >> 8);
            self.regs.set(REG_STATUS, self.regs.get(REG_STATUS) | STATUS_FRESH);
            if self.irq_enabled() {
                let vector = self.regs.get(REG_IRQ_VECTOR);
                ctx.post_irq(self.irq_level(), vector, DataWidth::D08);
            }
        }
        matches
    }
}

impl Board for RingBoard {
    fn kind(&self) -> &'static str {
        "ring30hz"
    }

    fn clock(&self) -> ClockRate {
        ClockRate::Mhz20
    }

    fn iface(&self) -> InterfaceWidth {
        InterfaceWidth::Bits16
    }

    fn register_map(&self) -> &RegisterMap {
        self.regs.map()
    }

    fn supports_block(&self, _window: WindowId) -> bool {
        true
    }

    fn tick(&mut self, _n: u64, _ctx: &mut BoardCtx) {}

    fn reset(&mut self, _ctx: &mut BoardCtx) {
        let down = self.down;
        self.regs.reset();
        self.regs.set(REG_SERIAL, self.serial as u16);
        self.set_down(down);
    }

    fn access(
        &mut self,
        window: WindowId,
        offset: u32,
        req: AccessReq,
        ctx: &mut BoardCtx,
    ) -> Result<u16, AccessFault> {
        if window != WindowId::Registers {
            return Err(AccessFault::Unmapped);
        }
        match req {
            AccessReq::Read { width } => {
                let value = self.regs.bus_read(offset, width)?;
                // Reading the payload high byte consumes the fresh flag.
                if self.regs.map().decode(offset) == Some(REG_PAYLOAD_HI) {
                    self.regs.set(REG_STATUS, self.regs.get(REG_STATUS) & !STATUS_FRESH);
                }
                Ok(value)
            }
            AccessReq::Write { width, data } => {
                let note = self.regs.bus_write(offset, width, data)?;
                if note.index == REG_TX_GO && note.written != 0 {
                    let frame = self.tx_frame();
                    ctx.actions.push(SimAction::RingTx {
                        origin_serial: self.serial,
                        dest: frame.dest,
                        payload: frame.payload,
                    });
                }
                Ok(data)
            }
            AccessReq::Rmw { .. } => Err(AccessFault::Unmapped),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RingError {
    #[error("serial address {0} is not on the ring")]
    NotOnRing(u8),
    #[error("originating board {0} is down")]
    OriginDown(u8),
    #[error("ring has no boards")]
    Empty,
}

/// One scheduled frame arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    /// Arrival time in 20 MHz ticks.
    pub arrival_tick: u64,
    pub serial: u8,
    pub frame: RingFrame,
    pub wire_ok: bool,
}

/// What a send achieved: boards visited (with arrival ticks) and the tail
/// cut off by a down board.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryReport {
    pub delivered: Vec<(u8, u64)>,
    pub unreachable: Vec<u8>,
}

/// Ring topology: an ordered list of serial addresses and a per-hop delay.
/// Only one frame is in flight at a time in this model; the originator
/// strips its own frame after one full lap.
#[derive(Debug, Clone)]
pub struct RingNetwork {
    order: Vec<u8>,
    hop_delay_ticks: u64,
}

impl RingNetwork {
    pub fn new(order: Vec<u8>, hop_delay_ticks: u64) -> Result<Self, RingError> {
        if order.is_empty() {
            return Err(RingError::Empty);
        }
        assert!(hop_delay_ticks > 0, "hop delay must be positive");
        Ok(Self { order, hop_delay_ticks })
    }

    pub fn order(&self) -> &[u8] {
        &self.order
    }

    pub fn hop_delay_ticks(&self) -> u64 {
        self.hop_delay_ticks
    }

    pub fn contains(&self, serial: u8) -> bool {
        self.order.contains(&serial)
    }

    /// Plan a frame's lap around the ring starting at `now_tick`.
    ///
    /// `is_down` reports per-board health. The hop list carries one entry
    /// per board that actually receives the wire signal; the report also
    /// names the tail that a down board cut off. A corrupted frame is
    /// dropped (and counted) by the first receiver.
    pub fn plan(
        &self,
        origin: u8,
        frame: RingFrame,
        now_tick: u64,
        corrupt: bool,
        is_down: impl Fn(u8) -> bool,
    ) -> Result<(Vec<Hop>, DeliveryReport), RingError> {
        let start = self
            .order
            .iter()
            .position(|&s| s == origin)
            .ok_or(RingError::NotOnRing(origin))?;
        if is_down(origin) {
            return Err(RingError::OriginDown(origin));
        }
        let n = self.order.len();
        let mut hops = Vec::new();
        let mut delivered = Vec::new();
        let mut unreachable = Vec::new();
        let mut broken = false;
        for k in 1..n {
            let serial = self.order[(start + k) % n];
            if broken {
                unreachable.push(serial);
                continue;
            }
            let arrival = now_tick + k as u64 * self.hop_delay_ticks;
            if is_down(serial) {
                broken = true;
                unreachable.push(serial);
                continue;
            }
            let wire_ok = !(corrupt && k == 1);
            hops.push(Hop { arrival_tick: arrival, serial, frame, wire_ok });
            if wire_ok {
                delivered.push((serial, arrival));
            }
            if !wire_ok {
                // Dropped at the first receiver; nothing propagates.
                broken = true;
            }
        }
        Ok((hops, DeliveryReport { delivered, unreachable }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::IrqController;
    use crate::trace::TraceLog;

    fn frame(dest: u8, payload: u16, origin: u8) -> RingFrame {
        RingFrame { dest, payload, origin }
    }

    #[test]
    fn wire_format_round_trips() {
        let f = frame(3, 0xBEEF, 1);
        let bytes = encode_frame(&f);
        assert_eq!(bytes[0], 0x7E);
        assert_eq!(decode_frame(&bytes), Ok((3, 0xBEEF)));
    }

    #[test]
    fn corrupted_checksum_is_detected() {
        let mut bytes = encode_frame(&frame(0, 0x1234, 1));
        bytes[4] ^= 0xFF;
        assert_eq!(decode_frame(&bytes), Err(FrameError::BadChecksum));
    }

    #[test]
    fn broadcast_lap_arrival_ticks() {
        let net = RingNetwork::new(vec![1, 2, 3, 4], 10).unwrap();
        let (hops, report) = net
            .plan(1, frame(0, 0xAAAA, 1), 0, false, |_| false)
            .unwrap();
        let arrivals: Vec<(u8, u64)> = hops.iter().map(|h| (h.serial, h.arrival_tick)).collect();
        assert_eq!(arrivals, vec![(2, 10), (3, 20), (4, 30)]);
        assert_eq!(report.delivered, vec![(2, 10), (3, 20), (4, 30)]);
        assert!(report.unreachable.is_empty());
    }

    #[test]
    fn single_board_ring_delivers_to_no_one() {
        let net = RingNetwork::new(vec![9], 10).unwrap();
        let (hops, report) = net.plan(9, frame(0, 1, 9), 0, false, |_| false).unwrap();
        assert!(hops.is_empty());
        assert!(report.delivered.is_empty());
    }

    #[test]
    fn down_board_cuts_the_tail() {
        let net = RingNetwork::new(vec![1, 2, 3, 4], 5).unwrap();
        let (hops, report) = net
            .plan(1, frame(0, 7, 1), 100, false, |s| s == 3)
            .unwrap();
        assert_eq!(hops.iter().map(|h| h.serial).collect::<Vec<_>>(), vec![2]);
        assert_eq!(report.delivered, vec![(2, 105)]);
        assert_eq!(report.unreachable, vec![3, 4]);
    }

    #[test]
    fn unicast_latches_on_exactly_one_board() {
        let mut irq = IrqController::new();
        let mut trace = TraceLog::null();
        let mut actions = Vec::new();
        let mut boards: Vec<RingBoard> = (1..=4).map(|s| RingBoard::new(s).unwrap()).collect();
        let f = frame(3, 0x5A5A, 1);
        let mut latched = 0;
        for b in boards.iter_mut().filter(|b| b.serial() != 1) {
            let mut ctx = BoardCtx { now_ps: 0, slot: 4, irq: &mut irq, trace: &mut trace, actions: &mut actions };
            if b.on_receive(&f, true, &mut ctx) {
                latched += 1;
                assert_eq!(b.serial(), 3);
                assert_eq!(b.last_payload(), 0x5A5A);
            }
        }
        assert_eq!(latched, 1);
        assert_eq!(irq.pending_at(3), 0, "irq disabled by default");
    }

    #[test]
    fn matching_receive_posts_irq_when_enabled() {
        let mut irq = IrqController::new();
        let mut trace = TraceLog::memory();
        let mut actions = Vec::new();
        let mut b = RingBoard::new(2).unwrap();
        b.configure(true, 5, 0x5A).unwrap();
        let mut ctx = BoardCtx { now_ps: 0, slot: 4, irq: &mut irq, trace: &mut trace, actions: &mut actions };
        assert!(b.on_receive(&frame(0, 0x0102, 1), true, &mut ctx));
        let ack = irq.acknowledge(5, DataWidth::D08).unwrap();
        assert_eq!(ack.vector, 0x5A);
        assert_eq!(b.last_payload(), 0x0102);
    }

    #[test]
    fn disabled_irq_still_latches() {
        let mut irq = IrqController::new();
        let mut trace = TraceLog::null();
        let mut actions = Vec::new();
        let mut b = RingBoard::new(2).unwrap();
        b.configure(false, 5, 0x5A).unwrap();
        let mut ctx = BoardCtx { now_ps: 0, slot: 4, irq: &mut irq, trace: &mut trace, actions: &mut actions };
        b.on_receive(&frame(0, 0x0304, 1), true, &mut ctx);
        assert_eq!(b.last_payload(), 0x0304);
        assert_eq!(irq.pending_at(5), 0);
    }

    #[test]
    fn mismatched_unicast_does_not_latch() {
        let mut irq = IrqController::new();
        let mut trace = TraceLog::null();
        let mut actions = Vec::new();
        let mut b = RingBoard::new(2).unwrap();
        b.configure(true, 5, 0x5A).unwrap();
        let mut ctx = BoardCtx { now_ps: 0, slot: 4, irq: &mut irq, trace: &mut trace, actions: &mut actions };
        assert!(!b.on_receive(&frame(7, 0xFFFF, 1), true, &mut ctx));
        assert_eq!(b.last_payload(), 0);
        assert_eq!(irq.pending_at(5), 0);
    }

    #[test]
    fn corrupt_frame_counts_an_error() {
        let mut irq = IrqController::new();
        let mut trace = TraceLog::null();
        let mut actions = Vec::new();
        let mut b = RingBoard::new(2).unwrap();
        let mut ctx = BoardCtx { now_ps: 0, slot: 4, irq: &mut irq, trace: &mut trace, actions: &mut actions };
        b.on_receive(&frame(0, 1, 1), false, &mut ctx);
        assert_eq!(b.error_count(), 1);
        assert_eq!(b.last_payload(), 0);
    }

    #[test]
    fn vector_wider_than_d08_is_rejected() {
        let mut b = RingBoard::new(2).unwrap();
        assert_eq!(b.configure(true, 3, 0x100), Err(ConfigureError::VectorTooWide(0x100)));
    }

    #[test]
    fn frame_is_stripped_after_at_most_n_hops() {
        for n in 1..=8usize {
            let order: Vec<u8> = (1..=n as u8).collect();
            let net = RingNetwork::new(order, 3).unwrap();
            let (hops, _) = net.plan(1, frame(0, 9, 1), 0, false, |_| false).unwrap();
            assert!(hops.len() <= n);
            assert!(hops.iter().all(|h| h.frame.origin == 1 && h.serial != 1));
        }
    }
}
