//! The crate simulator: address routing, cycle dispatch, interrupt
//! acknowledge, ring-frame scheduling, and lazy board clocking, all on one
//! deterministic event loop.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use thiserror::Error;

use crate::boards::{
    AccessReq, Board, BoardCtx, BoardModel, DeliveryReport, InterfaceWidth, RingError, RingFrame,
    RingNetwork, SimAction, WindowId,
};
use crate::bus::{
    Address, AddressSpace, BusCycle, CycleKind, CycleOutcome, CycleResult, DataWidth,
    InterruptRequest, IrqController, MalformedCycle,
};
use crate::clock::{ClockRate, SimClock};
use crate::slave::{manifest_registers, BoardManifest};
use crate::trace::{TraceLog, TraceRecord};

/// Default per-module access latency, in module clock ticks.
pub const DEFAULT_LATENCY_TICKS: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegistrationId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AttachError {
    #[error("window overlaps slot {existing_slot} in the same space")]
    Overlap { existing_slot: u8 },
    #[error("slot {0} already occupied")]
    SlotOccupied(u8),
    #[error("slot {0} is empty")]
    SlotEmpty(u8),
    #[error("window exceeds the address space")]
    SpaceExceeded,
    #[error("window must not be empty")]
    EmptyWindow,
    #[error("board does not expose that window")]
    NoSuchWindow,
    #[error("ring serial {0} already attached")]
    DuplicateSerial(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PostError {
    #[error("no board attached in slot {0}")]
    SlotEmpty(u8),
    #[error("interrupt level {0} outside 1..=7")]
    BadLevel(u8),
    #[error("status/ID {vector:#x} does not fit {width:?}")]
    VectorTooWide { vector: u16, width: DataWidth },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockDirection {
    ReadOut,
    WriteIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RingSendError {
    #[error("no ring topology configured")]
    NoRing,
    #[error(transparent)]
    Ring(RingError),
}

#[derive(Debug, Clone, Copy)]
struct Route {
    space: AddressSpace,
    start: u32,
    end: u32,
    slot: u8,
    window: WindowId,
}

struct SlotEntry {
    board: BoardModel,
    latency_ticks: u64,
    ticks_done: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct HopEvent {
    time_ps: u64,
    seq: u64,
    serial: u8,
    dest: u8,
    payload: u16,
    origin: u8,
    wire_ok: bool,
}

/// The simulated crate.
pub struct Simulator {
    clock: SimClock,
    routes: Vec<Route>,
    slots: BTreeMap<u8, SlotEntry>,
    irq: IrqController,
    trace: TraceLog,
    ring: Option<RingNetwork>,
    /// Down flags for ring members that are not crate boards.
    external_ring_down: BTreeSet<u8>,
    hops: BinaryHeap<Reverse<HopEvent>>,
    hop_seq: u64,
    next_registration: u32,
}

impl Simulator {
    pub fn new(trace: TraceLog) -> Self {
        Self {
            clock: SimClock::new(),
            routes: Vec::new(),
            slots: BTreeMap::new(),
            irq: IrqController::new(),
            trace,
            ring: None,
            external_ring_down: BTreeSet::new(),
            hops: BinaryHeap::new(),
            hop_seq: 0,
            next_registration: 0,
        }
    }

    pub fn now_ps(&self) -> u64 {
        self.clock.now_ps()
    }

    pub fn trace(&self) -> &TraceLog {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut TraceLog {
        &mut self.trace
    }

    pub fn irq_controller(&self) -> &IrqController {
        &self.irq
    }

    pub fn board(&self, slot: u8) -> Option<&BoardModel> {
        self.slots.get(&slot).map(|e| &e.board)
    }

    pub fn board_mut(&mut self, slot: u8) -> Option<&mut BoardModel> {
        self.slots.get_mut(&slot).map(|e| &mut e.board)
    }

    pub fn occupied_slots(&self) -> Vec<u8> {
        self.slots.keys().copied().collect()
    }

    /// Install a board and map its register window.
    pub fn attach(
        &mut self,
        slot: u8,
        board: BoardModel,
        base: Address,
        window_bytes: u32,
    ) -> Result<RegistrationId, AttachError> {
        if self.slots.contains_key(&slot) {
            return Err(AttachError::SlotOccupied(slot));
        }
        if let Some(serial) = board.as_ring().map(|r| r.serial()) {
            if self.slot_by_serial(serial).is_some() {
                return Err(AttachError::DuplicateSerial(serial));
            }
        }
        self.check_window(base, window_bytes)?;
        self.slots.insert(
            slot,
            SlotEntry { board, latency_ticks: DEFAULT_LATENCY_TICKS, ticks_done: 0 },
        );
        self.routes.push(Route {
            space: base.space,
            start: base.value,
            end: base.value + window_bytes,
            slot,
            window: WindowId::Registers,
        });
        self.next_registration += 1;
        Ok(RegistrationId(self.next_registration - 1))
    }

    /// Map an additional window (dual-port memory, history buffer) for a
    /// board already installed in `slot`.
    pub fn map_window(
        &mut self,
        slot: u8,
        window: WindowId,
        base: Address,
        window_bytes: u32,
    ) -> Result<RegistrationId, AttachError> {
        let entry = self.slots.get(&slot).ok_or(AttachError::SlotEmpty(slot))?;
        if entry.board.window_len(window).is_none() {
            return Err(AttachError::NoSuchWindow);
        }
        self.check_window(base, window_bytes)?;
        self.routes.push(Route {
            space: base.space,
            start: base.value,
            end: base.value + window_bytes,
            slot,
            window,
        });
        self.next_registration += 1;
        Ok(RegistrationId(self.next_registration - 1))
    }

    pub fn set_latency(&mut self, slot: u8, ticks: u64) {
        if let Some(e) = self.slots.get_mut(&slot) {
            e.latency_ticks = ticks;
        }
    }

    fn check_window(&self, base: Address, window_bytes: u32) -> Result<(), AttachError> {
        if window_bytes == 0 {
            return Err(AttachError::EmptyWindow);
        }
        let end = base
            .value
            .checked_add(window_bytes)
            .filter(|&e| e <= base.space.limit())
            .ok_or(AttachError::SpaceExceeded)?;
        for r in &self.routes {
            if r.space == base.space && base.value < r.end && r.start < end {
                return Err(AttachError::Overlap { existing_slot: r.slot });
            }
        }
        Ok(())
    }

    fn route(&self, space: AddressSpace, addr: u32, bytes: u32) -> Option<Route> {
        self.routes
            .iter()
            .find(|r| r.space == space && addr >= r.start && addr + bytes <= r.end)
            .copied()
    }

    /// Advance the wall clock, delivering any ring frames that come due.
    /// A target already in the past is a no-op.
    pub fn advance_to(&mut self, t_ps: u64) {
        let t_ps = t_ps.max(self.clock.now_ps());
        loop {
            let due = match self.hops.peek() {
                Some(Reverse(h)) if h.time_ps <= t_ps => *h,
                _ => break,
            };
            self.hops.pop();
            self.clock.advance_to(due.time_ps);
            self.deliver_hop(due);
        }
        self.clock.advance_to(t_ps);
    }

    pub fn advance_by(&mut self, dt_ps: u64) {
        self.advance_to(self.clock.now_ps() + dt_ps);
    }

    /// Run until no scheduled work remains.
    pub fn drain_events(&mut self) {
        while let Some(Reverse(top)) = self.hops.peek().copied() {
            self.advance_to(top.time_ps);
        }
    }

    /// Bring a board's tick count up to the present.
    fn sync_board(&mut self, slot: u8) {
        let now_ps = self.clock.now_ps();
        let Some(entry) = self.slots.get_mut(&slot) else { return };
        let target = entry.board.clock().ticks_at(now_ps);
        let delta = target.saturating_sub(entry.ticks_done);
        if delta == 0 {
            return;
        }
        entry.ticks_done = target;
        let mut actions = Vec::new();
        let mut ctx = BoardCtx {
            now_ps,
            slot,
            irq: &mut self.irq,
            trace: &mut self.trace,
            actions: &mut actions,
        };
        entry.board.tick(delta, &mut ctx);
        self.run_actions(actions);
    }

    pub fn sync_all_boards(&mut self) {
        let slots: Vec<u8> = self.slots.keys().copied().collect();
        for slot in slots {
            self.sync_board(slot);
        }
    }

    /// Run a closure against a board with a live context, after syncing its
    /// clock. Used by scenario verbs (fault injection, frame feeds).
    pub fn with_board_ctx<R>(
        &mut self,
        slot: u8,
        f: impl FnOnce(&mut BoardModel, &mut BoardCtx) -> R,
    ) -> Option<R> {
        self.sync_board(slot);
        let now_ps = self.clock.now_ps();
        let entry = self.slots.get_mut(&slot)?;
        let mut actions = Vec::new();
        let mut ctx = BoardCtx {
            now_ps,
            slot,
            irq: &mut self.irq,
            trace: &mut self.trace,
            actions: &mut actions,
        };
        let r = f(&mut entry.board, &mut ctx);
        self.run_actions(actions);
        Some(r)
    }

    /// Reset a board: registers and state machines to initial values, and
    /// its pending interrupt requests dropped.
    pub fn reset_board(&mut self, slot: u8) {
        self.irq.clear_slot(slot);
        self.with_board_ctx(slot, |b, ctx| b.reset(ctx));
    }

    fn run_actions(&mut self, actions: Vec<SimAction>) {
        for action in actions {
            match action {
                SimAction::RingTx { origin_serial, dest, payload } => {
                    let _ = self.ring_send(origin_serial, dest, payload, false);
                }
            }
        }
    }

    /// Execute one bus cycle at the present simulation time.
    pub fn perform_cycle(&mut self, cycle: &BusCycle) -> Result<CycleResult, MalformedCycle> {
        cycle.validate()?;
        match cycle.kind {
            CycleKind::InterruptAck => Ok(self.acknowledge(cycle.address.value as u8, cycle.width)),
            CycleKind::BlockRead => {
                let (_, result) = self
                    .block_transfer(cycle.address, cycle.beat_count, cycle.width, BlockDirection::ReadOut, &[])
                    .expect("validated above");
                Ok(result)
            }
            CycleKind::BlockWrite => {
                let data = vec![cycle.data; cycle.beat_count as usize];
                let (_, result) = self
                    .block_transfer(cycle.address, cycle.beat_count, cycle.width, BlockDirection::WriteIn, &data)
                    .expect("validated above");
                Ok(result)
            }
            _ => Ok(self.single_cycle(cycle)),
        }
    }

    fn single_cycle(&mut self, cycle: &BusCycle) -> CycleResult {
        let (result, slot) = self.dispatch_single(cycle);
        self.trace.log(
            self.clock.now_ps(),
            TraceRecord::Cycle {
                kind: cycle.kind.label(),
                space: cycle.address.space,
                address: cycle.address.value,
                width: cycle.width,
                data: if result.is_dtack() {
                    match cycle.kind {
                        CycleKind::Read | CycleKind::ReadModifyWrite => result.data,
                        _ => cycle.data,
                    }
                } else {
                    0
                },
                outcome: result.outcome,
                slot,
            },
        );
        result
    }

    fn dispatch_single(&mut self, cycle: &BusCycle) -> (CycleResult, Option<u8>) {
        let Some(route) = self.route(cycle.address.space, cycle.address.value, cycle.width.bytes())
        else {
            return (CycleResult::bus_error(), None);
        };
        let result = self.access_route(route, cycle);
        (result, Some(route.slot))
    }

    fn access_route(&mut self, route: Route, cycle: &BusCycle) -> CycleResult {
        self.sync_board(route.slot);
        let now_ps = self.clock.now_ps();
        let entry = self.slots.get_mut(&route.slot).expect("routed to a live slot");
        if !entry.board.iface().accepts(cycle.width) {
            return CycleResult::bus_error();
        }
        if cycle.kind == CycleKind::ReadModifyWrite && !entry.board.supports_rmw(route.window) {
            return CycleResult::bus_error();
        }
        let req = match cycle.kind {
            CycleKind::Read => AccessReq::Read { width: cycle.width },
            CycleKind::Write => AccessReq::Write { width: cycle.width, data: cycle.data },
            CycleKind::ReadModifyWrite => {
                AccessReq::Rmw { width: cycle.width, mask: cycle.rmw_mask, set: cycle.data }
            }
            _ => unreachable!("block and iack handled above"),
        };
        let offset = cycle.address.value - route.start;
        let latency = entry.latency_ticks;
        let mut actions = Vec::new();
        let mut ctx = BoardCtx {
            now_ps,
            slot: route.slot,
            irq: &mut self.irq,
            trace: &mut self.trace,
            actions: &mut actions,
        };
        let outcome = entry.board.access(route.window, offset, req, &mut ctx);
        self.run_actions(actions);
        match outcome {
            Ok(data) => CycleResult::dtack(data, latency),
            Err(_) => CycleResult::bus_error(),
        }
    }

    /// One address phase, `beats` data beats. Equivalent to a loop of
    /// single cycles with per-beat commit; the pipelined latency charges
    /// full decode only on the first beat.
    pub fn block_transfer(
        &mut self,
        start: Address,
        beats: u32,
        width: DataWidth,
        direction: BlockDirection,
        data_in: &[u16],
    ) -> Result<(Vec<u16>, CycleResult), MalformedCycle> {
        let probe = BusCycle {
            kind: match direction {
                BlockDirection::ReadOut => CycleKind::BlockRead,
                BlockDirection::WriteIn => CycleKind::BlockWrite,
            },
            address: start,
            width,
            data: 0,
            rmw_mask: 0,
            beat_count: beats,
        };
        probe.validate()?;
        if direction == BlockDirection::WriteIn && data_in.len() != beats as usize {
            return Err(MalformedCycle::ZeroBeatBlock);
        }

        let step = width.bytes();
        let mut words = Vec::with_capacity(beats as usize);
        let mut outcome = CycleOutcome::Dtack;

        // Block support is a property of the first beat's window.
        let head = self.route(start.space, start.value, step);
        let supported = head
            .map(|r| {
                self.slots
                    .get(&r.slot)
                    .map(|e| e.board.supports_block(r.window))
                    .unwrap_or(false)
            })
            .unwrap_or(false);
        if !supported {
            outcome = CycleOutcome::BusError;
        } else {
            for beat in 0..beats {
                let addr = Address { space: start.space, value: start.value + beat * step };
                let cycle = match direction {
                    BlockDirection::ReadOut => BusCycle::read(addr, width),
                    BlockDirection::WriteIn => BusCycle::write(addr, width, data_in[beat as usize]),
                };
                if cycle.validate().is_err() {
                    outcome = CycleOutcome::BusError;
                    break;
                }
                let (result, _) = self.dispatch_single(&cycle);
                if !result.is_dtack() {
                    outcome = CycleOutcome::BusError;
                    break;
                }
                if direction == BlockDirection::ReadOut {
                    words.push(result.data);
                }
            }
        }

        if outcome == CycleOutcome::BusError {
            words.clear();
        }
        let latency = head
            .and_then(|r| self.slots.get(&r.slot))
            .map(|e| {
                let l = e.latency_ticks;
                l + (beats as u64 - 1) * l.saturating_sub(1).max(1)
            })
            .unwrap_or(0);
        let last = words.last().copied().unwrap_or(0);
        let result = if outcome == CycleOutcome::Dtack {
            CycleResult::dtack(last, latency)
        } else {
            CycleResult::bus_error()
        };
        self.trace.log(
            self.clock.now_ps(),
            TraceRecord::Cycle {
                kind: probe.kind.label(),
                space: start.space,
                address: start.value,
                width,
                data: result.data,
                outcome: result.outcome,
                slot: head.map(|r| r.slot),
            },
        );
        Ok((words, result))
    }

    /// Atomic read-modify-write: returns the old value in `data`.
    pub fn read_modify_write(
        &mut self,
        address: Address,
        width: DataWidth,
        mask: u16,
        set: u16,
    ) -> Result<CycleResult, MalformedCycle> {
        self.perform_cycle(&BusCycle::rmw(address, width, mask, set))
    }

    /// Post a vectored-interrupt request on behalf of an attached board.
    pub fn post_interrupt(&mut self, req: InterruptRequest) -> Result<(), PostError> {
        if !self.slots.contains_key(&req.slot) {
            return Err(PostError::SlotEmpty(req.slot));
        }
        if !(1..=7).contains(&req.level) {
            return Err(PostError::BadLevel(req.level));
        }
        if !req.status_width.fits(req.vector) {
            return Err(PostError::VectorTooWide { vector: req.vector, width: req.status_width });
        }
        self.irq.post(req);
        self.trace.log(
            self.clock.now_ps(),
            TraceRecord::IrqPosted {
                level: req.level,
                width: req.status_width,
                vector: req.vector,
                slot: req.slot,
            },
        );
        Ok(())
    }

    /// Interrupt-acknowledge daisy chain: the pending requester in the
    /// lowest slot answers; no requester means a bus error.
    pub fn acknowledge(&mut self, level: u8, width: DataWidth) -> CycleResult {
        let result = match self.irq.acknowledge(level, width) {
            Some(ack) => {
                let latency = self
                    .slots
                    .get(&ack.slot)
                    .map(|e| e.latency_ticks)
                    .unwrap_or(DEFAULT_LATENCY_TICKS);
                (CycleResult::dtack(ack.vector, latency), Some(ack.slot))
            }
            None => (CycleResult::bus_error(), None),
        };
        self.trace.log(
            self.clock.now_ps(),
            TraceRecord::Iack {
                level,
                width,
                vector: result.0.data,
                outcome: result.0.outcome,
                slot: result.1,
            },
        );
        result.0
    }

    // ----- ring network -----

    pub fn set_ring(&mut self, ring: RingNetwork) {
        self.ring = Some(ring);
    }

    pub fn ring(&self) -> Option<&RingNetwork> {
        self.ring.as_ref()
    }

    fn slot_by_serial(&self, serial: u8) -> Option<u8> {
        self.slots
            .iter()
            .find(|(_, e)| e.board.as_ring().map(|r| r.serial() == serial).unwrap_or(false))
            .map(|(slot, _)| *slot)
    }

    fn ring_member_down(&self, serial: u8) -> bool {
        match self.slot_by_serial(serial) {
            Some(slot) => self
                .slots
                .get(&slot)
                .and_then(|e| e.board.as_ring())
                .map(|r| r.is_down())
                .unwrap_or(false),
            None => self.external_ring_down.contains(&serial),
        }
    }

    /// Fault injection: mark a ring member up or down.
    pub fn set_ring_down(&mut self, serial: u8, down: bool) {
        if let Some(slot) = self.slot_by_serial(serial) {
            if let Some(e) = self.slots.get_mut(&slot) {
                if let BoardModel::Ring(r) = &mut e.board {
                    r.set_down(down);
                }
            }
        } else if down {
            self.external_ring_down.insert(serial);
        } else {
            self.external_ring_down.remove(&serial);
        }
    }

    /// Launch a frame around the ring. Arrival effects (payload latch,
    /// interrupt) are scheduled at per-hop delays; the report is computed
    /// up front.
    pub fn ring_send(
        &mut self,
        origin_serial: u8,
        dest: u8,
        payload: u16,
        corrupt: bool,
    ) -> Result<DeliveryReport, RingSendError> {
        let ring = self.ring.as_ref().ok_or(RingSendError::NoRing)?;
        let now_tick = ClockRate::Mhz20.ticks_at(self.clock.now_ps());
        let frame = RingFrame { dest, payload, origin: origin_serial };
        let (hops, report) = {
            let down = |s: u8| self.ring_member_down(s);
            ring.plan(origin_serial, frame, now_tick, corrupt, down)
                .map_err(RingSendError::Ring)?
        };
        for hop in hops {
            self.hop_seq += 1;
            self.hops.push(Reverse(HopEvent {
                time_ps: hop.arrival_tick * ClockRate::Mhz20.period_ps(),
                seq: self.hop_seq,
                serial: hop.serial,
                dest: hop.frame.dest,
                payload: hop.frame.payload,
                origin: hop.frame.origin,
                wire_ok: hop.wire_ok,
            }));
        }
        Ok(report)
    }

    fn deliver_hop(&mut self, hop: HopEvent) {
        let frame = RingFrame { dest: hop.dest, payload: hop.payload, origin: hop.origin };
        if let Some(slot) = self.slot_by_serial(hop.serial) {
            self.with_board_ctx(slot, |b, ctx| {
                if let BoardModel::Ring(r) = b {
                    r.on_receive(&frame, hop.wire_ok, ctx);
                }
            });
        }
        self.trace.log(
            self.clock.now_ps(),
            TraceRecord::Ring {
                dest: hop.dest,
                payload: hop.payload,
                delivered: hop.wire_ok,
                serial: hop.serial,
            },
        );
    }

    // ----- manifest -----

    /// Machine-readable register manifest for every attached board.
    pub fn manifest(&self) -> Vec<BoardManifest> {
        let mut out = Vec::new();
        for (slot, entry) in &self.slots {
            let Some(route) = self
                .routes
                .iter()
                .find(|r| r.slot == *slot && r.window == WindowId::Registers)
            else {
                continue;
            };
            out.push(BoardManifest {
                slot: *slot,
                kind: entry.board.kind().to_string(),
                space: route.space,
                base: route.start,
                window_bytes: route.end - route.start,
                registers: manifest_registers(entry.board.register_map()),
            });
        }
        out
    }

    /// Convenience single read.
    pub fn read(&mut self, address: Address, width: DataWidth) -> Result<CycleResult, MalformedCycle> {
        self.perform_cycle(&BusCycle::read(address, width))
    }

    /// Convenience single write.
    pub fn write(
        &mut self,
        address: Address,
        width: DataWidth,
        data: u16,
    ) -> Result<CycleResult, MalformedCycle> {
        self.perform_cycle(&BusCycle::write(address, width, data))
    }

    pub fn iface_of(&self, slot: u8) -> Option<InterfaceWidth> {
        self.slots.get(&slot).map(|e| e.board.iface())
    }
}
