//! VME backplane primitives: address spaces, data cycles, and the
//! vectored-interrupt acknowledge daisy chain.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// VME address space selector. Only the short (A16) and standard (A24)
/// spaces are modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AddressSpace {
    A16,
    A24,
}

impl AddressSpace {
    pub fn limit(self) -> u32 {
        match self {
            AddressSpace::A16 => 1 << 16,
            AddressSpace::A24 => 1 << 24,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AddressSpace::A16 => "a16",
            AddressSpace::A24 => "a24",
        }
    }
}

/// A byte address within one of the two spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Address {
    pub space: AddressSpace,
    pub value: u32,
}

impl Address {
    pub fn a16(value: u32) -> Self {
        Self { space: AddressSpace::A16, value }
    }

    pub fn a24(value: u32) -> Self {
        Self { space: AddressSpace::A24, value }
    }

    pub fn in_range(&self) -> bool {
        self.value < self.space.limit()
    }
}

/// Data transfer width. D16 cycles must be even-aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataWidth {
    D08,
    D16,
}

impl DataWidth {
    pub fn bytes(self) -> u32 {
        match self {
            DataWidth::D08 => 1,
            DataWidth::D16 => 2,
        }
    }

    pub fn bits(self) -> u32 {
        self.bytes() * 8
    }

    pub fn mask(self) -> u16 {
        match self {
            DataWidth::D08 => 0x00FF,
            DataWidth::D16 => 0xFFFF,
        }
    }

    pub fn fits(self, data: u16) -> bool {
        data & !self.mask() == 0
    }

    pub fn label(self) -> &'static str {
        match self {
            DataWidth::D08 => "d08",
            DataWidth::D16 => "d16",
        }
    }
}

/// Kind of bus transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleKind {
    Read,
    Write,
    BlockRead,
    BlockWrite,
    ReadModifyWrite,
    InterruptAck,
}

impl CycleKind {
    pub fn label(self) -> &'static str {
        match self {
            CycleKind::Read => "read",
            CycleKind::Write => "write",
            CycleKind::BlockRead => "blockread",
            CycleKind::BlockWrite => "blockwrite",
            CycleKind::ReadModifyWrite => "rmw",
            CycleKind::InterruptAck => "iack",
        }
    }

    pub fn is_block(self) -> bool {
        matches!(self, CycleKind::BlockRead | CycleKind::BlockWrite)
    }
}

/// One VME transaction as issued by the (single) bus master.
///
/// For `ReadModifyWrite`, `data` carries the set word and `rmw_mask` the bit
/// mask; the modified value is `(old & !mask) | (set & mask)`. For
/// `InterruptAck`, `address.value` carries the interrupt level (1..=7).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusCycle {
    pub kind: CycleKind,
    pub address: Address,
    pub width: DataWidth,
    pub data: u16,
    pub rmw_mask: u16,
    pub beat_count: u32,
}

impl BusCycle {
    pub fn read(address: Address, width: DataWidth) -> Self {
        Self { kind: CycleKind::Read, address, width, data: 0, rmw_mask: 0, beat_count: 1 }
    }

    pub fn write(address: Address, width: DataWidth, data: u16) -> Self {
        Self { kind: CycleKind::Write, address, width, data, rmw_mask: 0, beat_count: 1 }
    }

    pub fn rmw(address: Address, width: DataWidth, mask: u16, set: u16) -> Self {
        Self {
            kind: CycleKind::ReadModifyWrite,
            address,
            width,
            data: set,
            rmw_mask: mask,
            beat_count: 1,
        }
    }

    pub fn iack(level: u8, width: DataWidth) -> Self {
        Self {
            kind: CycleKind::InterruptAck,
            address: Address::a16(level as u32),
            width,
            data: 0,
            rmw_mask: 0,
            beat_count: 1,
        }
    }

    /// Check the structural invariants. Malformed cycles are rejected before
    /// they reach the backplane; they never turn into bus errors.
    pub fn validate(&self) -> Result<(), MalformedCycle> {
        if self.kind == CycleKind::InterruptAck {
            let level = self.address.value;
            if !(1..=7).contains(&level) {
                return Err(MalformedCycle::BadInterruptLevel(level));
            }
            return Ok(());
        }
        if !self.address.in_range() {
            return Err(MalformedCycle::AddressOutOfSpace {
                space: self.address.space,
                value: self.address.value,
            });
        }
        if self.width == DataWidth::D16 && !self.address.value.is_multiple_of(2) {
            return Err(MalformedCycle::MisalignedD16(self.address.value));
        }
        if !self.width.fits(self.data) {
            return Err(MalformedCycle::DataTooWide { data: self.data, width: self.width });
        }
        if self.kind.is_block() {
            if self.beat_count == 0 {
                return Err(MalformedCycle::ZeroBeatBlock);
            }
        } else if self.beat_count != 1 {
            return Err(MalformedCycle::BeatCountOnNonBlock(self.beat_count));
        }
        Ok(())
    }
}

/// Why a cycle was rejected before dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MalformedCycle {
    #[error("address {value:#x} outside {space:?} space")]
    AddressOutOfSpace { space: AddressSpace, value: u32 },
    #[error("D16 cycle at odd address {0:#x}")]
    MisalignedD16(u32),
    #[error("data {data:#x} does not fit {width:?}")]
    DataTooWide { data: u16, width: DataWidth },
    #[error("block transfer with zero beats")]
    ZeroBeatBlock,
    #[error("beat count {0} on a non-block cycle")]
    BeatCountOnNonBlock(u32),
    #[error("interrupt level {0} outside 1..=7")]
    BadInterruptLevel(u32),
}

/// Bus handshake outcome of a dispatched cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleOutcome {
    Dtack,
    BusError,
}

impl CycleOutcome {
    pub fn label(self) -> &'static str {
        match self {
            CycleOutcome::Dtack => "dtack",
            CycleOutcome::BusError => "buserr",
        }
    }
}

/// Result of a dispatched cycle. `data` is meaningful for reads (and carries
/// the status/ID word for interrupt acknowledges) and is zero on BusError.
/// `latency_ticks` is in the responding module's clock domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleResult {
    pub outcome: CycleOutcome,
    pub data: u16,
    pub latency_ticks: u64,
}

impl CycleResult {
    pub fn bus_error() -> Self {
        Self { outcome: CycleOutcome::BusError, data: 0, latency_ticks: 0 }
    }

    pub fn dtack(data: u16, latency_ticks: u64) -> Self {
        Self { outcome: CycleOutcome::Dtack, data, latency_ticks }
    }

    pub fn is_dtack(&self) -> bool {
        self.outcome == CycleOutcome::Dtack
    }
}

/// A pending vectored-interrupt request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterruptRequest {
    pub level: u8,
    pub vector: u16,
    pub slot: u8,
    pub status_width: DataWidth,
}

/// Pending-request store plus the acknowledge daisy chain.
///
/// Requests are held in posting order. An acknowledge at a level is answered
/// by the requester in the lowest-numbered slot (daisy-chain propagation
/// order); within one slot, requests drain first-posted-first.
#[derive(Debug, Default)]
pub struct IrqController {
    pending: Vec<InterruptRequest>,
}

impl IrqController {
    pub fn new() -> Self {
        Self::default()
    }

    /// Post a request. Re-posting an identical request while it is still
    /// pending is a no-op.
    pub fn post(&mut self, req: InterruptRequest) {
        debug_assert!((1..=7).contains(&req.level));
        debug_assert!(req.status_width.fits(req.vector));
        if !self.pending.contains(&req) {
            self.pending.push(req);
        }
    }

    /// Acknowledge one request at `level`, returning its status/ID adjusted
    /// to the acknowledge width (truncated for D08 reads of a 16-bit vector,
    /// zero-extended the other way). `None` signals a spurious acknowledge.
    pub fn acknowledge(&mut self, level: u8, width: DataWidth) -> Option<AcknowledgedIrq> {
        let idx = self
            .pending
            .iter()
            .enumerate()
            .filter(|(_, r)| r.level == level)
            .min_by_key(|(i, r)| (r.slot, *i))
            .map(|(i, _)| i)?;
        let req = self.pending.remove(idx);
        Some(AcknowledgedIrq { slot: req.slot, vector: req.vector & width.mask() })
    }

    /// Drop every pending request posted from `slot` (board reset).
    pub fn clear_slot(&mut self, slot: u8) {
        self.pending.retain(|r| r.slot != slot);
    }

    pub fn pending(&self) -> &[InterruptRequest] {
        &self.pending
    }

    pub fn pending_at(&self, level: u8) -> usize {
        self.pending.iter().filter(|r| r.level == level).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcknowledgedIrq {
    pub slot: u8,
    pub vector: u16,
}
