//! Behavioral board models and the contract they share with the backplane.

pub mod dsp;
pub mod hv;
pub mod mps;
pub mod pll;
pub mod ram;
pub mod ring;
pub mod scam;

use crate::bus::{DataWidth, IrqController};
use crate::clock::ClockRate;
use crate::slave::{AccessFault, RegisterMap};
use crate::trace::TraceLog;

pub use dsp::{DspBoard, MemAccess, MemOp, PortId};
pub use hv::{HvBoard, HvConfig, HvMode, TurnOnRejection};
pub use mps::{CurrentFrame, HistoryRecord, MpsBoard, MpsConfig, ShutdownReason, TripDecision};
pub use pll::{LutImage, PhaseAmplitude, PllBoard};
pub use ram::RamBoard;
pub use ring::{DeliveryReport, RingBoard, RingError, RingFrame, RingNetwork};
pub use scam::{ChannelConfig, Edge, Hall, ScamBoard};

/// Width of a board's VME slave interface. 8-bit boards respond only to
/// D08; a D16 cycle to them is a bus error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterfaceWidth {
    Bits8,
    Bits16,
}

impl InterfaceWidth {
    pub fn accepts(self, width: DataWidth) -> bool {
        match self {
            InterfaceWidth::Bits8 => width == DataWidth::D08,
            InterfaceWidth::Bits16 => true,
        }
    }
}

/// Identifies one of a board's decoded windows. Every board has a register
/// window; the dual-port and comparator boards also expose a memory window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum WindowId {
    Registers,
    Memory,
}

/// One slave-side access, already routed to a window-relative offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessReq {
    Read { width: DataWidth },
    Write { width: DataWidth, data: u16 },
    /// Atomic read-modify-write: `new = (old & !mask) | (set & mask)`;
    /// returns the old value.
    Rmw { width: DataWidth, mask: u16, set: u16 },
}

impl AccessReq {
    pub fn width(&self) -> DataWidth {
        match self {
            AccessReq::Read { width }
            | AccessReq::Write { width, .. }
            | AccessReq::Rmw { width, .. } => *width,
        }
    }
}

/// Simulator services handed to a board during an access, tick, or reset.
pub struct BoardCtx<'a> {
    pub now_ps: u64,
    pub slot: u8,
    pub irq: &'a mut IrqController,
    pub trace: &'a mut TraceLog,
    pub actions: &'a mut Vec<SimAction>,
}

impl BoardCtx<'_> {
    /// Post a vectored interrupt from this board's slot.
    pub fn post_irq(&mut self, level: u8, vector: u16, status_width: DataWidth) {
        self.irq.post(crate::bus::InterruptRequest {
            level,
            vector,
            slot: self.slot,
            status_width,
        });
        self.trace.log(
            self.now_ps,
            crate::trace::TraceRecord::IrqPosted {
                level,
                width: status_width,
                vector,
                slot: self.slot,
            },
        );
    }
}

/// Side effects a board asks the simulator to carry out after the current
/// access completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimAction {
    /// Launch a token-ring frame from the board with this serial address.
    RingTx { origin_serial: u8, dest: u8, payload: u16 },
}

/// The contract every board model implements.
pub trait Board {
    fn kind(&self) -> &'static str;
    fn clock(&self) -> ClockRate;
    fn iface(&self) -> InterfaceWidth;
    fn register_map(&self) -> &RegisterMap;

    /// Byte length of a window, if the board exposes it.
    fn window_len(&self, window: WindowId) -> Option<u32> {
        match window {
            WindowId::Registers => Some(self.register_map().window_bytes()),
            WindowId::Memory => None,
        }
    }

    fn supports_block(&self, _window: WindowId) -> bool {
        false
    }

    fn supports_rmw(&self, _window: WindowId) -> bool {
        false
    }

    /// Advance the board's state machines by `n` periods of its own clock.
    /// `tick(a); tick(b)` must leave state bit-identical to `tick(a + b)`.
    fn tick(&mut self, n: u64, ctx: &mut BoardCtx);

    /// Restore reset values and initial machine states. The backplane
    /// clears the board's pending interrupts separately.
    fn reset(&mut self, ctx: &mut BoardCtx);

    /// Execute one window-relative access.
    fn access(
        &mut self,
        window: WindowId,
        offset: u32,
        req: AccessReq,
        ctx: &mut BoardCtx,
    ) -> Result<u16, AccessFault>;
}

/// Closed set of board models hosted by the simulated crate.
pub enum BoardModel {
    Ram(RamBoard),
    Scam(ScamBoard),
    Hv(HvBoard),
    Ring(RingBoard),
    Dsp(DspBoard),
    Mps(MpsBoard),
    Pll(PllBoard),
}

macro_rules! delegate {
    ($self:ident, $b:ident => $e:expr) => {
        match $self {
            BoardModel::Ram($b) => $e,
            BoardModel::Scam($b) => $e,
            BoardModel::Hv($b) => $e,
            BoardModel::Ring($b) => $e,
            BoardModel::Dsp($b) => $e,
            BoardModel::Mps($b) => $e,
            BoardModel::Pll($b) => $e,
        }
    };
}

impl Board for BoardModel {
    fn kind(&self) -> &'static str {
        delegate!(self, b => b.kind())
    }
    fn clock(&self) -> ClockRate {
        delegate!(self, b => b.clock())
    }
    fn iface(&self) -> InterfaceWidth {
        delegate!(self, b => b.iface())
    }
    fn register_map(&self) -> &RegisterMap {
        delegate!(self, b => b.register_map())
    }
    fn window_len(&self, window: WindowId) -> Option<u32> {
        delegate!(self, b => b.window_len(window))
    }
    fn supports_block(&self, window: WindowId) -> bool {
        delegate!(self, b => b.supports_block(window))
    }
    fn supports_rmw(&self, window: WindowId) -> bool {
        delegate!(self, b => b.supports_rmw(window))
    }
    fn tick(&mut self, n: u64, ctx: &mut BoardCtx) {
        delegate!(self, b => b.tick(n, ctx))
    }
    fn reset(&mut self, ctx: &mut BoardCtx) {
        delegate!(self, b => b.reset(ctx))
    }
    fn access(
        &mut self,
        window: WindowId,
        offset: u32,
        req: AccessReq,
        ctx: &mut BoardCtx,
    ) -> Result<u16, AccessFault> {
        delegate!(self, b => b.access(window, offset, req, ctx))
    }
}

impl BoardModel {
    pub fn as_scam_mut(&mut self) -> Option<&mut ScamBoard> {
        match self {
            BoardModel::Scam(b) => Some(b),
            _ => None,
        }
    }
    pub fn as_hv_mut(&mut self) -> Option<&mut HvBoard> {
        match self {
            BoardModel::Hv(b) => Some(b),
            _ => None,
        }
    }
    pub fn as_hv(&self) -> Option<&HvBoard> {
        match self {
            BoardModel::Hv(b) => Some(b),
            _ => None,
        }
    }
    pub fn as_ring_mut(&mut self) -> Option<&mut RingBoard> {
        match self {
            BoardModel::Ring(b) => Some(b),
            _ => None,
        }
    }
    pub fn as_ring(&self) -> Option<&RingBoard> {
        match self {
            BoardModel::Ring(b) => Some(b),
            _ => None,
        }
    }
    pub fn as_dsp_mut(&mut self) -> Option<&mut DspBoard> {
        match self {
            BoardModel::Dsp(b) => Some(b),
            _ => None,
        }
    }
    pub fn as_mps_mut(&mut self) -> Option<&mut MpsBoard> {
        match self {
            BoardModel::Mps(b) => Some(b),
            _ => None,
        }
    }
    pub fn as_mps(&self) -> Option<&MpsBoard> {
        match self {
            BoardModel::Mps(b) => Some(b),
            _ => None,
        }
    }
    pub fn as_pll_mut(&mut self) -> Option<&mut PllBoard> {
        match self {
            BoardModel::Pll(b) => Some(b),
            _ => None,
        }
    }
}
