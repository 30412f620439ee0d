//! Shared fixture: a fully populated crate at the canonical base addresses.

use vmesim_core::boards::{
    BoardModel, HvBoard, HvConfig, MpsBoard, MpsConfig, PllBoard, RamBoard, RingBoard,
    RingNetwork, ScamBoard, WindowId,
};
use vmesim_core::boards::InterfaceWidth;
use vmesim_core::trace::TraceLog;
use vmesim_core::{Address, Simulator};

pub const SCAM_SLOT: u8 = 2;
pub const HV_SLOT: u8 = 3;
pub const RING_SLOT: u8 = 4;
pub const DSP_SLOT: u8 = 5;
pub const MPS_SLOT: u8 = 6;
pub const PLL_SLOT: u8 = 7;

pub const SCAM_BASE: u32 = 0x1000;
pub const HV_BASE: u32 = 0xC000;
pub const RING_BASE: u32 = 0x100000;
pub const MPS_BUF_BASE: u32 = 0x200000;
pub const MPS_REG_BASE: u32 = 0xA00000;
pub const DSP_REG_BASE: u32 = 0xB00000;
pub const DSP_MEM_BASE: u32 = 0xB10000;
pub const PLL_BASE: u32 = 0xC00000;

pub fn build_full_crate(trace: TraceLog) -> Simulator {
    let mut sim = Simulator::new(trace);
    sim.attach(SCAM_SLOT, BoardModel::Scam(ScamBoard::new()), Address::a16(SCAM_BASE), 8)
        .unwrap();
    sim.attach(HV_SLOT, BoardModel::Hv(HvBoard::new(HvConfig::default())), Address::a16(HV_BASE), 16)
        .unwrap();
    sim.attach(RING_SLOT, BoardModel::Ring(RingBoard::new(1).unwrap()), Address::a24(RING_BASE), 16)
        .unwrap();
    sim.attach(DSP_SLOT, BoardModel::Dsp(Default::default()), Address::a24(DSP_REG_BASE), 8)
        .unwrap();
    sim.map_window(DSP_SLOT, WindowId::Memory, Address::a24(DSP_MEM_BASE), 0x20000)
        .unwrap();
    sim.attach(
        MPS_SLOT,
        BoardModel::Mps(MpsBoard::new(MpsConfig { station_count: 2, ..MpsConfig::default() }).unwrap()),
        Address::a24(MPS_REG_BASE),
        32,
    )
    .unwrap();
    sim.map_window(MPS_SLOT, WindowId::Memory, Address::a24(MPS_BUF_BASE), 0x800000)
        .unwrap();
    sim.attach(PLL_SLOT, BoardModel::Pll(PllBoard::new()), Address::a24(PLL_BASE), 32)
        .unwrap();
    sim.set_ring(RingNetwork::new(vec![1, 2, 3, 4], 10).unwrap());
    sim
}

#[allow(dead_code)]
pub fn ram_board(len: u32) -> BoardModel {
    BoardModel::Ram(RamBoard::new(len, InterfaceWidth::Bits16))
}

#[allow(dead_code)]
pub fn ram_board_8bit(len: u32) -> BoardModel {
    BoardModel::Ram(RamBoard::new(len, InterfaceWidth::Bits8))
}
