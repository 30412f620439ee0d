//! Dual-DSP board FPGA model: 128 KiB of dual-port memory arbitrated among
//! the two DSP ports and the VME port, with D08/D16 vectored interrupts.
//! Runs at 25 MHz behind a 16-bit slave interface.

use thiserror::Error;

use crate::boards::{AccessReq, Board, BoardCtx, InterfaceWidth, WindowId};
use crate::bus::DataWidth;
use crate::clock::ClockRate;
use crate::slave::{Access, AccessFault, RegisterDescriptor, RegisterFile, RegisterMap};

/// Size of the dual-port memory in bytes.
pub const MEM_BYTES: u32 = 128 * 1024;

/// The three memory ports, in rotation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PortId {
    DspA,
    DspB,
    Vme,
}

impl PortId {
    pub const ALL: [PortId; 3] = [PortId::DspA, PortId::DspB, PortId::Vme];

    pub fn index(self) -> usize {
        match self {
            PortId::DspA => 0,
            PortId::DspB => 1,
            PortId::Vme => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemOp {
    Read,
    Write(u16),
    /// Atomic `(old & !mask) | (set & mask)`; completes with the old value.
    Rmw { mask: u16, set: u16 },
}

/// One port access to the dual-port memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemAccess {
    pub port: PortId,
    pub op: MemOp,
    pub offset: u32,
    pub width: DataWidth,
    pub issue_tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MemError {
    #[error("access at {offset:#x}+{len} outside the 128 KiB memory")]
    Range { offset: u32, len: u32 },
    #[error("D16 access at odd offset {0:#x}")]
    Misaligned(u32),
}

/// Completion record for one granted access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Completion {
    pub port: PortId,
    /// Memory cycle in which the access was granted.
    pub grant_tick: u64,
    /// Read data, old value for RMW, or the written word.
    pub value: u16,
}

const REG_STATUS: usize = 0;
const REG_IRQ_LEVEL: usize = 1;

fn dsp_map() -> RegisterMap {
    let regs = vec![
        RegisterDescriptor { name: "status", offset: 0, width_bits: 16, access: Access::RO, reset_value: 0 },
        RegisterDescriptor { name: "irq_level", offset: 2, width_bits: 16, access: Access::RW, reset_value: 3 },
    ];
    RegisterMap::new(regs, 8).expect("static map")
}

pub struct DspBoard {
    regs: RegisterFile,
    mem: Vec<u8>,
    /// Rotation pointer: the port that wins the next contended grant.
    next_grant: usize,
}

impl DspBoard {
    pub fn new() -> Self {
        Self { regs: RegisterFile::new(dsp_map()), mem: vec![0; MEM_BYTES as usize], next_grant: 0 }
    }

    pub fn memory(&self) -> &[u8] {
        &self.mem
    }

    pub fn next_grant_port(&self) -> PortId {
        PortId::ALL[self.next_grant]
    }

    /// Force the rotation phase (observable in the status register).
    pub fn set_rotation_phase(&mut self, port: PortId) {
        self.next_grant = port.index();
    }

    pub fn irq_level(&self) -> u8 {
        let level = self.regs.get(REG_IRQ_LEVEL) as u8;
        if (1..=7).contains(&level) {
            level
        } else {
            3
        }
    }

    fn check(access: &MemAccess) -> Result<(), MemError> {
        let len = access.width.bytes();
        if access.offset + len > MEM_BYTES {
            return Err(MemError::Range { offset: access.offset, len });
        }
        if access.width == DataWidth::D16 && !access.offset.is_multiple_of(2) {
            return Err(MemError::Misaligned(access.offset));
        }
        Ok(())
    }

    fn read_word(&self, offset: u32, width: DataWidth) -> u16 {
        match width {
            DataWidth::D08 => self.mem[offset as usize] as u16,
            DataWidth::D16 => {
                ((self.mem[offset as usize] as u16) << 8) | self.mem[offset as usize + 1] as u16
            }
        }
    }

    fn write_word(&mut self, offset: u32, width: DataWidth, data: u16) {
        match width {
            DataWidth::D08 => self.mem[offset as usize] = data as u8,
            DataWidth::D16 => {
                self.mem[offset as usize] = (data >> 8) as u8;
                self.mem[offset as usize + 1] = data as u8;
            }
        }
    }

    /// Grant one access immediately and advance the rotation. RMW holds
    /// the grant for both halves.
    fn grant(&mut self, access: &MemAccess) -> u16 {
        let value = match access.op {
            MemOp::Read => self.read_word(access.offset, access.width),
            MemOp::Write(data) => {
                self.write_word(access.offset, access.width, data);
                data
            }
            MemOp::Rmw { mask, set } => {
                let old = self.read_word(access.offset, access.width);
                self.write_word(access.offset, access.width, (old & !mask) | (set & mask));
                old
            }
        };
        self.next_grant = (access.port.index() + 1) % 3;
        value
    }

    /// Submit one access outside a scripted schedule (the VME window path);
    /// it is granted in the current memory cycle.
    pub fn submit(&mut self, access: MemAccess) -> Result<u16, MemError> {
        Self::check(&access)?;
        Ok(self.grant(&access))
    }

    /// Run a scripted multi-port schedule against the arbiter.
    ///
    /// Accesses issued in the same memory cycle are granted in rotating
    /// round-robin order; each grant occupies one cycle and advances the
    /// rotation past the winner. Per-port program order is preserved.
    pub fn execute_schedule(&mut self, accesses: &[MemAccess]) -> Result<Vec<Completion>, MemError> {
        for a in accesses {
            Self::check(a)?;
        }
        let mut queues: [std::collections::VecDeque<&MemAccess>; 3] = Default::default();
        for a in accesses {
            queues[a.port.index()].push_back(a);
        }
        for q in &queues {
            debug_assert!(
                q.iter().zip(q.iter().skip(1)).all(|(x, y)| x.issue_tick <= y.issue_tick),
                "per-port accesses must be listed in issue order"
            );
        }
        let mut completions = Vec::with_capacity(accesses.len());
        let mut cycle = accesses.iter().map(|a| a.issue_tick).min().unwrap_or(0);
        let remaining = |qs: &[std::collections::VecDeque<&MemAccess>; 3]| {
            qs.iter().map(|q| q.len()).sum::<usize>()
        };
        while remaining(&queues) > 0 {
            let ready = |qs: &[std::collections::VecDeque<&MemAccess>; 3], p: usize| {
                qs[p].front().map(|a| a.issue_tick <= cycle).unwrap_or(false)
            };
            let winner = (0..3)
                .map(|k| (self.next_grant + k) % 3)
                .find(|&p| ready(&queues, p));
            match winner {
                Some(p) => {
                    let access = queues[p].pop_front().unwrap();
                    let value = self.grant(access);
                    completions.push(Completion { port: access.port, grant_tick: cycle, value });
                    cycle += 1;
                }
                None => {
                    // Nobody ready: jump to the earliest future issue.
                    cycle = queues
                        .iter()
                        .filter_map(|q| q.front().map(|a| a.issue_tick))
                        .min()
                        .expect("queues non-empty");
                }
            }
        }
        Ok(completions)
    }

    /// Raise a vectored interrupt on behalf of one of the DSPs.
    pub fn dsp_interrupt(&mut self, _source: PortId, vector: u16, width: DataWidth, ctx: &mut BoardCtx) {
        debug_assert!(width.fits(vector));
        ctx.post_irq(self.irq_level(), vector, width);
    }
}

impl Default for DspBoard {
    fn default() -> Self {
        Self::new()
    }
}

impl Board for DspBoard {
    fn kind(&self) -> &'static str {
        "dsp"
    }

    fn clock(&self) -> ClockRate {
        ClockRate::Mhz25
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
            WindowId::Memory => Some(MEM_BYTES),
        }
    }

    fn supports_block(&self, window: WindowId) -> bool {
        window == WindowId::Memory
    }

    fn supports_rmw(&self, window: WindowId) -> bool {
        window == WindowId::Memory
    }

    fn tick(&mut self, _n: u64, _ctx: &mut BoardCtx) {}

    fn reset(&mut self, _ctx: &mut BoardCtx) {
        self.regs.reset();
        self.mem.fill(0);
        self.next_grant = 0;
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
                    self.regs.set(REG_STATUS, self.next_grant as u16);
                    self.regs.bus_read(offset, width)
                }
                AccessReq::Write { width, data } => {
                    self.regs.bus_write(offset, width, data)?;
                    Ok(data)
                }
                AccessReq::Rmw { .. } => Err(AccessFault::Unmapped),
            },
            WindowId::Memory => {
                let op = match req {
                    AccessReq::Read { .. } => MemOp::Read,
                    AccessReq::Write { data, .. } => MemOp::Write(data),
                    AccessReq::Rmw { mask, set, .. } => MemOp::Rmw { mask, set },
                };
                self.submit(MemAccess { port: PortId::Vme, op, offset, width: req.width(), issue_tick: 0 })
                    .map_err(|_| AccessFault::Unmapped)
            }
        }
    }
}
