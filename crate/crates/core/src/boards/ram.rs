//! Generic RAM-backed slave. Used as a plain memory module and as the test
//! fixture for the backplane's routing, block-transfer, and RMW semantics.

use crate::boards::{AccessReq, Board, BoardCtx, InterfaceWidth, WindowId};
use crate::clock::ClockRate;
use crate::slave::{AccessFault, RegisterMap};

pub struct RamBoard {
    bytes: Vec<u8>,
    iface: InterfaceWidth,
    map: RegisterMap,
}

impl RamBoard {
    pub fn new(len: u32, iface: InterfaceWidth) -> Self {
        Self {
            bytes: vec![0; len as usize],
            iface,
            // The whole window is memory; the register map is empty.
            map: RegisterMap::new(Vec::new(), len).expect("empty map"),
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    fn read_word(&self, offset: u32, width: crate::bus::DataWidth) -> u16 {
        match width {
            crate::bus::DataWidth::D08 => self.bytes[offset as usize] as u16,
            crate::bus::DataWidth::D16 => {
                // VME byte ordering: most significant byte at the lower address.
                ((self.bytes[offset as usize] as u16) << 8) | self.bytes[offset as usize + 1] as u16
            }
        }
    }

    fn write_word(&mut self, offset: u32, width: crate::bus::DataWidth, data: u16) {
        match width {
            crate::bus::DataWidth::D08 => self.bytes[offset as usize] = data as u8,
            crate::bus::DataWidth::D16 => {
                self.bytes[offset as usize] = (data >> 8) as u8;
                self.bytes[offset as usize + 1] = data as u8;
            }
        }
    }
}

impl Board for RamBoard {
    fn kind(&self) -> &'static str {
        "ram"
    }

    fn clock(&self) -> ClockRate {
        ClockRate::Mhz16
    }

    fn iface(&self) -> InterfaceWidth {
        self.iface
    }

    fn register_map(&self) -> &RegisterMap {
        &self.map
    }

    fn supports_block(&self, _window: WindowId) -> bool {
        true
    }

    fn supports_rmw(&self, _window: WindowId) -> bool {
        true
    }

    fn tick(&mut self, _n: u64, _ctx: &mut BoardCtx) {}

    fn reset(&mut self, _ctx: &mut BoardCtx) {
        self.bytes.fill(0);
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
        let width = req.width();
        if offset + width.bytes() > self.bytes.len() as u32 {
            return Err(AccessFault::Unmapped);
        }
        match req {
            AccessReq::Read { width } => Ok(self.read_word(offset, width)),
            AccessReq::Write { width, data } => {
                self.write_word(offset, width, data);
                Ok(data)
            }
            AccessReq::Rmw { width, mask, set } => {
                let old = self.read_word(offset, width);
                self.write_word(offset, width, (old & !mask) | (set & mask));
                Ok(old)
            }
        }
    }
}
