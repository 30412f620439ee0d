//! Shared slave-side machinery: register maps, decode, access semantics,
//! and the periodic-tick contract every board model implements.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::DataWidth;

/// Register access class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Access {
    /// Read-only; writes bus-error.
    RO,
    /// Write-only; reads return 0.
    WO,
    /// Plain read/write.
    RW,
    /// Write-1-to-clear latched bits; reads normal.
    RW1C,
}

/// One decoded register inside a board's window.
#[derive(Debug, Clone, Serialize)]
pub struct RegisterDescriptor {
    pub name: &'static str,
    pub offset: u32,
    pub width_bits: u8,
    pub access: Access,
    pub reset_value: u16,
}

impl RegisterDescriptor {
    pub fn byte_len(&self) -> u32 {
        (self.width_bits / 8) as u32
    }

    pub fn width(&self) -> DataWidth {
        if self.width_bits == 16 {
            DataWidth::D16
        } else {
            DataWidth::D08
        }
    }

    fn contains(&self, offset: u32) -> bool {
        offset >= self.offset && offset < self.offset + self.byte_len()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("register {a} overlaps register {b}")]
    Overlap { a: &'static str, b: &'static str },
    #[error("register {0} does not fit inside the window")]
    OutsideWindow(&'static str),
    #[error("register {0}: reset value does not fit its width")]
    ResetTooWide(&'static str),
    #[error("duplicate register name {0}")]
    DuplicateName(&'static str),
}

/// Ordered register descriptors defining a board's decoded window.
#[derive(Debug, Clone)]
pub struct RegisterMap {
    registers: Vec<RegisterDescriptor>,
    window_bytes: u32,
}

impl RegisterMap {
    pub fn new(registers: Vec<RegisterDescriptor>, window_bytes: u32) -> Result<Self, MapError> {
        for (i, r) in registers.iter().enumerate() {
            if r.offset + r.byte_len() > window_bytes {
                return Err(MapError::OutsideWindow(r.name));
            }
            let mask = if r.width_bits == 8 { 0xFF00 } else { 0x0000 };
            if r.reset_value & mask != 0 {
                return Err(MapError::ResetTooWide(r.name));
            }
            for other in &registers[..i] {
                if r.offset < other.offset + other.byte_len() && other.offset < r.offset + r.byte_len() {
                    return Err(MapError::Overlap { a: other.name, b: r.name });
                }
                if r.name == other.name {
                    return Err(MapError::DuplicateName(r.name));
                }
            }
        }
        Ok(Self { registers, window_bytes })
    }

    pub fn window_bytes(&self) -> u32 {
        self.window_bytes
    }

    pub fn registers(&self) -> &[RegisterDescriptor] {
        &self.registers
    }

    /// Index of the unique register containing `offset`, if any. `None`
    /// means the byte is unmapped and the caller raises a bus error.
    pub fn decode(&self, offset: u32) -> Option<usize> {
        if offset >= self.window_bytes {
            return None;
        }
        self.registers.iter().position(|r| r.contains(offset))
    }

    pub fn by_name(&self, name: &str) -> Option<(usize, &RegisterDescriptor)> {
        self.registers.iter().enumerate().find(|(_, r)| r.name == name)
    }
}

/// Backing storage for a register map plus the access-semantics state
/// machine. Writes produce a [`RegisterWrite`] notification so the owning
/// board model can react.
#[derive(Debug, Clone)]
pub struct RegisterFile {
    map: RegisterMap,
    values: Vec<u16>,
}

/// Notification emitted for every accepted write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegisterWrite {
    pub index: usize,
    pub written: u16,
    pub value_after: u16,
}

/// Slave-side access fault; the backplane turns this into BusError.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AccessFault {
    #[error("unmapped offset")]
    Unmapped,
    #[error("write to read-only register")]
    WriteToReadOnly,
    #[error("access width does not match register width")]
    WidthMismatch,
}

impl RegisterFile {
    pub fn new(map: RegisterMap) -> Self {
        let values = map.registers().iter().map(|r| r.reset_value).collect();
        Self { map, values }
    }

    pub fn map(&self) -> &RegisterMap {
        &self.map
    }

    pub fn reset(&mut self) {
        for (v, r) in self.values.iter_mut().zip(self.map.registers()) {
            *v = r.reset_value;
        }
    }

    /// Raw value by index, ignoring access class (board-internal view).
    pub fn get(&self, index: usize) -> u16 {
        self.values[index]
    }

    pub fn get_by_name(&self, name: &str) -> u16 {
        let (i, _) = self.map.by_name(name).expect("unknown register name");
        self.values[i]
    }

    /// Board-internal store, ignoring access class (hardware updating its
    /// own status registers).
    pub fn set(&mut self, index: usize, value: u16) {
        self.values[index] = value;
    }

    pub fn set_by_name(&mut self, name: &str, value: u16) {
        let (i, _) = self.map.by_name(name).expect("unknown register name");
        self.values[i] = value;
    }

    /// Bus-side read at a byte offset. The access width must match the
    /// register width (no partial access to 16-bit registers).
    pub fn bus_read(&self, offset: u32, width: DataWidth) -> Result<u16, AccessFault> {
        let index = self.map.decode(offset).ok_or(AccessFault::Unmapped)?;
        let reg = &self.map.registers()[index];
        if reg.width() != width || offset != reg.offset {
            return Err(AccessFault::WidthMismatch);
        }
        match reg.access {
            Access::WO => Ok(0),
            _ => Ok(self.values[index]),
        }
    }

    /// Bus-side write. RW1C registers clear the bits written as ones.
    pub fn bus_write(
        &mut self,
        offset: u32,
        width: DataWidth,
        data: u16,
    ) -> Result<RegisterWrite, AccessFault> {
        let index = self.map.decode(offset).ok_or(AccessFault::Unmapped)?;
        let reg = &self.map.registers()[index];
        if reg.width() != width || offset != reg.offset {
            return Err(AccessFault::WidthMismatch);
        }
        match reg.access {
            Access::RO => Err(AccessFault::WriteToReadOnly),
            Access::RW1C => {
                self.values[index] &= !data;
                Ok(RegisterWrite { index, written: data, value_after: self.values[index] })
            }
            Access::RW | Access::WO => {
                self.values[index] = data;
                Ok(RegisterWrite { index, written: data, value_after: data })
            }
        }
    }
}

/// Entry in the machine-readable register manifest consumed by the PV
/// gateway and the docs generator.
#[derive(Debug, Clone, Serialize)]
pub struct ManifestRegister {
    pub name: String,
    pub offset: u32,
    pub width_bits: u8,
    pub access: Access,
    pub reset_value: u16,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoardManifest {
    pub slot: u8,
    pub kind: String,
    pub space: crate::bus::AddressSpace,
    pub base: u32,
    pub window_bytes: u32,
    pub registers: Vec<ManifestRegister>,
}

pub fn manifest_registers(map: &RegisterMap) -> Vec<ManifestRegister> {
    map.registers()
        .iter()
        .map(|r| ManifestRegister {
            name: r.name.to_string(),
            offset: r.offset,
            width_bits: r.width_bits,
            access: r.access,
            reset_value: r.reset_value,
        })
        .collect()
}
