//! Process-variable bindings: named engineering-unit views of board
//! registers, loaded from a TOML file and validated against the register
//! manifest before the service starts.

use serde::Deserialize;
use thiserror::Error;

use vmesim_core::bus::{Address, AddressSpace, DataWidth};
use vmesim_core::slave::{Access, BoardManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    ReadOnly,
    ReadWrite,
}

/// One binding as written in the bindings file. For 16-bit quantities kept
/// in two 8-bit registers, `register` names the high byte and `register_lo`
/// the low byte.
#[derive(Debug, Clone, Deserialize)]
pub struct PvBinding {
    pub name: String,
    pub slot: u8,
    pub register: String,
    #[serde(default)]
    pub register_lo: Option<String>,
    pub direction: Direction,
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default)]
    pub offset: f64,
}

fn default_gain() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
pub struct BindingsFile {
    pub version: u32,
    #[serde(default, rename = "pv")]
    pub pvs: Vec<PvBinding>,
}

#[derive(Debug, Error, PartialEq)]
pub enum BindingError {
    #[error("bindings file version {0} unsupported")]
    Version(u32),
    #[error("duplicate PV name {0}")]
    DuplicateName(String),
    #[error("PV names must not end in .raw: {0}")]
    ReservedSuffix(String),
    #[error("PV {pv}: no board in slot {slot}")]
    UnknownSlot { pv: String, slot: u8 },
    #[error("PV {pv}: board in slot {slot} has no register {register}")]
    UnknownRegister { pv: String, slot: u8, register: String },
    #[error("PV {pv}: read-write binding on read-only register {register}")]
    ReadOnlyRegister { pv: String, register: String },
    #[error("PV {pv}: gain must be nonzero")]
    ZeroGain { pv: String },
    #[error("PV {pv}: paired registers must both be 8-bit")]
    BadPair { pv: String },
    #[error("bindings file: {0}")]
    Parse(String),
}

/// A register endpoint resolved to a concrete bus address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegTarget {
    pub space: AddressSpace,
    pub addr: u32,
    pub width: DataWidth,
}

impl RegTarget {
    pub fn address(&self) -> Address {
        Address { space: self.space, value: self.addr }
    }
}

/// A binding ready for service: scaling plus one or two bus endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedBinding {
    pub name: String,
    pub direction: Direction,
    pub gain: f64,
    pub offset: f64,
    /// Single register, or the high byte of a pair.
    pub target: RegTarget,
    /// Low byte of a split 16-bit quantity.
    pub lo: Option<RegTarget>,
}

impl ResolvedBinding {
    pub fn raw_max(&self) -> u32 {
        match (self.lo.is_some(), self.target.width) {
            (true, _) => 0xFFFF,
            (false, DataWidth::D16) => 0xFFFF,
            (false, DataWidth::D08) => 0xFF,
        }
    }

    pub fn scale(&self, raw: u32) -> f64 {
        raw as f64 * self.gain + self.offset
    }

    pub fn unscale(&self, value: f64) -> u32 {
        let raw = ((value - self.offset) / self.gain).round();
        raw.clamp(0.0, self.raw_max() as f64) as u32
    }
}

pub fn parse_bindings(text: &str) -> Result<BindingsFile, BindingError> {
    let file: BindingsFile = toml::from_str(text).map_err(|e| BindingError::Parse(e.to_string()))?;
    if file.version != 1 {
        return Err(BindingError::Version(file.version));
    }
    Ok(file)
}

fn lookup(
    manifest: &[BoardManifest],
    pv: &str,
    slot: u8,
    register: &str,
) -> Result<(RegTarget, Access), BindingError> {
    let board = manifest
        .iter()
        .find(|b| b.slot == slot)
        .ok_or_else(|| BindingError::UnknownSlot { pv: pv.to_string(), slot })?;
    let reg = board
        .registers
        .iter()
        .find(|r| r.name == register)
        .ok_or_else(|| BindingError::UnknownRegister {
            pv: pv.to_string(),
            slot,
            register: register.to_string(),
        })?;
    let width = if reg.width_bits == 16 { DataWidth::D16 } else { DataWidth::D08 };
    Ok((
        RegTarget { space: board.space, addr: board.base + reg.offset, width },
        reg.access,
    ))
}

/// Validate every binding against the manifest. All errors are reported at
/// startup, not lazily on first use.
pub fn resolve(
    file: &BindingsFile,
    manifest: &[BoardManifest],
) -> Result<Vec<ResolvedBinding>, Vec<BindingError>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for pv in &file.pvs {
        if pv.name.ends_with(".raw") {
            errors.push(BindingError::ReservedSuffix(pv.name.clone()));
            continue;
        }
        if !seen.insert(pv.name.clone()) {
            errors.push(BindingError::DuplicateName(pv.name.clone()));
            continue;
        }
        if pv.gain == 0.0 {
            errors.push(BindingError::ZeroGain { pv: pv.name.clone() });
            continue;
        }
        let (target, access) = match lookup(manifest, &pv.name, pv.slot, &pv.register) {
            Ok(t) => t,
            Err(e) => {
                errors.push(e);
                continue;
            }
        };
        if pv.direction == Direction::ReadWrite && access == Access::RO {
            errors.push(BindingError::ReadOnlyRegister {
                pv: pv.name.clone(),
                register: pv.register.clone(),
            });
            continue;
        }
        let lo = match &pv.register_lo {
            None => None,
            Some(name) => match lookup(manifest, &pv.name, pv.slot, name) {
                Ok((t, lo_access)) => {
                    if t.width != DataWidth::D08 || target.width != DataWidth::D08 {
                        errors.push(BindingError::BadPair { pv: pv.name.clone() });
                        continue;
                    }
                    if pv.direction == Direction::ReadWrite && lo_access == Access::RO {
                        errors.push(BindingError::ReadOnlyRegister {
                            pv: pv.name.clone(),
                            register: name.clone(),
                        });
                        continue;
                    }
                    Some(t)
                }
                Err(e) => {
                    errors.push(e);
                    continue;
                }
            },
        };
        out.push(ResolvedBinding {
            name: pv.name.clone(),
            direction: pv.direction,
            gain: pv.gain,
            offset: pv.offset,
            target,
            lo,
        });
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}
