//! I/Q synthesis module: phase/amplitude inputs arrive over VME or local
//! encoders, sine and cosine come from lookup tables (the flash image), and
//! the fixed-point products drive two 14-bit offset-binary DACs. An
//! eight-channel ADC provides read-back voltages. Runs at 10 MHz behind a
//! 16-bit slave interface.

use thiserror::Error;

use crate::boards::{AccessReq, Board, BoardCtx, InterfaceWidth, WindowId};
use crate::clock::ClockRate;
use crate::scalar::offset_binary_code;
use crate::slave::{Access, AccessFault, RegisterDescriptor, RegisterFile, RegisterMap};
use crate::Real;

pub const SINE_ENTRIES: usize = 4096;
pub const AMP_ENTRIES: usize = 16384;
/// Cosine is the sine table read a quarter turn ahead.
pub const COSINE_INDEX_OFFSET: usize = SINE_ENTRIES / 4;

pub const AMPLITUDE_MAX: u16 = 16383;
pub const DAC_MIDSCALE: u16 = 8192;
pub const DAC_MAX: u16 = 16383;

const ADC_CHANNELS: usize = 8;
const ADC_FULL_SCALE_V: Real = 10.0;

/// Operator inputs: phase in 2^16 counts per turn, amplitude in 14 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseAmplitude {
    pub phase_code: u16,
    pub amplitude_code: u16,
}

impl PhaseAmplitude {
    pub fn new(phase_code: u16, amplitude_code: u16) -> Self {
        Self { phase_code, amplitude_code: amplitude_code.min(AMPLITUDE_MAX) }
    }
}

/// The tables burned into flash: full-cycle sine and the amplitude
/// linearization map (identity by default).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LutImage {
    pub sine: Vec<i16>,
    pub amplitude: Vec<u16>,
}

/// Build the flash tables: `sine[k] = round(32767 * sin(2πk / 4096))`,
/// rounding half away from zero.
pub fn build_luts() -> LutImage {
    let mut sine = Vec::with_capacity(SINE_ENTRIES);
    for k in 0..SINE_ENTRIES {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / SINE_ENTRIES as f64;
        sine.push((32767.0 * theta.sin()).round() as i16);
    }
    let amplitude = (0..AMP_ENTRIES as u16).collect();
    LutImage { sine, amplitude }
}

const FLASH_MAGIC: &[u8; 4] = b"PLLT";
const FLASH_VERSION: u16 = 1;

impl LutImage {
    /// Byte-exact flash image: 16-byte header (magic, version, table
    /// lengths) followed by both tables big-endian.
    pub fn to_flash_image(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 2 * self.sine.len() + 2 * self.amplitude.len());
        out.extend_from_slice(FLASH_MAGIC);
        out.extend_from_slice(&FLASH_VERSION.to_be_bytes());
        out.extend_from_slice(&[0u8; 2]);
        out.extend_from_slice(&(self.sine.len() as u32).to_be_bytes());
        out.extend_from_slice(&(self.amplitude.len() as u32).to_be_bytes());
        for v in &self.sine {
            out.extend_from_slice(&v.to_be_bytes());
        }
        for v in &self.amplitude {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn from_flash_image(bytes: &[u8]) -> Result<Self, FlashError> {
        if bytes.len() < 16 {
            return Err(FlashError::Truncated);
        }
        if &bytes[0..4] != FLASH_MAGIC {
            return Err(FlashError::BadMagic);
        }
        let sine_len = u32::from_be_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
        let amp_len = u32::from_be_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]) as usize;
        if bytes.len() != 16 + 2 * sine_len + 2 * amp_len {
            return Err(FlashError::Truncated);
        }
        let mut sine = Vec::with_capacity(sine_len);
        let mut off = 16;
        for _ in 0..sine_len {
            sine.push(i16::from_be_bytes([bytes[off], bytes[off + 1]]));
            off += 2;
        }
        let mut amplitude = Vec::with_capacity(amp_len);
        for _ in 0..amp_len {
            amplitude.push(u16::from_be_bytes([bytes[off], bytes[off + 1]]));
            off += 2;
        }
        Ok(Self { sine, amplitude })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FlashError {
    #[error("flash image truncated")]
    Truncated,
    #[error("bad flash magic")]
    BadMagic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("ADC channel {0} outside 0..=7")]
pub struct ChannelRangeError(pub usize);

/// Scale a 30-bit product down to the 14-bit signed DAC value, rounding
/// half away from zero.
fn scale_product(product: i64) -> i32 {
    let mag = (product.unsigned_abs() + 32768) >> 16;
    (mag as i64 * product.signum()) as i32
}

/// The fixed-point synthesis path. The phase code's top 12 bits index the
/// sine table; the amplitude code passes through the linearization table;
/// sine→I and cosine→Q per the sign convention of the modeled hardware.
pub fn compute_iq(input: PhaseAmplitude, luts: &LutImage) -> (u16, u16) {
    let idx = (input.phase_code >> 4) as usize;
    let amp = luts.amplitude[input.amplitude_code as usize & (AMP_ENTRIES - 1)] as i64;
    let sin_v = luts.sine[idx] as i64;
    let cos_v = luts.sine[(idx + COSINE_INDEX_OFFSET) % SINE_ENTRIES] as i64;
    let i_val = scale_product(sin_v * amp);
    let q_val = scale_product(cos_v * amp);
    let to_code = |v: i32| -> u16 { (v + DAC_MIDSCALE as i32).clamp(0, DAC_MAX as i32) as u16 };
    (to_code(i_val), to_code(q_val))
}

const REG_PHASE_LO: usize = 0;
const REG_PHASE_HI: usize = 1;
const REG_AMPLITUDE: usize = 2;
const REG_I_CODE: usize = 4;
const REG_Q_CODE: usize = 5;
const REG_ADC_BASE: usize = 6;

fn pll_map() -> RegisterMap {
    let mut regs = vec![
        RegisterDescriptor { name: "phase_lo", offset: 0, width_bits: 8, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "phase_hi", offset: 1, width_bits: 8, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "amplitude", offset: 2, width_bits: 16, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "control", offset: 4, width_bits: 16, access: Access::RW, reset_value: 0 },
        RegisterDescriptor { name: "i_code", offset: 6, width_bits: 16, access: Access::RO, reset_value: DAC_MIDSCALE },
        RegisterDescriptor { name: "q_code", offset: 8, width_bits: 16, access: Access::RO, reset_value: DAC_MIDSCALE },
    ];
    let names: [&'static str; ADC_CHANNELS] =
        ["adc0", "adc1", "adc2", "adc3", "adc4", "adc5", "adc6", "adc7"];
    for (i, name) in names.iter().enumerate() {
        regs.push(RegisterDescriptor {
            name,
            offset: 10 + 2 * i as u32,
            width_bits: 16,
            access: Access::RO,
            reset_value: 32768,
        });
    }
    RegisterMap::new(regs, 32).expect("static map")
}

pub struct PllBoard {
    regs: RegisterFile,
    luts: LutImage,
    input: PhaseAmplitude,
    adc_volts: [Real; ADC_CHANNELS],
}

impl PllBoard {
    pub fn new() -> Self {
        Self {
            regs: RegisterFile::new(pll_map()),
            luts: build_luts(),
            input: PhaseAmplitude { phase_code: 0, amplitude_code: 0 },
            adc_volts: [0.0; ADC_CHANNELS],
        }
    }

    pub fn luts(&self) -> &LutImage {
        &self.luts
    }

    pub fn input(&self) -> PhaseAmplitude {
        self.input
    }

    pub fn set_input(&mut self, input: PhaseAmplitude) {
        self.input = PhaseAmplitude::new(input.phase_code, input.amplitude_code);
        self.sync_input_registers();
    }

    /// Current DAC codes.
    pub fn iq(&self) -> (u16, u16) {
        compute_iq(self.input, &self.luts)
    }

    /// Local optical encoder input: phase wraps, amplitude saturates.
    pub fn encoder_step(&mut self, delta_phase: i32, delta_amp: i32) -> PhaseAmplitude {
        let phase = (self.input.phase_code as i64 + delta_phase as i64).rem_euclid(65536) as u16;
        let amp = (self.input.amplitude_code as i64 + delta_amp as i64).clamp(0, AMPLITUDE_MAX as i64) as u16;
        self.input = PhaseAmplitude { phase_code: phase, amplitude_code: amp };
        self.sync_input_registers();
        self.input
    }

    /// Scenario-injected voltage on one ADC channel.
    pub fn inject_adc(&mut self, channel: usize, volts: Real) -> Result<(), ChannelRangeError> {
        if channel >= ADC_CHANNELS {
            return Err(ChannelRangeError(channel));
        }
        self.adc_volts[channel] = volts;
        Ok(())
    }

    /// Bipolar 16-bit conversion of the injected voltage, midscale at 0 V.
    pub fn adc_read(&self, channel: usize) -> Result<u16, ChannelRangeError> {
        if channel >= ADC_CHANNELS {
            return Err(ChannelRangeError(channel));
        }
        Ok(offset_binary_code(self.adc_volts[channel], ADC_FULL_SCALE_V, 16) as u16)
    }

    fn sync_input_registers(&mut self) {
        self.regs.set(REG_PHASE_LO, self.input.phase_code & 0xFF);
        self.regs.set(REG_PHASE_HI, self.input.phase_code >> 8);
        self.regs.set(REG_AMPLITUDE, self.input.amplitude_code);
    }

    fn refresh_outputs(&mut self) {
        let (i, q) = self.iq();
        self.regs.set(REG_I_CODE, i);
        self.regs.set(REG_Q_CODE, q);
        for ch in 0..ADC_CHANNELS {
            self.regs.set(REG_ADC_BASE + ch, self.adc_read(ch).unwrap());
        }
    }
}

impl Default for PllBoard {
    fn default() -> Self {
        Self::new()
    }
}

impl Board for PllBoard {
    fn kind(&self) -> &'static str {
        "pll"
    }

    fn clock(&self) -> ClockRate {
        ClockRate::Mhz10
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
        self.regs.reset();
        self.input = PhaseAmplitude { phase_code: 0, amplitude_code: 0 };
        self.adc_volts = [0.0; ADC_CHANNELS];
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
            AccessReq::Read { width } => {
                self.refresh_outputs();
                self.regs.bus_read(offset, width)
            }
            AccessReq::Write { width, data } => {
                let note = self.regs.bus_write(offset, width, data)?;
                match note.index {
                    REG_PHASE_LO | REG_PHASE_HI => {
                        self.input.phase_code =
                            (self.regs.get(REG_PHASE_HI) << 8) | self.regs.get(REG_PHASE_LO);
                    }
                    REG_AMPLITUDE => {
                        let clamped = note.written.min(AMPLITUDE_MAX);
                        self.regs.set(REG_AMPLITUDE, clamped);
                        self.input.amplitude_code = clamped;
                    }
                    _ => {}
                }
                Ok(data)
            }
            AccessReq::Rmw { .. } => Err(AccessFault::Unmapped),
        }
    }
}
