//! Scenario scripts: ordered timed steps of bus cycles, frame injections,
//! fault toggles, and inline assertions.

use serde::Deserialize;

use vmesim_core::bus::AddressSpace;
use vmesim_core::DataWidth;

pub const SCRIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
pub struct Script {
    pub version: u32,
    /// Run beyond the last step, if given.
    #[serde(default)]
    pub end_time_ms: Option<f64>,
    #[serde(default, rename = "step")]
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Step {
    #[serde(default)]
    pub at_ps: Option<u64>,
    #[serde(default)]
    pub at_us: Option<f64>,
    #[serde(default)]
    pub at_ms: Option<f64>,
    #[serde(flatten)]
    pub op: StepOp,
}

impl Step {
    pub fn time_ps(&self) -> Result<u64, String> {
        match (self.at_ps, self.at_us, self.at_ms) {
            (Some(ps), None, None) => Ok(ps),
            (None, Some(us), None) if us >= 0.0 => Ok((us * 1e6).round() as u64),
            (None, None, Some(ms)) if ms >= 0.0 => Ok((ms * 1e9).round() as u64),
            (None, None, None) => Err("step has no time (at_ps / at_us / at_ms)".into()),
            _ => Err("step time must be a single non-negative field".into()),
        }
    }
}

fn default_width() -> DataWidth {
    DataWidth::D08
}

fn default_beats() -> u32 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepOp {
    Write {
        space: AddressSpace,
        addr: u32,
        #[serde(default = "default_width")]
        width: DataWidth,
        data: u16,
    },
    Read {
        space: AddressSpace,
        addr: u32,
        #[serde(default = "default_width")]
        width: DataWidth,
    },
    AssertRead {
        space: AddressSpace,
        addr: u32,
        #[serde(default = "default_width")]
        width: DataWidth,
        equals: u16,
    },
    BlockRead {
        space: AddressSpace,
        addr: u32,
        #[serde(default = "default_width")]
        width: DataWidth,
        #[serde(default = "default_beats")]
        beats: u32,
    },
    BlockWrite {
        space: AddressSpace,
        addr: u32,
        #[serde(default = "default_width")]
        width: DataWidth,
        data: Vec<u16>,
    },
    Rmw {
        space: AddressSpace,
        addr: u32,
        #[serde(default = "default_width")]
        width: DataWidth,
        mask: u16,
        set: u16,
    },
    Iack {
        level: u8,
        #[serde(default = "default_width")]
        width: DataWidth,
    },
    Irq {
        slot: u8,
        level: u8,
        vector: u16,
        #[serde(default = "default_width")]
        width: DataWidth,
    },
    Reset {
        slot: u8,
    },
    HvInterlocks {
        slot: u8,
        mask: u8,
    },
    HvLoadCurrent {
        slot: u8,
        ua: f64,
    },
    HvCommandOn {
        slot: u8,
        setpoint_kv: f64,
    },
    HvCommandOff {
        slot: u8,
    },
    MpsFrame {
        slot: u8,
        injector_ua: f64,
        stations: Vec<f64>,
    },
    /// Periodic frames starting at the step time.
    MpsFrames {
        slot: u8,
        count: u64,
        rate_hz: f64,
        injector_ua: f64,
        stations: Vec<f64>,
    },
    /// Seeded random balanced frames (injector equals the station sum).
    FuzzFrames {
        slot: u8,
        count: u64,
        rate_hz: f64,
        max_station_ua: f64,
    },
    RingSend {
        origin: u8,
        dest: u8,
        payload: u16,
        #[serde(default)]
        corrupt: bool,
    },
    RingDown {
        serial: u8,
        down: bool,
    },
    AdcInject {
        slot: u8,
        channel: usize,
        volts: f64,
    },
    PllInput {
        slot: u8,
        phase: u16,
        amplitude: u16,
    },
    PllEncoder {
        slot: u8,
        delta_phase: i32,
        delta_amp: i32,
    },
    ScamConfig {
        slot: u8,
        hall: String,
        period_ticks: u64,
        width_ticks: u64,
        #[serde(default)]
        delay_ticks: u64,
        #[serde(default = "default_enabled")]
        enabled: bool,
    },
    /// Export the pulse waveforms over a tick window as CSV.
    ScamWaveformCsv {
        slot: u8,
        from_tick: u64,
        to_tick: u64,
        path: String,
    },
    /// A scripted multi-port access burst against the dual-port memory
    /// arbiter. Per-port program order follows list order.
    DspSchedule {
        slot: u8,
        #[serde(rename = "access")]
        accesses: Vec<DspAccessSpec>,
    },
    OpticalIn {
        slot: u8,
        line: usize,
        level: bool,
    },
    AssertShutdown {
        slot: u8,
        expected: bool,
    },
    AssertHvMode {
        slot: u8,
        mode: String,
    },
    AssertHvOutputKv {
        slot: u8,
        equals: f64,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    /// Throughput measurement: alternating write/read cycles against one
    /// address, failing if the wall-clock rate falls below `min_rate_hz`.
    BenchCycles {
        space: AddressSpace,
        addr: u32,
        #[serde(default = "default_width")]
        width: DataWidth,
        count: u64,
        #[serde(default)]
        min_rate_hz: Option<f64>,
    },
}

fn default_enabled() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DspAccessSpec {
    /// "dsp_a", "dsp_b", or "vme".
    pub port: String,
    /// "read", "write", or "rmw" (mask/set test-and-set style).
    pub kind: String,
    pub offset: u32,
    #[serde(default = "default_width")]
    pub width: DataWidth,
    #[serde(default)]
    pub data: u16,
    #[serde(default)]
    pub mask: u16,
    #[serde(default)]
    pub set: u16,
    #[serde(default)]
    pub tick: u64,
}

fn default_tol() -> f64 {
    1e-9
}

pub fn parse_script(text: &str) -> Result<Script, String> {
    let script: Script = toml::from_str(text).map_err(|e| e.to_string())?;
    if script.version != SCRIPT_VERSION {
        return Err(format!("script version {} unsupported", script.version));
    }
    let mut last = 0u64;
    for (i, step) in script.steps.iter().enumerate() {
        let t = step.time_ps().map_err(|e| format!("step {}: {}", i + 1, e))?;
        if t < last {
            return Err(format!("step {} time goes backwards (steps must be sorted)", i + 1));
        }
        last = t;
    }
    Ok(script)
}
