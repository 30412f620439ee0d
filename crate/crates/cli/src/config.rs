//! Crate configuration: which boards sit in which slots, at which base
//! addresses, with which parameters, plus the ring topology and the PV
//! bindings path. Validation reports every problem, not just the first.

use serde::Deserialize;

use vmesim_core::boards::{
    BoardModel, DspBoard, HvBoard, HvConfig, InterfaceWidth, MpsBoard, MpsConfig, PllBoard,
    RamBoard, RingBoard, RingNetwork, ScamBoard, WindowId,
};
use vmesim_core::bus::AddressSpace;
use vmesim_core::trace::TraceLog;
use vmesim_core::{Address, Simulator};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
pub struct CrateConfig {
    pub version: u32,
    #[serde(default, rename = "board")]
    pub boards: Vec<BoardEntry>,
    #[serde(default)]
    pub ring: Option<RingTopology>,
    #[serde(default)]
    pub bindings: Option<BindingsRef>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct BoardEntry {
    pub slot: u8,
    pub kind: String,
    pub space: AddressSpace,
    pub base: u32,
    #[serde(default)]
    pub window: Option<u32>,
    #[serde(default)]
    pub latency_ticks: Option<u64>,
    #[serde(default)]
    pub params: toml::Table,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RingTopology {
    pub order: Vec<u8>,
    pub hop_delay_ticks: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct BindingsRef {
    pub path: String,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct HvParams {
    ramp_rate_kv_per_s: Option<f64>,
    overcurrent_limit_ua: Option<f64>,
    bleed_time_s: Option<f64>,
    rearm_threshold_kv: Option<f64>,
    bleed_tau_s: Option<f64>,
    vf_full_scale_hz: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RingParams {
    serial: u8,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DspParams {
    mem_base: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct MpsParams {
    buffer_base: u32,
    station_count: Option<usize>,
    injector_limit_ua: Option<f64>,
    station_limits_ua: Option<Vec<f64>>,
    integrated_limit_uas: Option<f64>,
    tau_low_loss_s: Option<f64>,
    tau_high_loss_s: Option<f64>,
    loss_knee_ua: Option<f64>,
    dac_full_scale_ua: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RamParams {
    len: u32,
    #[serde(default)]
    iface: Option<String>,
}

fn default_window(kind: &str) -> u32 {
    match kind {
        "scam" => 8,
        "hv" => 16,
        "ring30hz" | "ring" => 16,
        "dsp" => 8,
        "mps" => 32,
        "pll" => 32,
        _ => 0,
    }
}

pub fn parse_config(text: &str) -> Result<CrateConfig, String> {
    let config: CrateConfig = toml::from_str(text).map_err(|e| e.to_string())?;
    if config.version != CONFIG_VERSION {
        return Err(format!("config version {} unsupported", config.version));
    }
    Ok(config)
}

fn params<'de, T: Deserialize<'de>>(entry: &BoardEntry, errors: &mut Vec<String>) -> Option<T> {
    match entry.params.clone().try_into() {
        Ok(p) => Some(p),
        Err(e) => {
            errors.push(format!("slot {} ({}): bad params: {}", entry.slot, entry.kind, e));
            None
        }
    }
}

fn build_board(entry: &BoardEntry, errors: &mut Vec<String>) -> Option<(BoardModel, Option<u32>)> {
    match entry.kind.as_str() {
        "scam" => Some((BoardModel::Scam(ScamBoard::new()), None)),
        "hv" => {
            let p: HvParams = params(entry, errors)?;
            let d = HvConfig::default();
            let config = HvConfig {
                ramp_rate_kv_per_s: p.ramp_rate_kv_per_s.unwrap_or(d.ramp_rate_kv_per_s),
                overcurrent_limit_ua: p.overcurrent_limit_ua.unwrap_or(d.overcurrent_limit_ua),
                bleed_time_s: p.bleed_time_s.unwrap_or(d.bleed_time_s),
                rearm_threshold_kv: p.rearm_threshold_kv.unwrap_or(d.rearm_threshold_kv),
                bleed_tau_s: p.bleed_tau_s.unwrap_or(d.bleed_tau_s),
                vf_full_scale_hz: p.vf_full_scale_hz.unwrap_or(d.vf_full_scale_hz),
            };
            if config.rearm_threshold_kv >= 100.0 {
                errors.push(format!("slot {}: rearm threshold must be below 100 kV", entry.slot));
                return None;
            }
            Some((BoardModel::Hv(HvBoard::new(config)), None))
        }
        "ring30hz" | "ring" => {
            let p: RingParams = params(entry, errors)?;
            match RingBoard::new(p.serial) {
                Ok(b) => Some((BoardModel::Ring(b), None)),
                Err(e) => {
                    errors.push(format!("slot {}: {}", entry.slot, e));
                    None
                }
            }
        }
        "dsp" => {
            let p: DspParams = params(entry, errors)?;
            Some((BoardModel::Dsp(DspBoard::new()), Some(p.mem_base)))
        }
        "mps" => {
            let p: MpsParams = params(entry, errors)?;
            let d = MpsConfig::default();
            let config = MpsConfig {
                station_count: p.station_count.unwrap_or(d.station_count),
                injector_limit_ua: p.injector_limit_ua.unwrap_or(d.injector_limit_ua),
                station_limits_ua: {
                    let mut limits = p.station_limits_ua.unwrap_or_else(|| d.station_limits_ua.clone());
                    while limits.len() < 7 {
                        limits.push(60.0);
                    }
                    limits
                },
                integrated_limit_uas: p.integrated_limit_uas.unwrap_or(d.integrated_limit_uas),
                tau_low_loss_s: p.tau_low_loss_s.unwrap_or(d.tau_low_loss_s),
                tau_high_loss_s: p.tau_high_loss_s.unwrap_or(d.tau_high_loss_s),
                loss_knee_ua: p.loss_knee_ua.unwrap_or(d.loss_knee_ua),
                dac_full_scale_ua: p.dac_full_scale_ua.unwrap_or(d.dac_full_scale_ua),
            };
            match MpsBoard::new(config) {
                Ok(b) => Some((BoardModel::Mps(b), Some(p.buffer_base))),
                Err(e) => {
                    errors.push(format!("slot {}: {}", entry.slot, e));
                    None
                }
            }
        }
        "pll" => Some((BoardModel::Pll(PllBoard::new()), None)),
        "ram" => {
            let p: RamParams = params(entry, errors)?;
            let iface = match p.iface.as_deref() {
                None | Some("d16") => InterfaceWidth::Bits16,
                Some("d08") => InterfaceWidth::Bits8,
                Some(other) => {
                    errors.push(format!("slot {}: unknown iface {}", entry.slot, other));
                    return None;
                }
            };
            Some((BoardModel::Ram(RamBoard::new(p.len, iface)), None))
        }
        other => {
            errors.push(format!("slot {}: unknown board kind {:?}", entry.slot, other));
            None
        }
    }
}

/// Build the simulator, collecting every validation problem.
pub fn build_simulator(config: &CrateConfig, trace: TraceLog) -> Result<Simulator, Vec<String>> {
    let mut sim = Simulator::new(trace);
    let mut errors = Vec::new();
    for entry in &config.boards {
        let Some((board, extra_base)) = build_board(entry, &mut errors) else { continue };
        let window = entry.window.unwrap_or_else(|| default_window(&entry.kind));
        let base = Address { space: entry.space, value: entry.base };
        match sim.attach(entry.slot, board, base, window) {
            Ok(_) => {
                if let Some(t) = entry.latency_ticks {
                    sim.set_latency(entry.slot, t);
                }
                if let Some(mem_base) = extra_base {
                    let len = match entry.kind.as_str() {
                        "dsp" => 0x20000,
                        _ => 0x800000,
                    };
                    if let Err(e) =
                        sim.map_window(entry.slot, WindowId::Memory, Address::a24(mem_base), len)
                    {
                        errors.push(format!("slot {} ({}): memory window: {}", entry.slot, entry.kind, e));
                    }
                }
            }
            Err(e) => errors.push(format!("slot {} ({}): {}", entry.slot, entry.kind, e)),
        }
    }
    if let Some(ring) = &config.ring {
        match RingNetwork::new(ring.order.clone(), ring.hop_delay_ticks) {
            Ok(net) => sim.set_ring(net),
            Err(e) => errors.push(format!("ring: {}", e)),
        }
    }
    if errors.is_empty() {
        Ok(sim)
    } else {
        Err(errors)
    }
}
