//! Scenario execution: drives the simulator through the script's timed
//! steps, records assertion failures, and writes the trace and dump files.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::mpsc::Receiver;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vmesim_core::boards::{CurrentFrame, Hall, PhaseAmplitude, TripDecision};
use vmesim_core::boards::ChannelConfig;
use vmesim_core::bus::{BusCycle, CycleOutcome, InterruptRequest};
use vmesim_core::sim::BlockDirection;
use vmesim_core::trace::TraceLog;
use vmesim_core::{Address, Simulator};
use vmesim_gateway::{GatewayCore, GatewayRequest};

use crate::config::CrateConfig;
use crate::script::{Script, StepOp};

/// 40 MHz sample clock: picoseconds per tick.
const MPS_TICK_PS: u64 = 25_000;

pub struct GatewaySetup {
    pub port: u16,
    pub bindings_path: PathBuf,
    /// Keep serving this long (wall time) after the script completes.
    pub linger_ms: u64,
}

pub struct RunOptions {
    pub seed: u64,
    pub trace_path: PathBuf,
    pub state_dump_path: Option<PathBuf>,
    pub mps_dump_path: Option<PathBuf>,
    pub dsp_dump_path: Option<PathBuf>,
    pub mcc_path: Option<PathBuf>,
    pub gateway: Option<GatewaySetup>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub failures: Vec<String>,
    pub steps_executed: usize,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

struct GatewayRuntime {
    core: GatewayCore,
    rx: Receiver<GatewayRequest>,
    poll_ps: u64,
}

struct Runner {
    sim: Simulator,
    gateway: Option<GatewayRuntime>,
    rng: ChaCha8Rng,
    failures: Vec<String>,
    mcc: Option<std::io::BufWriter<fs::File>>,
    mps_slots: Vec<u8>,
    dsp_slots: Vec<u8>,
}

pub fn run(config: &CrateConfig, script: &Script, opts: &RunOptions) -> Result<RunOutcome> {
    let trace = TraceLog::file(&opts.trace_path)
        .with_context(|| format!("creating trace file {}", opts.trace_path.display()))?;
    let sim = crate::config::build_simulator(config, trace)
        .map_err(|errors| anyhow!("invalid config:\n  {}", errors.join("\n  ")))?;

    let mut runner = Runner {
        gateway: None,
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        failures: Vec::new(),
        mcc: match &opts.mcc_path {
            Some(p) => Some(std::io::BufWriter::new(
                fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => None,
        },
        mps_slots: config.boards.iter().filter(|b| b.kind == "mps").map(|b| b.slot).collect(),
        dsp_slots: config.boards.iter().filter(|b| b.kind == "dsp").map(|b| b.slot).collect(),
        sim,
    };

    if let Some(setup) = &opts.gateway {
        runner.start_gateway(config, setup)?;
    }

    let mut steps_executed = 0;
    for (index, step) in script.steps.iter().enumerate() {
        let t = step.time_ps().map_err(|e| anyhow!("step {}: {}", index + 1, e))?;
        runner.advance_to(t);
        runner
            .apply(index + 1, &step.op)
            .with_context(|| format!("step {} at {} ps", index + 1, t))?;
        steps_executed += 1;
    }
    if let Some(end_ms) = script.end_time_ms {
        let end_ps = (end_ms * 1e9).round() as u64;
        if end_ps > runner.sim.now_ps() {
            runner.advance_to(end_ps);
        }
    }
    runner.sim.sync_all_boards();

    if let Some(setup) = &opts.gateway {
        runner.linger(setup.linger_ms);
    }

    if let Some(path) = &opts.mps_dump_path {
        runner.dump_mps(path)?;
    }
    if let Some(path) = &opts.dsp_dump_path {
        runner.dump_dsp(path)?;
    }
    if let Some(path) = &opts.state_dump_path {
        let state = runner.state_dump();
        fs::write(path, serde_json::to_string_pretty(&state)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(mcc) = &mut runner.mcc {
        mcc.flush()?;
    }
    runner.sim.trace_mut().flush()?;

    Ok(RunOutcome { failures: runner.failures, steps_executed })
}

impl Runner {
    fn start_gateway(&mut self, config: &CrateConfig, setup: &GatewaySetup) -> Result<()> {
        let text = fs::read_to_string(&setup.bindings_path)
            .with_context(|| format!("reading bindings {}", setup.bindings_path.display()))?;
        let file = vmesim_gateway::parse_bindings(&text).map_err(|e| anyhow!("{e}"))?;
        let resolved = vmesim_gateway::resolve(&file, &self.sim.manifest())
            .map_err(|errors| {
                anyhow!(
                    "bindings invalid:\n  {}",
                    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n  ")
                )
            })?;
        let listener = std::net::TcpListener::bind(("0.0.0.0", setup.port))
            .with_context(|| format!("binding gateway port {}", setup.port))?;
        let (tx, rx) = std::sync::mpsc::channel();
        let handle = vmesim_gateway::spawn_listener(listener, tx)?;
        eprintln!("gateway listening on {}", handle.local_addr);
        let _ = config;
        self.gateway = Some(GatewayRuntime {
            core: GatewayCore::new(resolved),
            rx,
            poll_ps: vmesim_gateway::DEFAULT_POLL_PERIOD_PS,
        });
        Ok(())
    }

    /// Advance simulated time; with a gateway attached, drain its mailbox
    /// and scan monitors at every poll period along the way.
    fn advance_to(&mut self, t_ps: u64) {
        match &mut self.gateway {
            None => self.sim.advance_to(t_ps),
            Some(gw) => {
                let mut now = self.sim.now_ps();
                while now < t_ps {
                    let next = (now + gw.poll_ps).min(t_ps);
                    self.sim.advance_to(next);
                    while let Ok(req) = gw.rx.try_recv() {
                        gw.core.process(&mut self.sim, req);
                    }
                    gw.core.scan_monitors(&mut self.sim);
                    now = next;
                }
            }
        }
    }

    /// Keep serving the gateway for `ms` of wall time after the script.
    fn linger(&mut self, ms: u64) {
        let Some(gw) = &mut self.gateway else { return };
        let deadline = std::time::Instant::now() + Duration::from_millis(ms);
        while std::time::Instant::now() < deadline {
            if let Ok(req) = gw.rx.recv_timeout(Duration::from_millis(1)) {
                gw.core.process(&mut self.sim, req);
                while let Ok(more) = gw.rx.try_recv() {
                    gw.core.process(&mut self.sim, more);
                }
            }
            self.sim.advance_by(gw.poll_ps);
            gw.core.scan_monitors(&mut self.sim);
        }
    }

    fn fail(&mut self, index: usize, message: String) {
        self.failures.push(format!("step {} @ {} ps: {}", index, self.sim.now_ps(), message));
    }

    fn feed_frame(&mut self, slot: u8, injector_ua: f64, stations: &[f64]) -> Result<TripDecision> {
        let ts = self.sim.now_ps() / MPS_TICK_PS;
        let frame =
            CurrentFrame { timestamp_ticks: ts, injector_ua, station_ua: stations.to_vec() };
        let decision = self
            .sim
            .with_board_ctx(slot, |b, ctx| {
                b.as_mps_mut()
                    .ok_or_else(|| anyhow!("slot {slot} is not an mps board"))
                    .and_then(|m| m.process_frame(&frame, ctx).map_err(|e| anyhow!("{e}")))
            })
            .ok_or_else(|| anyhow!("no board in slot {slot}"))??;
        if let Some(mcc) = &mut self.mcc {
            writeln!(
                mcc,
                "{} {} {} {}",
                self.sim.now_ps(),
                decision.instantaneous_ua,
                decision.integrated_uas,
                decision.shutdown as u8
            )?;
        }
        Ok(decision)
    }

    fn apply(&mut self, index: usize, op: &StepOp) -> Result<()> {
        match op {
            StepOp::Write { space, addr, width, data } => {
                let addr = Address { space: *space, value: *addr };
                let r = self.sim.write(addr, *width, *data).map_err(|e| anyhow!("{e}"))?;
                if r.outcome != CycleOutcome::Dtack {
                    self.fail(index, format!("write {addr:?} bus error"));
                }
            }
            StepOp::Read { space, addr, width } => {
                let addr = Address { space: *space, value: *addr };
                self.sim.read(addr, *width).map_err(|e| anyhow!("{e}"))?;
            }
            StepOp::AssertRead { space, addr, width, equals } => {
                let addr = Address { space: *space, value: *addr };
                let r = self.sim.read(addr, *width).map_err(|e| anyhow!("{e}"))?;
                if r.outcome != CycleOutcome::Dtack {
                    self.fail(index, format!("assert_read {addr:?}: bus error"));
                } else if r.data != *equals {
                    self.fail(
                        index,
                        format!("assert_read {addr:?}: got {:#06x}, want {:#06x}", r.data, equals),
                    );
                }
            }
            StepOp::BlockRead { space, addr, width, beats } => {
                let addr = Address { space: *space, value: *addr };
                let (_, r) = self
                    .sim
                    .block_transfer(addr, *beats, *width, BlockDirection::ReadOut, &[])
                    .map_err(|e| anyhow!("{e}"))?;
                if r.outcome != CycleOutcome::Dtack {
                    self.fail(index, format!("block_read {addr:?} bus error"));
                }
            }
            StepOp::BlockWrite { space, addr, width, data } => {
                let addr = Address { space: *space, value: *addr };
                let (_, r) = self
                    .sim
                    .block_transfer(addr, data.len() as u32, *width, BlockDirection::WriteIn, data)
                    .map_err(|e| anyhow!("{e}"))?;
                if r.outcome != CycleOutcome::Dtack {
                    self.fail(index, format!("block_write {addr:?} bus error"));
                }
            }
            StepOp::Rmw { space, addr, width, mask, set } => {
                let addr = Address { space: *space, value: *addr };
                let r = self
                    .sim
                    .read_modify_write(addr, *width, *mask, *set)
                    .map_err(|e| anyhow!("{e}"))?;
                if r.outcome != CycleOutcome::Dtack {
                    self.fail(index, format!("rmw {addr:?} bus error"));
                }
            }
            StepOp::Iack { level, width } => {
                self.sim
                    .perform_cycle(&BusCycle::iack(*level, *width))
                    .map_err(|e| anyhow!("{e}"))?;
            }
            StepOp::Irq { slot, level, vector, width } => {
                self.sim
                    .post_interrupt(InterruptRequest {
                        level: *level,
                        vector: *vector,
                        slot: *slot,
                        status_width: *width,
                    })
                    .map_err(|e| anyhow!("{e}"))?;
            }
            StepOp::Reset { slot } => {
                self.sim.reset_board(*slot);
            }
            StepOp::HvInterlocks { slot, mask } => {
                self.with_hv(*slot, |hv, ctx| hv.set_interlocks(*mask, ctx))?;
            }
            StepOp::HvLoadCurrent { slot, ua } => {
                self.with_hv(*slot, |hv, ctx| hv.set_load_current(*ua, ctx))?;
            }
            StepOp::HvCommandOn { slot, setpoint_kv } => {
                let r = self.with_hv(*slot, |hv, ctx| hv.command_on(*setpoint_kv, ctx))?;
                if let Err(reject) = r {
                    self.fail(index, format!("hv_command_on rejected: {reject:?}"));
                }
            }
            StepOp::HvCommandOff { slot } => {
                self.with_hv(*slot, |hv, ctx| hv.command_off(ctx))?;
            }
            StepOp::MpsFrame { slot, injector_ua, stations } => {
                self.feed_frame(*slot, *injector_ua, stations)?;
            }
            StepOp::MpsFrames { slot, count, rate_hz, injector_ua, stations } => {
                let period_ps = (1e12 / rate_hz).round() as u64;
                for _ in 0..*count {
                    self.advance_to(self.sim.now_ps() + period_ps);
                    self.feed_frame(*slot, *injector_ua, stations)?;
                }
            }
            StepOp::FuzzFrames { slot, count, rate_hz, max_station_ua } => {
                let stations = self
                    .sim
                    .board(*slot)
                    .and_then(|b| b.as_mps())
                    .map(|m| m.config().station_count)
                    .ok_or_else(|| anyhow!("slot {slot} is not an mps board"))?;
                let period_ps = (1e12 / rate_hz).round() as u64;
                let quarter_units = (max_station_ua * 4.0) as u32;
                for _ in 0..*count {
                    self.advance_to(self.sim.now_ps() + period_ps);
                    // Dyadic grid keeps injector == sum exact in binary.
                    let values: Vec<f64> = (0..stations)
                        .map(|_| self.rng.gen_range(0..=quarter_units) as f64 * 0.25)
                        .collect();
                    let injector = values.iter().sum();
                    self.feed_frame(*slot, injector, &values)?;
                }
            }
            StepOp::RingSend { origin, dest, payload, corrupt } => {
                self.sim
                    .ring_send(*origin, *dest, *payload, *corrupt)
                    .map_err(|e| anyhow!("{e}"))?;
            }
            StepOp::RingDown { serial, down } => {
                self.sim.set_ring_down(*serial, *down);
            }
            StepOp::AdcInject { slot, channel, volts } => {
                self.sim
                    .with_board_ctx(*slot, |b, _| {
                        b.as_pll_mut()
                            .ok_or_else(|| anyhow!("slot {slot} is not a pll board"))
                            .and_then(|p| p.inject_adc(*channel, *volts).map_err(|e| anyhow!("{e}")))
                    })
                    .ok_or_else(|| anyhow!("no board in slot {slot}"))??;
            }
            StepOp::PllInput { slot, phase, amplitude } => {
                self.sim
                    .with_board_ctx(*slot, |b, _| {
                        b.as_pll_mut()
                            .ok_or_else(|| anyhow!("slot {slot} is not a pll board"))
                            .map(|p| p.set_input(PhaseAmplitude::new(*phase, *amplitude)))
                    })
                    .ok_or_else(|| anyhow!("no board in slot {slot}"))??;
            }
            StepOp::PllEncoder { slot, delta_phase, delta_amp } => {
                self.sim
                    .with_board_ctx(*slot, |b, _| {
                        b.as_pll_mut()
                            .ok_or_else(|| anyhow!("slot {slot} is not a pll board"))
                            .map(|p| p.encoder_step(*delta_phase, *delta_amp))
                    })
                    .ok_or_else(|| anyhow!("no board in slot {slot}"))??;
            }
            StepOp::ScamConfig { slot, hall, period_ticks, width_ticks, delay_ticks, enabled } => {
                let hall = match hall.as_str() {
                    "a" | "A" => Hall::A,
                    "b" | "B" => Hall::B,
                    "c" | "C" => Hall::C,
                    other => bail!("unknown hall {other:?}"),
                };
                let cfg = ChannelConfig {
                    period_ticks: *period_ticks,
                    width_ticks: *width_ticks,
                    delay_ticks: *delay_ticks,
                    enabled: *enabled,
                };
                self.sim
                    .with_board_ctx(*slot, |b, _| {
                        b.as_scam_mut()
                            .ok_or_else(|| anyhow!("slot {slot} is not a scam board"))
                            .and_then(|s| s.configure_channel(hall, cfg).map_err(|e| anyhow!("{e}")))
                    })
                    .ok_or_else(|| anyhow!("no board in slot {slot}"))??;
            }
            StepOp::ScamWaveformCsv { slot, from_tick, to_tick, path } => {
                let csv = self
                    .sim
                    .board(*slot)
                    .and_then(|b| match b {
                        vmesim_core::boards::BoardModel::Scam(s) => {
                            Some(s.waveform_csv(*from_tick, *to_tick))
                        }
                        _ => None,
                    })
                    .ok_or_else(|| anyhow!("slot {slot} is not a scam board"))?;
                fs::write(path, csv).with_context(|| format!("writing {path}"))?;
            }
            StepOp::DspSchedule { slot, accesses } => {
                use vmesim_core::boards::{MemAccess, MemOp, PortId};
                let mut schedule = Vec::with_capacity(accesses.len());
                for a in accesses {
                    let port = match a.port.as_str() {
                        "dsp_a" | "a" => PortId::DspA,
                        "dsp_b" | "b" => PortId::DspB,
                        "vme" => PortId::Vme,
                        other => bail!("unknown dsp port {other:?}"),
                    };
                    let op = match a.kind.as_str() {
                        "read" => MemOp::Read,
                        "write" => MemOp::Write(a.data),
                        "rmw" => MemOp::Rmw { mask: a.mask, set: a.set },
                        other => bail!("unknown dsp access kind {other:?}"),
                    };
                    schedule.push(MemAccess {
                        port,
                        op,
                        offset: a.offset,
                        width: a.width,
                        issue_tick: a.tick,
                    });
                }
                self.sim
                    .with_board_ctx(*slot, |b, _| {
                        b.as_dsp_mut()
                            .ok_or_else(|| anyhow!("slot {slot} is not a dsp board"))
                            .and_then(|d| d.execute_schedule(&schedule).map_err(|e| anyhow!("{e}")))
                    })
                    .ok_or_else(|| anyhow!("no board in slot {slot}"))??;
            }
            StepOp::OpticalIn { slot, line, level } => {
                self.sim
                    .with_board_ctx(*slot, |b, _| {
                        b.as_scam_mut()
                            .ok_or_else(|| anyhow!("slot {slot} is not a scam board"))
                            .map(|s| s.set_optical_input(*line, *level))
                    })
                    .ok_or_else(|| anyhow!("no board in slot {slot}"))??;
            }
            StepOp::AssertShutdown { slot, expected } => {
                let actual = self
                    .sim
                    .board(*slot)
                    .and_then(|b| b.as_mps())
                    .map(|m| m.shutdown())
                    .ok_or_else(|| anyhow!("slot {slot} is not an mps board"))?;
                if actual != *expected {
                    self.fail(index, format!("assert_shutdown: got {actual}, want {expected}"));
                }
            }
            StepOp::AssertHvMode { slot, mode } => {
                self.sim.sync_all_boards();
                let actual = self
                    .sim
                    .board(*slot)
                    .and_then(|b| b.as_hv())
                    .map(|h| format!("{:?}", h.mode()).to_lowercase())
                    .ok_or_else(|| anyhow!("slot {slot} is not an hv board"))?;
                if &actual != mode {
                    self.fail(index, format!("assert_hv_mode: got {actual}, want {mode}"));
                }
            }
            StepOp::BenchCycles { space, addr, width, count, min_rate_hz } => {
                let addr = Address { space: *space, value: *addr };
                let started = std::time::Instant::now();
                for k in 0..*count {
                    let data = (k & width.mask() as u64) as u16;
                    let w = self.sim.write(addr, *width, data).map_err(|e| anyhow!("{e}"))?;
                    let r = self.sim.read(addr, *width).map_err(|e| anyhow!("{e}"))?;
                    if w.outcome != CycleOutcome::Dtack || r.outcome != CycleOutcome::Dtack {
                        bail!("bench target {addr:?} bus error");
                    }
                }
                let elapsed = started.elapsed().as_secs_f64();
                let rate = (*count * 2) as f64 / elapsed;
                eprintln!("bench: {} cycles in {:.3} s = {:.0} cycles/s", count * 2, elapsed, rate);
                if let Some(min) = min_rate_hz {
                    if rate < *min {
                        self.fail(index, format!("throughput {rate:.0} < {min:.0} cycles/s"));
                    }
                }
            }
            StepOp::AssertHvOutputKv { slot, equals, tol } => {
                self.sim.sync_all_boards();
                let actual = self
                    .sim
                    .board(*slot)
                    .and_then(|b| b.as_hv())
                    .map(|h| h.output_kv())
                    .ok_or_else(|| anyhow!("slot {slot} is not an hv board"))?;
                if (actual - equals).abs() > *tol {
                    self.fail(index, format!("assert_hv_output_kv: got {actual}, want {equals}"));
                }
            }
        }
        Ok(())
    }

    fn with_hv<R>(
        &mut self,
        slot: u8,
        f: impl FnOnce(&mut vmesim_core::boards::HvBoard, &mut vmesim_core::boards::BoardCtx) -> R,
    ) -> Result<R> {
        self.sim
            .with_board_ctx(slot, |b, ctx| {
                b.as_hv_mut().map(|hv| f(hv, ctx)).ok_or_else(|| anyhow!("slot {slot} is not an hv board"))
            })
            .ok_or_else(|| anyhow!("no board in slot {slot}"))?
    }

    fn dump_mps(&mut self, path: &PathBuf) -> Result<()> {
        let slot = *self.mps_slots.first().ok_or_else(|| anyhow!("no mps board configured"))?;
        let board = self
            .sim
            .board(slot)
            .and_then(|b| b.as_mps())
            .ok_or_else(|| anyhow!("slot {slot} is not an mps board"))?;
        let mut out = std::io::BufWriter::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        );
        vmesim_core::boards::mps::write_dump(&mut out, board.buffer(), board.oldest_pointer())?;
        out.flush()?;
        Ok(())
    }

    fn dump_dsp(&mut self, path: &PathBuf) -> Result<()> {
        let slot = *self.dsp_slots.first().ok_or_else(|| anyhow!("no dsp board configured"))?;
        let board = self.sim.board_mut(slot).and_then(|b| b.as_dsp_mut()).unwrap();
        fs::write(path, board.memory()).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    fn state_dump(&mut self) -> serde_json::Value {
        let mut boards = Vec::new();
        for slot in self.sim.occupied_slots() {
            let Some(board) = self.sim.board(slot) else { continue };
            use vmesim_core::boards::Board;
            let mut entry = serde_json::json!({
                "slot": slot,
                "kind": board.kind(),
            });
            match board {
                vmesim_core::boards::BoardModel::Hv(hv) => {
                    entry["mode"] = serde_json::json!(format!("{:?}", hv.mode()));
                    entry["output_kv"] = serde_json::json!(hv.output_kv());
                    entry["setpoint_kv"] = serde_json::json!(hv.setpoint_kv());
                    entry["interlocks"] = serde_json::json!(hv.interlocks());
                    entry["relays"] = serde_json::json!(hv.relay_state());
                }
                vmesim_core::boards::BoardModel::Mps(m) => {
                    entry["shutdown"] = serde_json::json!(m.shutdown());
                    entry["reason"] = serde_json::json!(format!("{:?}", m.reason()));
                    entry["integrated_uas"] = serde_json::json!(m.integrated_uas());
                    entry["records"] = serde_json::json!(m.records_stored());
                    entry["pointer"] = serde_json::json!(m.oldest_pointer());
                }
                vmesim_core::boards::BoardModel::Ring(r) => {
                    entry["serial"] = serde_json::json!(r.serial());
                    entry["payload"] = serde_json::json!(r.last_payload());
                    entry["errors"] = serde_json::json!(r.error_count());
                    entry["down"] = serde_json::json!(r.is_down());
                }
                vmesim_core::boards::BoardModel::Pll(p) => {
                    let (i, q) = p.iq();
                    entry["phase"] = serde_json::json!(p.input().phase_code);
                    entry["amplitude"] = serde_json::json!(p.input().amplitude_code);
                    entry["i_code"] = serde_json::json!(i);
                    entry["q_code"] = serde_json::json!(q);
                }
                vmesim_core::boards::BoardModel::Dsp(d) => {
                    entry["next_grant"] = serde_json::json!(format!("{:?}", d.next_grant_port()));
                }
                _ => {}
            }
            boards.push(entry);
        }
        serde_json::json!({
            "time_ps": self.sim.now_ps(),
            "boards": boards,
        })
    }
}
