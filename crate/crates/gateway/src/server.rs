//! TCP front end and the deterministic back half.
//!
//! Socket threads only parse bytes and forward lines; every bus access runs
//! on the simulator loop, which drains an ordered mailbox between time
//! steps. Replies are queued per session, so each session sees its replies
//! in request order regardless of what other sessions are doing.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use vmesim_core::bus::CycleOutcome;
use vmesim_core::Simulator;

use crate::bindings::{Direction, ResolvedBinding};
use crate::protocol::{format_value, parse_line, ProtocolError, Request};

pub type SessionId = u64;

/// Default monitor scan period in simulated time (1 ms).
pub const DEFAULT_POLL_PERIOD_PS: u64 = 1_000_000_000;

#[derive(Debug)]
pub enum GatewayRequest {
    Connect { session: SessionId, out: Sender<String> },
    Line { session: SessionId, line: String },
    Disconnect { session: SessionId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueMode {
    Scaled,
    Raw,
}

struct Monitor {
    pv: String,
    binding: String,
    mode: ValueMode,
    last: Option<u32>,
}

struct Session {
    out: Sender<String>,
    monitors: Vec<Monitor>,
}

/// The gateway state machine that lives on the simulator loop.
pub struct GatewayCore {
    bindings: BTreeMap<String, ResolvedBinding>,
    sessions: BTreeMap<SessionId, Session>,
}

impl GatewayCore {
    pub fn new(bindings: Vec<ResolvedBinding>) -> Self {
        Self {
            bindings: bindings.into_iter().map(|b| (b.name.clone(), b)).collect(),
            sessions: BTreeMap::new(),
        }
    }

    pub fn binding_names(&self) -> Vec<String> {
        self.bindings.keys().cloned().collect()
    }

    /// Resolve a request name, honoring the `.raw` suffix.
    fn lookup(&self, pv: &str) -> Option<(&ResolvedBinding, ValueMode)> {
        if let Some(b) = self.bindings.get(pv) {
            return Some((b, ValueMode::Scaled));
        }
        let stem = pv.strip_suffix(".raw")?;
        self.bindings.get(stem).map(|b| (b, ValueMode::Raw))
    }

    fn read_raw(sim: &mut Simulator, binding: &ResolvedBinding) -> Result<u32, ()> {
        match binding.lo {
            Some(lo) => {
                let hi = sim.read(binding.target.address(), binding.target.width).map_err(|_| ())?;
                let lo = sim.read(lo.address(), lo.width).map_err(|_| ())?;
                if hi.outcome != CycleOutcome::Dtack || lo.outcome != CycleOutcome::Dtack {
                    return Err(());
                }
                Ok(((hi.data as u32) << 8) | lo.data as u32)
            }
            None => {
                let r = sim.read(binding.target.address(), binding.target.width).map_err(|_| ())?;
                if r.outcome != CycleOutcome::Dtack {
                    return Err(());
                }
                Ok(r.data as u32)
            }
        }
    }

    fn write_raw(sim: &mut Simulator, binding: &ResolvedBinding, raw: u32) -> Result<(), ()> {
        match binding.lo {
            Some(lo) => {
                let hi = sim
                    .write(binding.target.address(), binding.target.width, (raw >> 8) as u16 & 0xFF)
                    .map_err(|_| ())?;
                let lo = sim.write(lo.address(), lo.width, raw as u16 & 0xFF).map_err(|_| ())?;
                if hi.outcome != CycleOutcome::Dtack || lo.outcome != CycleOutcome::Dtack {
                    return Err(());
                }
                Ok(())
            }
            None => {
                let r = sim
                    .write(binding.target.address(), binding.target.width, raw as u16)
                    .map_err(|_| ())?;
                if r.outcome != CycleOutcome::Dtack {
                    return Err(());
                }
                Ok(())
            }
        }
    }

    fn render(binding: &ResolvedBinding, mode: ValueMode, raw: u32) -> String {
        match mode {
            ValueMode::Raw => raw.to_string(),
            ValueMode::Scaled => format_value(binding.scale(raw)),
        }
    }

    fn execute(&mut self, sim: &mut Simulator, session: SessionId, line: &str) {
        let reply = match parse_line(line) {
            Err(e) => e.reply(),
            Ok(Request::Get(pv)) => match self.lookup(&pv) {
                None => ProtocolError::unknown_pv(&pv).reply(),
                Some((binding, mode)) => match Self::read_raw(sim, binding) {
                    Ok(raw) => format!("OK {} {}", pv, Self::render(binding, mode, raw)),
                    Err(()) => ProtocolError::bus_error(&pv).reply(),
                },
            },
            Ok(Request::Put(pv, value)) => match self.lookup(&pv) {
                None => ProtocolError::unknown_pv(&pv).reply(),
                Some((binding, mode)) => {
                    if binding.direction != Direction::ReadWrite {
                        ProtocolError::read_only(&pv).reply()
                    } else {
                        let raw = match mode {
                            ValueMode::Scaled => binding.unscale(value),
                            ValueMode::Raw => {
                                value.round().clamp(0.0, binding.raw_max() as f64) as u32
                            }
                        };
                        match Self::write_raw(sim, binding, raw) {
                            Ok(()) => "OK".to_string(),
                            Err(()) => ProtocolError::bus_error(&pv).reply(),
                        }
                    }
                }
            },
            Ok(Request::Mon(pv)) => match self.lookup(&pv) {
                None => ProtocolError::unknown_pv(&pv).reply(),
                Some((binding, mode)) => {
                    let name = binding.name.clone();
                    let last = Self::read_raw(sim, binding).ok();
                    if let Some(s) = self.sessions.get_mut(&session) {
                        s.monitors.push(Monitor { pv: pv.clone(), binding: name, mode, last });
                    }
                    "OK".to_string()
                }
            },
        };
        if let Some(s) = self.sessions.get(&session) {
            let _ = s.out.send(reply);
        }
    }

    pub fn process(&mut self, sim: &mut Simulator, req: GatewayRequest) {
        match req {
            GatewayRequest::Connect { session, out } => {
                self.sessions.insert(session, Session { out, monitors: Vec::new() });
            }
            GatewayRequest::Disconnect { session } => {
                self.sessions.remove(&session);
            }
            GatewayRequest::Line { session, line } => {
                self.execute(sim, session, &line);
                // Bus writes take effect immediately; deliver any resulting
                // monitor events before the next command.
                self.scan_monitors(sim);
            }
        }
    }

    /// Compare every monitored PV against its last seen value and emit one
    /// `EVT` per change per subscribed session.
    pub fn scan_monitors(&mut self, sim: &mut Simulator) {
        for session in self.sessions.values_mut() {
            for mon in &mut session.monitors {
                let Some(binding) = self.bindings.get(&mon.binding) else { continue };
                let Ok(raw) = Self::read_raw(sim, binding) else { continue };
                if mon.last != Some(raw) {
                    mon.last = Some(raw);
                    let _ = session
                        .out
                        .send(format!("EVT {} {}", mon.pv, Self::render(binding, mon.mode, raw)));
                }
            }
        }
    }
}

/// Accept loop plus per-session reader/writer threads.
pub struct ServerHandle {
    pub local_addr: SocketAddr,
}

pub fn spawn_listener(
    listener: TcpListener,
    tx: Sender<GatewayRequest>,
) -> std::io::Result<ServerHandle> {
    let local_addr = listener.local_addr()?;
    thread::spawn(move || {
        let mut next_session: SessionId = 0;
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            next_session += 1;
            let session = next_session;
            let _ = stream.set_nodelay(true);
            let (out_tx, out_rx) = std::sync::mpsc::channel::<String>();
            if tx.send(GatewayRequest::Connect { session, out: out_tx }).is_err() {
                break;
            }
            spawn_session(stream, session, tx.clone(), out_rx);
        }
    });
    Ok(ServerHandle { local_addr })
}

fn spawn_session(
    stream: TcpStream,
    session: SessionId,
    tx: Sender<GatewayRequest>,
    out_rx: Receiver<String>,
) {
    let reader = stream.try_clone().expect("clone session stream");
    thread::spawn(move || {
        let mut lines = BufReader::new(reader);
        let mut line = String::new();
        loop {
            line.clear();
            match lines.read_line(&mut line) {
                Ok(0) | Err(_) => break,
                Ok(_) => {
                    let trimmed = line.trim_end_matches(['\r', '\n']).to_string();
                    if tx.send(GatewayRequest::Line { session, line: trimmed }).is_err() {
                        break;
                    }
                }
            }
        }
        let _ = tx.send(GatewayRequest::Disconnect { session });
    });
    let mut writer = stream;
    thread::spawn(move || {
        for line in out_rx {
            if writer.write_all(line.as_bytes()).is_err() || writer.write_all(b"\n").is_err() {
                break;
            }
            let _ = writer.flush();
        }
    });
}

/// Drive the simulator and gateway together: drain the mailbox, advance
/// simulated time by the poll period, scan monitors, repeat. Returns when
/// `stop` is set or every request sender is gone.
pub fn service_loop(
    sim: &mut Simulator,
    core: &mut GatewayCore,
    rx: &Receiver<GatewayRequest>,
    poll_period_ps: u64,
    stop: &Arc<AtomicBool>,
) {
    while !stop.load(Ordering::Relaxed) {
        match rx.recv_timeout(Duration::from_millis(1)) {
            Ok(req) => {
                core.process(sim, req);
                while let Ok(more) = rx.try_recv() {
                    core.process(sim, more);
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        sim.advance_by(poll_period_ps);
        core.scan_monitors(sim);
    }
}
