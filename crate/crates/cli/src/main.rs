use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use vmesim::runner::{GatewaySetup, RunOptions};

#[derive(Parser)]
#[command(name = "vmesim", about = "Deterministic VME crate simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario script against a crate configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        script: PathBuf,
        /// Trace output path (line-delimited event log).
        #[arg(long, default_value = "vmesim.trace")]
        trace: PathBuf,
        /// Seed for scenario-level randomness (fuzz generators only).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Serve the PV gateway on this TCP port during the run
        /// (falls back to VMESIM_GATEWAY_PORT).
        #[arg(long)]
        gateway_port: Option<u16>,
        /// PV bindings file (defaults to the path named in the config).
        #[arg(long)]
        bindings: Option<PathBuf>,
        /// Keep the gateway serving this long (wall ms) after the script.
        #[arg(long, default_value_t = 0)]
        linger_ms: u64,
        /// Write the comparator history buffer dump here at run end.
        #[arg(long)]
        dump_mps: Option<PathBuf>,
        /// Write the raw 128 KiB dual-port memory image here at run end.
        #[arg(long)]
        dump_dsp: Option<PathBuf>,
        /// Write a JSON final-state summary here at run end.
        #[arg(long)]
        state_dump: Option<PathBuf>,
        /// Write the machine-control-center loss stream here.
        #[arg(long)]
        mcc: Option<PathBuf>,
    },
    /// Check a configuration file and report every problem found.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Decode a history-buffer dump to CSV (stdout or --out).
    Replay {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the synthesis lookup-table flash image.
    Luts {
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit the register manifest for a configuration as JSON.
    Manifest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf) -> Result<vmesim::CrateConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    vmesim::parse_config(&text).map_err(|e| anyhow!("{}: {}", path.display(), e))
}

fn cmd_run(
    config: PathBuf,
    script: PathBuf,
    trace: PathBuf,
    seed: u64,
    gateway_port: Option<u16>,
    bindings: Option<PathBuf>,
    linger_ms: u64,
    dump_mps: Option<PathBuf>,
    dump_dsp: Option<PathBuf>,
    state_dump: Option<PathBuf>,
    mcc: Option<PathBuf>,
) -> Result<bool> {
    let cfg = load_config(&config)?;
    let script_text =
        fs::read_to_string(&script).with_context(|| format!("reading {}", script.display()))?;
    let script = vmesim::parse_script(&script_text).map_err(|e| anyhow!("{e}"))?;

    let port = gateway_port.or_else(|| {
        std::env::var("VMESIM_GATEWAY_PORT").ok().and_then(|v| v.parse().ok())
    });
    let gateway = match port {
        None => None,
        Some(port) => {
            let path = bindings
                .clone()
                .or_else(|| {
                    cfg.bindings.as_ref().map(|b| {
                        // Paths in the config are relative to the config file.
                        config.parent().unwrap_or(std::path::Path::new(".")).join(&b.path)
                    })
                })
                .ok_or_else(|| anyhow!("gateway requested but no bindings file given"))?;
            Some(GatewaySetup { port, bindings_path: path, linger_ms })
        }
    };

    let opts = RunOptions {
        seed,
        trace_path: trace,
        state_dump_path: state_dump,
        mps_dump_path: dump_mps,
        dsp_dump_path: dump_dsp,
        mcc_path: mcc,
        gateway,
    };
    let outcome = vmesim::run(&cfg, &script, &opts)?;
    if outcome.passed() {
        eprintln!("run ok: {} steps", outcome.steps_executed);
        Ok(true)
    } else {
        eprintln!("run failed: {}", outcome.failures[0]);
        for f in &outcome.failures[1..] {
            eprintln!("            {f}");
        }
        Ok(false)
    }
}

fn real_main() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            script,
            trace,
            seed,
            gateway_port,
            bindings,
            linger_ms,
            dump_mps,
            dump_dsp,
            state_dump,
            mcc,
        } => cmd_run(
            config,
            script,
            trace,
            seed,
            gateway_port,
            bindings,
            linger_ms,
            dump_mps,
            dump_dsp,
            state_dump,
            mcc,
        ),
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            match vmesim::build_simulator(&cfg, vmesim_core::trace::TraceLog::null()) {
                Ok(sim) => {
                    eprintln!("ok: {} boards attached", sim.occupied_slots().len());
                    Ok(true)
                }
                Err(errors) => {
                    for e in &errors {
                        eprintln!("error: {e}");
                    }
                    Ok(false)
                }
            }
        }
        Command::Replay { dump, out } => {
            let bytes =
                fs::read(&dump).with_context(|| format!("reading {}", dump.display()))?;
            let csv = vmesim::replay_to_csv(&bytes).map_err(|e| anyhow!("{e}"))?;
            match out {
                Some(path) => fs::write(&path, csv)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
            Ok(true)
        }
        Command::Luts { out } => {
            let image = vmesim_core::boards::pll::build_luts().to_flash_image();
            fs::write(&out, image).with_context(|| format!("writing {}", out.display()))?;
            Ok(true)
        }
        Command::Manifest { config, out } => {
            let cfg = load_config(&config)?;
            let sim = vmesim::build_simulator(&cfg, vmesim_core::trace::TraceLog::null())
                .map_err(|errors| anyhow!("invalid config:\n  {}", errors.join("\n  ")))?;
            let json = serde_json::to_string_pretty(&sim.manifest())?;
            match out {
                Some(path) => fs::write(&path, json)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => println!("{json}"),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
