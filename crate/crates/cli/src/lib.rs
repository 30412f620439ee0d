//! Scenario front end for the crate simulator: configuration ingestion,
//! scripted runs with fault injection and inline assertions, history
//! replay, and artifact emission (trace, dumps, manifest, flash image).

pub mod config;
pub mod replay;
pub mod runner;
pub mod script;

pub use config::{build_simulator, parse_config, CrateConfig};
pub use replay::replay_to_csv;
pub use runner::{run, GatewaySetup, RunOptions, RunOutcome};
pub use script::{parse_script, Script};
