//! TCP process-variable gateway for the crate simulator.
//!
//! Stands in for the control-system computer on the other side of the VME
//! interface: named PVs map onto board registers with linear engineering
//! scaling, served over a small line protocol (deliberately not a real
//! control-system wire protocol). See `protocol` for the grammar.

pub mod bindings;
pub mod protocol;
pub mod server;

pub use bindings::{parse_bindings, resolve, BindingError, BindingsFile, Direction, PvBinding, ResolvedBinding};
pub use protocol::{format_value, parse_line, ProtocolError, Request};
pub use server::{
    service_loop, spawn_listener, GatewayCore, GatewayRequest, ServerHandle, SessionId,
    DEFAULT_POLL_PERIOD_PS,
};
