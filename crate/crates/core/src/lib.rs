//! Deterministic behavioral simulator of a VME crate hosting six FPGA-based
//! accelerator control boards.
//!
//! The crate models the backplane (A16/A24 address routing, D08/D16 data
//! cycles, block transfers, read-modify-write, and the vectored-interrupt
//! acknowledge daisy chain), a shared register-map framework, and behavioral
//! models of the boards themselves: a timing-pulse generator, a high-voltage
//! controller, a fiber token-ring timing board, a dual-DSP dual-port memory
//! board, a machine-protection comparator, and an I/Q synthesis module.
//!
//! Everything in here is single-threaded and deterministic: given the same
//! configuration and stimulus, two runs produce bit-identical traces.

pub mod boards;
pub mod bus;
pub mod clock;
pub mod scalar;
pub mod sim;
pub mod slave;
pub mod trace;

pub use bus::{
    Address, AddressSpace, BusCycle, CycleKind, CycleOutcome, CycleResult, DataWidth,
    InterruptRequest, MalformedCycle,
};
pub use clock::{ClockRate, SimClock};
pub use sim::{AttachError, Simulator};
pub use slave::{Access, RegisterDescriptor, RegisterMap};

/// Scalar type used by all board models for analog quantities (kilovolts,
/// microamps, seconds). The math kernels in [`scalar`] are generic over
/// [`scalar::Scalar`]; the simulator instantiates them at `f64`.
pub type Real = f64;
