//! Scalar math kernels shared by the analog board models.
//!
//! The kernels are generic over the floating-point type so they can be
//! exercised at `f32` and `f64`; the simulator itself uses the `f64` alias
//! [`crate::Real`]. Each kernel is written as a pure function of its inputs
//! so that board state can be derived in closed form from an anchor value
//! plus an integer tick count, which is what makes `tick(a); tick(b)`
//! bit-identical to `tick(a + b)`.

use num_traits::Float;

/// Floating-point scalar usable by the analog kernels.
pub trait Scalar: Float + core::fmt::Debug {
    fn from_u64(v: u64) -> Self;
    fn from_f64_lossy(v: f64) -> Self;
}

impl Scalar for f32 {
    fn from_u64(v: u64) -> Self {
        v as f32
    }
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn from_u64(v: u64) -> Self {
        v as f64
    }
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

/// Linear slew from `anchor` toward `target` after `elapsed` seconds at
/// `rate` units/second, clamped exactly at the target (no overshoot).
pub fn slew_toward<T: Scalar>(anchor: T, target: T, rate: T, elapsed_s: T) -> T {
    let travel = rate * elapsed_s;
    if target >= anchor {
        (anchor + travel).min(target)
    } else {
        (anchor - travel).max(target)
    }
}

/// Exponential decay of `anchor` over `elapsed` seconds with time constant
/// `tau`. `tau = +inf` disables the decay.
pub fn exp_decay<T: Scalar>(anchor: T, elapsed_s: T, tau_s: T) -> T {
    anchor * (-elapsed_s / tau_s).exp()
}

/// One step of the leaky loss integrator.
///
/// The decay time constant adapts to the loss magnitude: losses at or above
/// `knee` retain history with `tau_high` (the longer constant), smaller
/// losses decay with `tau_low`. Negative loss contributes nothing but still
/// lets the accumulated value decay. The result is never negative.
pub fn leaky_integrate_step<T: Scalar>(
    integrated: T,
    loss: T,
    dt_s: T,
    tau_low_s: T,
    tau_high_s: T,
    knee: T,
) -> T {
    let tau = if loss < knee { tau_low_s } else { tau_high_s };
    let decayed = integrated * (-dt_s / tau).exp();
    let gain = loss.max(T::zero()) * dt_s;
    (decayed + gain).max(T::zero())
}

/// Round half away from zero. The fixed-point paths in the board models all
/// use this rule so that an oracle can match them bit-exactly.
pub fn round_half_away<T: Scalar>(v: T) -> T {
    v.round()
}

/// Quantize `v` onto an unsigned linear code: `round(v / lsb)` clamped to
/// `[0, max_code]`.
pub fn quantize_unsigned<T: Scalar>(v: T, lsb: T, max_code: u32) -> u32 {
    let code = round_half_away(v / lsb);
    if code <= T::zero() {
        0
    } else if code >= T::from_u64(max_code as u64) {
        max_code
    } else {
        code.to_u32().unwrap_or(max_code)
    }
}

/// Offset-binary DAC code for a bipolar value: midscale at zero, clamped at
/// the rails. `bits` is the converter width.
pub fn offset_binary_code<T: Scalar>(v: T, full_scale: T, bits: u32) -> u32 {
    let mid = 1u32 << (bits - 1);
    let span = T::from_u64((mid - 1) as u64);
    let code = round_half_away(T::from_u64(mid as u64) + v / full_scale * span);
    let max = T::from_u64(((1u64 << bits) - 1) as u64);
    if code <= T::zero() {
        0
    } else if code >= max {
        (1u32 << bits) - 1
    } else {
        code.to_u32().unwrap()
    }
}
