//! Simulation time base.
//!
//! Time is a 64-bit count of picoseconds. Every board clock used by the
//! modeled hardware (10, 16, 20, 25 and 40 MHz) has an exact integer
//! picosecond period, so board-tick arithmetic never drifts.

use serde::{Deserialize, Serialize};

/// One picosecond-resolution simulation clock. Monotonically non-decreasing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    now_ps: u64,
}

impl SimClock {
    pub fn new() -> Self {
        Self { now_ps: 0 }
    }

    pub fn now_ps(&self) -> u64 {
        self.now_ps
    }

    /// Advance to an absolute time. Moving backwards is a logic error.
    pub fn advance_to(&mut self, t_ps: u64) {
        debug_assert!(t_ps >= self.now_ps, "clock moved backwards");
        if t_ps > self.now_ps {
            self.now_ps = t_ps;
        }
    }
}

/// Module clock rates that appear on the modeled boards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClockRate {
    Mhz10,
    Mhz16,
    Mhz20,
    Mhz25,
    Mhz40,
}

impl ClockRate {
    /// Exact period in picoseconds.
    pub fn period_ps(self) -> u64 {
        match self {
            ClockRate::Mhz10 => 100_000,
            ClockRate::Mhz16 => 62_500,
            ClockRate::Mhz20 => 50_000,
            ClockRate::Mhz25 => 40_000,
            ClockRate::Mhz40 => 25_000,
        }
    }

    pub fn hz(self) -> u64 {
        1_000_000_000_000 / self.period_ps()
    }

    /// Whole ticks elapsed at time `t_ps` since time zero.
    pub fn ticks_at(self, t_ps: u64) -> u64 {
        t_ps / self.period_ps()
    }
}
