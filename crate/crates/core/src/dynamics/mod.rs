//! The relaxed recurrence `h <- h + dt * (F(h) - h)` and its relatives.
//!
//! [`Block`] is the shared operator `F`. The integrators advance the
//! velocity field `g(h) = F(h) - h`; [`DepthStack`] realizes one of the
//! five depth wirings on top of them.

mod block;
mod integrator;
mod recurrence;
mod schedule;

pub use block::{Block, CountingBlock, FnBlock, StepContext};
pub use integrator::{euler_step, heun_step, midpoint_step, rk4_step, velocity, IntegratorKind, StepSize};
pub use recurrence::{DepthConfig, DepthStack, Trajectory, Wiring};
pub use schedule::{learnable_dt, Schedule};

#[cfg(test)]
mod tests;
