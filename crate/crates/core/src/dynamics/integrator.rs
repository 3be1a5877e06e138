use serde::{Deserialize, Serialize};

use super::{Block, StepContext};
use crate::diffcore::{ParamStore, Tape, Var};
use crate::error::{invalid, Result};

/// Explicit integrator applied to `g(h) = F(h) - h`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    #[default]
    Euler,
    Heun,
    Midpoint,
    Rk4,
}

impl IntegratorKind {
    pub const ALL: [IntegratorKind; 4] = [Self::Euler, Self::Heun, Self::Midpoint, Self::Rk4];

    /// Block evaluations per step.
    pub fn evaluations(self) -> usize {
        match self {
            Self::Euler => 1,
            Self::Heun | Self::Midpoint => 2,
            Self::Rk4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Euler => "euler",
            Self::Heun => "heun",
            Self::Midpoint => "midpoint",
            Self::Rk4 => "rk4",
        }
    }

    pub fn step<B: Block + ?Sized>(
        self,
        block: &B,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        dt: StepSize,
        ctx: &StepContext,
    ) -> Result<Var> {
        match self {
            Self::Euler => euler_step(block, tape, store, h, dt, ctx),
            Self::Heun => heun_step(block, tape, store, h, dt, ctx),
            Self::Midpoint => midpoint_step(block, tape, store, h, dt, ctx),
            Self::Rk4 => rk4_step(block, tape, store, h, dt, ctx),
        }
    }
}

/// Step size of one integrator step: a constant, or a differentiable scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    Learned(Var),
}

impl StepSize {
    pub fn value(self, tape: &Tape) -> f64 {
        match self {
            StepSize::Fixed(v) => v,
            StepSize::Learned(v) => tape.value(v).data()[0],
        }
    }

    fn check(self, tape: &Tape) -> Result<()> {
        let v = self.value(tape);
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid("integrator", format!("dt = {v} outside [0, 1]")));
        }
        Ok(())
    }
}

/// `F(h) - h`. Rejects blocks whose output shape differs from `h`.
pub fn velocity<B: Block + ?Sized>(block: &B, tape: &mut Tape, store: &ParamStore, h: Var, ctx: &StepContext) -> Result<Var> {
    let f = eval(block, tape, store, h, ctx)?;
    tape.sub(f, h)
}

fn eval<B: Block + ?Sized>(block: &B, tape: &mut Tape, store: &ParamStore, h: Var, ctx: &StepContext) -> Result<Var> {
    let f = block.apply(tape, store, h, ctx)?;
    if tape.shape(f) != tape.shape(h) {
        return Err(invalid(
            "velocity",
            format!("block maps {:?} to {:?}; the recurrence needs identical widths", tape.shape(h), tape.shape(f)),
        ));
    }
    Ok(f)
}

/// `h + c * dt * k`.
fn axpy(tape: &mut Tape, h: Var, dt: StepSize, c: f64, k: Var) -> Result<Var> {
    let inc = match dt {
        StepSize::Fixed(v) => tape.scale(k, c * v)?,
        StepSize::Learned(s) => {
            let s = if c == 1.0 { s } else { tape.scale(s, c)? };
            tape.scale_by(s, k)?
        }
    };
    tape.add(h, inc)
}

/// `(1 - dt) * h + dt * F(h)`: one block evaluation.
///
/// Written in convex form so that `dt = 0` returns `h` and `dt = 1`
/// returns `F(h)` exactly.
pub fn euler_step<B: Block + ?Sized>(
    block: &B,
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    dt: StepSize,
    ctx: &StepContext,
) -> Result<Var> {
    dt.check(tape)?;
    let f = eval(block, tape, store, h, ctx)?;
    match dt {
        StepSize::Fixed(v) => {
            let keep = tape.scale(h, 1.0 - v)?;
            let take = tape.scale(f, v)?;
            tape.add(keep, take)
        }
        StepSize::Learned(_) => {
            let g = tape.sub(f, h)?;
            axpy(tape, h, dt, 1.0, g)
        }
    }
}

/// Heun (RK2): `k1 = g(h)`, `k2 = g(h + dt k1)`, `h + dt/2 (k1 + k2)`.
pub fn heun_step<B: Block + ?Sized>(
    block: &B,
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    dt: StepSize,
    ctx: &StepContext,
) -> Result<Var> {
    dt.check(tape)?;
    let k1 = velocity(block, tape, store, h, ctx)?;
    let probe = axpy(tape, h, dt, 1.0, k1)?;
    let k2 = velocity(block, tape, store, probe, ctx)?;
    let sum = tape.add(k1, k2)?;
    axpy(tape, h, dt, 0.5, sum)
}

/// Midpoint: `k1 = g(h)`, `k2 = g(h + dt/2 k1)`, `h + dt k2`.
pub fn midpoint_step<B: Block + ?Sized>(
    block: &B,
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    dt: StepSize,
    ctx: &StepContext,
) -> Result<Var> {
    dt.check(tape)?;
    let k1 = velocity(block, tape, store, h, ctx)?;
    let probe = axpy(tape, h, dt, 0.5, k1)?;
    let k2 = velocity(block, tape, store, probe, ctx)?;
    axpy(tape, h, dt, 1.0, k2)
}

/// Classical four-stage Runge-Kutta.
pub fn rk4_step<B: Block + ?Sized>(
    block: &B,
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    dt: StepSize,
    ctx: &StepContext,
) -> Result<Var> {
    dt.check(tape)?;
    let k1 = velocity(block, tape, store, h, ctx)?;
    let p2 = axpy(tape, h, dt, 0.5, k1)?;
    let k2 = velocity(block, tape, store, p2, ctx)?;
    let p3 = axpy(tape, h, dt, 0.5, k2)?;
    let k3 = velocity(block, tape, store, p3, ctx)?;
    let p4 = axpy(tape, h, dt, 1.0, k3)?;
    let k4 = velocity(block, tape, store, p4, ctx)?;
    let k23 = tape.add(k2, k3)?;
    let k23 = tape.scale(k23, 2.0)?;
    let sum = tape.add(k1, k23)?;
    let sum = tape.add(sum, k4)?;
    axpy(tape, h, dt, 1.0 / 6.0, sum)
}
