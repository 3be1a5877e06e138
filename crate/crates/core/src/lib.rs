//! Contractive weight-tied recurrent depth.
//!
//! One shared block `F` is applied `K` times under the relaxed update
//! `h <- (1 - dt) * h + dt * F(h)`, an explicit Euler step of
//! `dh/dt = F(h) - h`. The crate provides the differentiable tensor core,
//! the integrators and depth wirings, dense / message-passing / attention
//! blocks, training utilities, data handling and post-hoc analysis.

pub mod analysis;
pub mod blocks;
pub mod dataio;
pub mod diffcore;
pub mod dynamics;
pub mod error;
pub mod models;
pub mod training;

pub use error::{Error, Result};
