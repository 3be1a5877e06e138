//! Dense tensors and reverse-mode automatic differentiation.

mod gemm;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, GradCheck};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Topology, Var, LEAKY_SLOPE};
pub use tensor::Tensor;
