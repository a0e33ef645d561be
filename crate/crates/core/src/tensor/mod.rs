//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod checkpoint;
mod grad_check;
mod kernels;
mod params;
mod tape;
mod value;

pub use checkpoint::Checkpoint;
pub use grad_check::finite_diff_check;
pub use params::{Param, ParamGroup, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use value::Tensor;
