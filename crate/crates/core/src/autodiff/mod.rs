//! Minimal dense CPU tensors with reverse-mode differentiation.
//!
//! Only the operations the transformer needs are provided. Broadcasting is
//! limited to adding a `[d]` bias to the trailing axis.

mod finite_diff;
mod params;
mod tape;
mod tensor;

pub use finite_diff::finite_diff_grad;
pub use params::{Bound, GradMap, ParamStore};
pub use tape::{concat_cols, concat_rows, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};

#[cfg(test)]
mod tests;
