//! Dense `f64` tensors and a reverse-mode tape.
//!
//! All model math is expressed with the operations on [`Tape`]; the plain
//! functions re-exported here ([`matmul`], [`softmax`], [`layer_norm`], ...)
//! compute the same forward values without recording anything.

mod param;
mod tape;
mod tensor;

pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{cross_entropy, dropout, Grads, Tape, Var, IGNORE};
pub use tensor::{gelu, gelu_scalar, layer_norm, matmul, matmul_t, softmax, t_matmul, Tensor};

#[cfg(test)]
mod tests;
