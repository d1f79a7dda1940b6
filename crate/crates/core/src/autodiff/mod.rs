//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records each operation of a forward pass together with the
//! data its backward rule needs. [`Tape::backward`] then sweeps the record in
//! reverse, accumulating vector-Jacobian products into every node that
//! depends on a differentiable leaf.

mod linalg;
mod tape;

pub(crate) use tape::{patch_mean_values, rope_apply, rope_tables};
pub use tape::{BackwardFault, Elementwise, Tape, Var};
