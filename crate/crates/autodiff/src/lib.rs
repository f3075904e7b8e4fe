//! Reverse-mode automatic differentiation over dense f64 matrices.
//!
//! The operator set is exactly what the encoder/decoder stacks, their
//! losses, and plain two-layer MLP experiments need: matmul, softmax,
//! layer norm, GeLU, GRU cells, cross-entropy and BCE-from-logits, plus
//! Adam and a finite-difference gradient checker. No broadcasting beyond
//! row vectors, no higher-order derivatives.

mod adam;
mod gradcheck;
mod gru;
mod kernels;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, grad_check_sampled};
pub use gru::{gru_cell, GruWeights};
pub use kernels::{matmul_nn_acc, matmul_nn_acc_seq, matmul_nt_acc, matmul_tn_acc};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
