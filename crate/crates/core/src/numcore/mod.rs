//! Dense f64 tensors, reverse-mode gradients, finite-difference checks,
//! and the Adam optimizer.

pub mod adam;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use tape::{dropout, AdjacencyPlan, NodeId, Tape};
pub use tensor::{matmul, relu, softmax_rows, Tensor2};
