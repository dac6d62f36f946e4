//! Dense numerics, the seeded random stream, and the GRU cell.

pub mod gradcheck;
pub mod gru;
pub mod linalg;
pub mod rng;

pub use gradcheck::grad_check;
pub use gru::{
    dropout_mask, gru_backprop, gru_step, gru_step_clean, GruCache, GruParams, GruStepCache,
    MAX_DROPOUT,
};
pub use linalg::{affine, log_softmax, sigmoid, tanh, Matrix, Vector};
pub use rng::RngStream;
