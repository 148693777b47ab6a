//! Recurrent building blocks: the peephole LSTM cell, the linear output head,
//! per-sequence dropout, the time-weighted loss and the optimizer.

pub mod adam;
pub mod dropout;
pub mod linear;
pub mod loss;
pub mod lstm;
pub mod params;

pub use adam::{AdamState, DEFAULT_LEARNING_RATE};
pub use dropout::{sample_dropout_mask, DropoutMask};
pub use linear::LinearHead;
pub use loss::{make_exp_weights, weighted_xent_loss};
pub use lstm::{Gates, LstmCell, LstmNorm, LstmState, LstmTrace};
pub use params::{clip_global_norm, zeros_like, Parameterized};
