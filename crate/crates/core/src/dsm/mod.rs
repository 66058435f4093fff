//! Double-sequence model: problem and code recurrences, decayed attention
//! against the current problem, and the fused sigmoid head.

pub mod model;
pub mod steps;

pub use model::{
    window_loss, Branch, DsmConfig, DsmModel, Forward, WindowInput, CHECKPOINT_KIND,
    CHECKPOINT_VERSION,
};
pub use steps::{
    aggregate, decay_attention, decay_only_weights, forward_stepwise, predict, rnn_step,
    similarity, time_differences,
};
