//! Dense `f64` matrices, a reverse-mode tape, and Adam.

pub mod adam;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{accumulate, uniform_fan_in, Bound, ParamStore};
pub use tape::{decayed_score, DecayForm, Grads, Tape, Var, BCE_EPS};
pub use tensor::{cosine, dot, sigmoid, softmax_in_place, Tensor};
