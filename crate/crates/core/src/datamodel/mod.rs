//! Online-judge records: schema, loading, filtering, windowing, simulation.

pub mod io;
pub mod sequences;
pub mod synth;
pub mod types;

pub use io::{load_knowledge_base, Corpus, DataPaths};
pub use sequences::{build_sequences, window_sequences, FilterStats, Window, MIN_SUBMISSIONS};
pub use synth::{synth_generate, SynthConfig};
pub use types::*;
