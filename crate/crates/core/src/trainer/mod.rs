//! Training loop, AUC evaluation, multi-seed averaging, ablations and the λ sweep.

pub mod config;
pub mod harness;
pub mod metrics;
pub mod run;

pub use config::TrainConfig;
pub use harness::{
    build_code_pipeline, run_ablations, summarize_sweep, sweep_csv, sweep_lambda, train_seeds,
    AblationRow, CodePipeline, EvalReport, SweepRow, SweepSummary, Variant,
};
pub use metrics::auc;
pub use run::{
    evaluate, predict_windows, split_students, split_user_ids, train_run, Checkpoint, CodeTables,
    Dataset, EpochLog, ProblemEncoder, RunReport, TrainOutcome,
};
