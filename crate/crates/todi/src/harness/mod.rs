//! Desk-scale distillation harness: tabular Markov models, synthetic
//! teachers, a minibatch trainer wired to the analytic gradients, and
//! sweep/compare experiment tooling.

pub mod config;
pub mod model;
pub mod sweep;
pub mod train;

pub use config::{OptimizerKind, TrainConfig, CONFIG_KEYS};
pub use model::{make_teacher, sample_corpus, stationary_unigram, TeacherKind, TinyLM};
pub use sweep::{
    compare, compare_csv, run_sweep, sweep_csv, sweep_rows_from_csv, CompareRow, SweepRow,
    COMPARE_HEADER, SWEEP_HEADER,
};
pub use train::{
    trace_csv, train, train_with_student, EpochRecord, TrainRun, TRACE_HEADER,
};
