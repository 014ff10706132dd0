//! Experiment harness: configuration, data loading, synthetic generators,
//! the synchronous reference, CSV export and the end-to-end runner.

pub mod config;
pub mod data;
pub mod run;
pub mod sync;
pub mod synthetic;
pub mod trace_csv;

pub use config::{
    BackendConfig, ChecksSection, DataFormat, ExperimentConfig, OutputSection, ProblemSource,
    ProtocolSection, StopSection,
};
pub use data::{
    parse_csv, parse_libsvm, partition_uniform, write_csv, write_libsvm, Dataset, DatasetShard,
};
pub use run::{build_problem, run_experiment, ExperimentOutcome, RunSummary};
pub use sync::{max_deviation, sync_reference, SyncReference};
pub use synthetic::{synthetic_logistic, synthetic_quadratic, LogisticSpec, QuadraticSpec};
pub use trace_csv::{read_trace_csv, trace_rows, write_trace_csv, CsvRow};
