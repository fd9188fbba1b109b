//! Configuration-driven experiments: replications, PCS curves, timing and
//! result files.

mod config;
mod experiment;
mod output;

pub use config::{
    auto_record_stride, parse_contexts_csv, sha256_hex, ExperimentConfig, ProblemSource, LONG_RUN_STRIDE,
    OUTPUT_ROOT_ENV, PER_ITERATION_LIMIT,
};
pub use experiment::{
    mean_stderr, replication_seed, run_experiment, ExperimentResult, PcsPoint, PolicyResult, ReplicationFailure,
    ReplicationOutcome,
};
pub use output::{
    check_resume, emit_plots_data, read_timing, render_timing_table, result_files, timing_table, verify,
    write_result, OutputFile, TimingRow, VerifyReport, PCS_HEADER,
};
