//! Benchmark harness: synthetic workload, parallel scans, statistics,
//! the two experiments and their CSV output.

mod experiment;
mod report_csv;
mod stats;
mod workload;

pub use experiment::{
    compare_runs, experiment_compare, experiment_passthrough, prepare_image, run_experiment, scan_image,
    Comparison, ExperimentConfig, ExperimentKind, Report, RunConfig, RunResult, COMPARE_CONFIGS,
    PASSTHROUGH_CONFIGS,
};
pub use report_csv::{emit_csv, read_csv, read_records, write_records, CsvRecord, RowKind, CSV_HEADER};
pub use stats::{mean, paired_t_test, sample_std_dev, standard_error, student_t_upper_tail, TTestResult};
pub use workload::{
    dataset_info, fold_words, generate_dataset, row_word, run_scan, scan_ranges, word_contribution, DatasetInfo,
    ScanResult, Workload, ROWS_PER_SCALE_FACTOR, ROW_SIZE,
};
