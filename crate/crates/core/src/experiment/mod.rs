//! Experiment matrix runner with CSV, SVG and budget-report output.

mod config;
mod output;
mod runner;

pub use config::{Algo, ExperimentConfig, DEMO_VEC_CONSTANT};
pub use output::{
    csv_string, emit_chart, emit_csv, emit_report, read_csv, records_from_rows, report_string, svg_string, CsvRow,
    CSV_HEADER,
};
pub use runner::{aggregate, grid, jobs, protocol_config, run_matrix, run_matrix_with, run_one, Curve, RunRecord};
