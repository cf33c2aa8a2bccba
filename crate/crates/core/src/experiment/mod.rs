//! Config-driven experiment runs and comparison of their results.
//!
//! A run ingests a task corpus and WALS, trains a task model on top of the
//! language embeddings, snapshots them, evaluates typology prediction at
//! every snapshot and writes reports and plots into an output directory.

mod compare;
mod config;
mod run;

pub use compare::{compare_results, compare_runs, compare_snapshots, load_run_results, Comparison, ComparisonColumn, ALPHA};
pub use config::{ConfigEntries, DataSource, EmbeddingSource, ExperimentConfig, WalsPaths};
pub use run::{load_snapshots, run_experiment, RunReport, FAILED_MARKER, RESULTS_FILE};
