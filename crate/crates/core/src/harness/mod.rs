//! Experiment configuration, ablation variants, subcommands and summaries.

mod config;
mod run;
mod summary;
mod variants;

pub use config::*;
pub use run::{run_experiment, seed_dir, CellResult, Command, Outcome};
pub use summary::{
    discover_runs, emit_summary, load_run, summarize, RunResult, SummaryReport, SummaryRow, SUMMARY_FORMAT,
    SUMMARY_VERSION,
};
pub use variants::{apply_variant, find_variant, Variant, VARIANTS};
