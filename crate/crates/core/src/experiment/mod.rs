//! Config-driven orchestration of the full pipeline.

mod config;
pub mod presets;
mod run;
mod stages;

pub use config::{load_config, validate_config, AutoTag, ConfigError, DemandConfig, ExperimentConfig, RhoMode, TauSpec};
pub use stages::{
    catalog_summary, evaluate_strategy, instrumented_buses, strategy_report, load_case, partition_for, place, placement_model, prepare, screened_catalog, simulate,
    train_full, CatalogSummary, ErrorKind, PipelineError, Prepared, Simulated,
};
pub use run::{bus_set, read_bin_artifact, read_json_artifact, run_dir, run_pipeline, tau_label, EvalEntry, Manifest, Provenance, RunOptions, RunSummary, Stage};
