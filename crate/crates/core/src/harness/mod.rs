//! Experiment configuration, orchestration and export.
//!
//! A run directory holds `config.json`, checkpoints under `parent/` and
//! `fork_eNNN/child{1,2}/`, per-fork CSV tables, `compare_predicted_actual.csv`,
//! optional `toy/` tables, `summary.md` and finally `manifest.json`.

pub mod config;
pub mod export;
pub mod run;
pub mod svg;

pub use config::{AnalysisRequests, EvolutionRequest, ExperimentConfig, LayerwiseRequest, ToyRequest};
pub use export::{compare_predicted_actual, export_curve_evolution, ComparisonRow, EvolutionRow};
pub use run::{
    load_manifest, run_experiment, run_experiment_file, ForkAnalysis, RunManifest, RunOptions, RunOutput, Stages,
};
