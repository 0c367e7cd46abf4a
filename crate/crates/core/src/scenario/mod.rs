//! Named scenarios: configuration, orchestration and run manifests.

pub mod config;
pub mod manifest;
mod run;

pub use config::{defaults_table, parse_config, validate_config, ScenarioConfig, ScenarioKind};
pub use manifest::{report, Check, FileEntry, Relation, Report, RunManifest, RunMode};
pub use run::{
    build_hamiltonian, evaluate_checks, guidance_params, initial_density, initial_wave, run_scenario, simulate,
    RunOptions, ScenarioRun, PATHS_CSV_LIMIT,
};
