//! Configuration, orchestration and file output for the `ilro` command.

mod config;
pub mod csv;
mod run;

pub use config::{
    load_config, load_config_file, parse_config, ConfigFile, Experiment, ExperimentConfig, McSolver, Sweep,
    DEFAULT_F_FR_STEP_HZ, DEFAULT_K_VALUES,
};
pub use run::{run_experiment, RunOutput};
