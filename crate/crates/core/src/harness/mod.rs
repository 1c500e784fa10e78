//! Config-driven experiment runner: scenarios, sweeps, analysis reports and plots.

pub mod config;
pub mod io;
pub mod plot;
pub mod presets;
pub mod run;
pub mod validate;

pub use config::ScenarioConfig;
pub use presets::{preset, PRESETS};
pub use run::{run_scenario, write_outputs, ExperimentRecord, RunOutput};
pub use validate::{validate_analysis, write_analysis, AnalysisOutput};
