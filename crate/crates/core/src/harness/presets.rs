//! Built-in scenarios: a 5 m cube of 10³ voxels observed at 30 GHz and 20 dB
//! by one 5×5 array or five 5×1 arrays.

use super::config::*;

pub const PRESETS: [&str; 2] = ["paper-single-bs", "paper-multi-bs"];

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    match name {
        "paper-single-bs" => Some(base(name, vec![array(5, 5)])),
        "paper-multi-bs" => Some(base(name, vec![array(5, 1); 5])),
        _ => None,
    }
}

fn array(rows: usize, cols: usize) -> BaseStationConfig {
    BaseStationConfig { rows, cols, spacing: None, position: None }
}

fn base(name: &str, base_stations: Vec<BaseStationConfig>) -> ScenarioConfig {
    ScenarioConfig {
        name: Some(name.to_string()),
        scene: SceneConfig {
            origin: [0.0; 3],
            extents: [5.0; 3],
            voxel_size: [0.5; 3],
            scatterers: Scatterers::Count(10),
            prior: PriorConfig::default(),
            blocking_distance: None,
        },
        layout: LayoutConfig { users: 20, user_placement: Placement::Shell, base_stations },
        channel: ChannelConfig::default(),
        solver: SolverConfig { damping: 0.5, detect_interval: 10, ..SolverConfig::default() },
        sweep: SweepConfig { variable: SweepVariable::Users, values: vec![5.0, 10.0, 15.0, 20.0], trials: 20, seed: 1 },
        analysis: AnalysisConfig::default(),
        output: OutputConfig::default(),
    }
}
