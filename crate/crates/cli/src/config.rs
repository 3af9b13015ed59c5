use serde::{Deserialize, Serialize};
use waam_core::analysis::ReportConfig;
use waam_core::control::ControllerConfig;
use waam_core::models::{Arch, ABLATION_SIZES};
use waam_core::plant::coverage::CoverageGrid;
use waam_core::plant::PlantConfig;
use waam_core::training::TrainConfig;

/// Everything a command may read from `--config`. Absent sections and keys
/// keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Fraction of traces assigned to training.
    pub split_ratio: f64,
    pub plant: PlantConfig,
    pub coverage: CoverageGrid,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
    pub controller: ControllerConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            split_ratio: 0.8,
            plant: PlantConfig::default(),
            coverage: CoverageGrid::default(),
            train: TrainConfig::default(),
            ablation: AblationConfig::default(),
            controller: ControllerConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl RunConfig {
    /// Overrides every seed with `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.plant.seed = seed;
        self.coverage.seed = seed;
        self.train.seed = seed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub archs: Vec<Arch>,
    pub sizes: Vec<usize>,
    /// Grid cells trained concurrently.
    pub workers: usize,
    /// Warm single steps timed per model.
    pub latency_steps: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            archs: Arch::TRAINABLE.to_vec(),
            sizes: ABLATION_SIZES.to_vec(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            latency_steps: 10_000,
        }
    }
}
