use std::path::{Path, PathBuf};

use railsync::avalanche::{self, AvaParams};
use railsync::depgraph::{WaitingPolicy, DEFAULT_MAX_DELAY};
use railsync::report::{ClassifyMode, DEFAULT_JOINT_WINDOW};
use railsync::sync::{DEFAULT_CATEGORY_BOUNDARIES, DEFAULT_NULL_RUNS, DEFAULT_SYNC_WINDOW, DEFAULT_TAU};
use railsync::timetable::{SyntheticParams, DEFAULT_TRANSFER_WINDOW};
use railsync::Minutes;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub bundle: Option<PathBuf>,
    pub gtfs: Option<PathBuf>,
    pub sync: Option<PathBuf>,
    pub sweep: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DriverChoice {
    Periodic,
    Stochastic,
    /// Both drivers, paired by seed, with a one-sided test.
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvalancheConfig {
    pub params: AvaParams,
    pub driver: DriverChoice,
    pub nodes: usize,
    pub edges: usize,
    pub steps: u64,
    pub seeds: usize,
    /// Block length in steps for the time-window means.
    pub window_steps: u64,
}

impl Default for AvalancheConfig {
    fn default() -> Self {
        AvalancheConfig {
            params: AvaParams::default(),
            driver: DriverChoice::Both,
            nodes: avalanche::DEFAULT_NODES,
            edges: avalanche::DEFAULT_EDGES,
            steps: 20_000,
            seeds: 100,
            window_steps: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BufferingSource {
    /// Mean over all derived transfer opportunities.
    #[default]
    Transfers,
    /// Mean over the transfers used by passenger routes.
    Passengers,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Primary delay used for classification; the smallest swept value if unset.
    pub p: Option<Minutes>,
    pub thresholds: Option<(f64, f64)>,
    pub mode: ClassifyMode,
    pub buffering: BufferingSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub inputs: Inputs,
    pub tau: Minutes,
    pub null_runs: usize,
    pub sync_window: usize,
    pub joint_window: usize,
    pub category_boundaries: (usize, usize),
    pub p_values: Vec<Minutes>,
    pub transfer_window: Minutes,
    pub max_delay: Minutes,
    pub waiting_policy: WaitingPolicy,
    pub gtfs_min_transfer: Minutes,
    pub synthetic: SyntheticParams,
    pub avalanche: AvalancheConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            inputs: Inputs::default(),
            tau: DEFAULT_TAU,
            null_runs: DEFAULT_NULL_RUNS,
            sync_window: DEFAULT_SYNC_WINDOW,
            joint_window: DEFAULT_JOINT_WINDOW,
            category_boundaries: DEFAULT_CATEGORY_BOUNDARIES,
            p_values: vec![5, 30],
            transfer_window: DEFAULT_TRANSFER_WINDOW,
            max_delay: DEFAULT_MAX_DELAY,
            waiting_policy: WaitingPolicy::default(),
            gtfs_min_transfer: 5,
            synthetic: SyntheticParams::default(),
            avalanche: AvalancheConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }

    /// The single-line header embedded in every artifact.
    pub fn header(&self) -> String {
        format!(
            "config: {}",
            serde_json::to_string(self).expect("config serializes")
        )
    }
}
