use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::parse_families;
use crate::encoder::TrainConfig;
use crate::error::{Error, Result};
use crate::grid::ScenarioFamily;
use crate::masked::MaskConfig;
use crate::planners::{Heuristic, Planner};
use crate::rl::{QHyper, RewardConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerChoice {
    Bfs,
    Dijkstra,
    Astar,
    AstarZero,
}

impl PlannerChoice {
    pub fn planner(self) -> Planner {
        match self {
            PlannerChoice::Bfs => Planner::Bfs,
            PlannerChoice::Dijkstra => Planner::Dijkstra,
            PlannerChoice::Astar => Planner::Astar(Heuristic::Manhattan),
            PlannerChoice::AstarZero => Planner::Astar(Heuristic::Zero),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlShiftConfig {
    pub width: usize,
    pub height: usize,
    pub density: f64,
    /// Cells toggled to build environment B.
    pub perturb: usize,
    pub eval_episodes: usize,
    pub hyper: QHyper,
    pub rewards: RewardConfig,
}

impl Default for RlShiftConfig {
    fn default() -> Self {
        RlShiftConfig {
            width: 10,
            height: 10,
            density: 0.15,
            perturb: 12,
            eval_episodes: 50,
            hyper: QHyper::default(),
            rewards: RewardConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IncrementalConfig {
    /// Fraction of the fine-tuning set drawn from the replay buffer.
    pub replay_ratio: f64,
    /// New-family samples used for fine-tuning.
    pub new_samples: usize,
    pub fine_tune: TrainConfig,
}

impl Default for IncrementalConfig {
    fn default() -> Self {
        IncrementalConfig {
            replay_ratio: 0.5,
            new_samples: 500,
            fine_tune: TrainConfig::default(),
        }
    }
}

/// Every knob of every experiment. Missing keys take defaults; unknown keys
/// are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub train_dataset: Option<PathBuf>,
    pub eval_dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub train_families: Vec<String>,
    pub eval_families: Vec<String>,
    /// Scenes per family generated in memory when no dataset path is given.
    pub train_count: usize,
    pub eval_count: usize,
    pub train: TrainConfig,
    pub mask: MaskConfig,
    pub planner: PlannerChoice,
    /// Timing repeats per paired run; wall times are medians.
    pub timing_repeats: usize,
    pub rl: RlShiftConfig,
    pub incremental: IncrementalConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train_dataset: None,
            eval_dataset: None,
            model: None,
            train_families: vec!["uniform_clutter".into()],
            eval_families: vec!["diagonal_walls".into()],
            train_count: 2000,
            eval_count: 200,
            train: TrainConfig::default(),
            mask: MaskConfig::default(),
            planner: PlannerChoice::Dijkstra,
            timing_repeats: 3,
            rl: RlShiftConfig::default(),
            incremental: IncrementalConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_family_params()?;
        self.eval_family_params()?;
        self.train.validate()?;
        self.incremental.fine_tune.validate()?;
        self.mask.validate()?;
        self.rl.hyper.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.train_count == 0 || self.eval_count == 0 {
            return bad("train_count and eval_count must be positive".into());
        }
        if self.timing_repeats == 0 {
            return bad("timing_repeats must be positive".into());
        }
        if !(0.0..1.0).contains(&self.incremental.replay_ratio) {
            return bad(format!(
                "incremental.replay_ratio must lie in [0, 1), got {}",
                self.incremental.replay_ratio
            ));
        }
        if self.incremental.new_samples == 0 {
            return bad("incremental.new_samples must be positive".into());
        }
        let rl = &self.rl;
        if rl.width < 3 || rl.height < 3 || !(0.0..1.0).contains(&rl.density) || rl.eval_episodes == 0 {
            return bad("rl: need width, height ≥ 3, density in [0, 1) and eval_episodes > 0".into());
        }
        Ok(())
    }

    fn families(names: &[String], field: &str) -> Result<Vec<ScenarioFamily>> {
        if names.is_empty() {
            return Err(Error::Config(format!("{field} must not be empty")));
        }
        parse_families(&names.join(","))
    }

    pub fn train_family_params(&self) -> Result<Vec<ScenarioFamily>> {
        Self::families(&self.train_families, "train_families")
    }

    pub fn eval_family_params(&self) -> Result<Vec<ScenarioFamily>> {
        Self::families(&self.eval_families, "eval_families")
    }

    /// The model path, or a config error naming the missing field.
    pub fn require_model(&self) -> Result<&Path> {
        self.model
            .as_deref()
            .ok_or_else(|| Error::Config("missing field `model`: a trained model path is required".into()))
    }
}
