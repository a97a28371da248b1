//! Mission configuration: every environment, planner, and training
//! hyperparameter in one nested structure, loadable from a TOML file over
//! profile defaults, with unknown keys rejected.

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

use crate::baselines::{CmaEsConfig, MctsPwConfig};
use crate::env::{KinematicsModel, SensorModel, TerrainSpec};
use crate::error::{CoreError, Result};
use crate::mapping::{InterestRegionSpec, KernelSpec};
use crate::net::NetConfig;
use crate::search::SearchConfig;
use crate::training::ScheduleSpec;

/// Experiment scale selector.
///
/// `paper` mirrors the benchmark setup (15x15 grid at 2.5 m, 450 actions,
/// 11 m action radius, 280 episodes x 40 iterations); `desk` is the
/// CPU-sized setup every acceptance check runs on (10x10 grid at 4 m, 200
/// actions, 20 episodes x 10 iterations).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(CoreError::config(
                "profile",
                format!("unknown profile `{other}`; expected `desk` or `paper`"),
            )),
        }
    }
}

/// Self-play training loop parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub max_steps: usize,
    /// Mission budget in seconds.
    pub budget: f64,
    /// Mission start position in meters, snapped to the lattice.
    pub start_position: [f64; 3],
    pub seed: u64,
    /// GP hyperparameter randomization ranges for episode diversity.
    pub gp_length_scale_range: [f64; 2],
    pub gp_signal_variance_range: [f64; 2],
    /// Optional restriction of next actions to a Euclidean ball; the
    /// trained policy is deployed on the same restricted action space.
    #[serde(default)]
    pub action_radius: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            episodes_per_iteration: 20,
            max_steps: 30,
            budget: 150.0,
            start_position: [2.0, 2.0, 14.0],
            seed: 0,
            gp_length_scale_range: [2.5, 5.0],
            gp_signal_variance_range: [1.0, 2.5],
            action_radius: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(CoreError::config("training.iterations", "must be >= 1"));
        }
        if self.episodes_per_iteration == 0 {
            return Err(CoreError::config(
                "training.episodes_per_iteration",
                "must be >= 1",
            ));
        }
        if self.max_steps == 0 {
            return Err(CoreError::config("training.max_steps", "must be >= 1"));
        }
        if !(self.budget > 0.0) {
            return Err(CoreError::config("training.budget", "must be > 0"));
        }
        for (field, range) in [
            ("training.gp_length_scale_range", self.gp_length_scale_range),
            (
                "training.gp_signal_variance_range",
                self.gp_signal_variance_range,
            ),
        ] {
            if !(range[0] > 0.0 && range[1] >= range[0]) {
                return Err(CoreError::config(field, "must be a positive [lo, hi] range"));
            }
        }
        if let Some(r) = self.action_radius {
            if !(r > 0.0) {
                return Err(CoreError::config("training.action_radius", "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Benchmark-evaluation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Mission seeds; missions are repeated per seed and aggregated.
    pub seeds: Vec<u64>,
    /// Planner set evaluated by default.
    pub planners: Vec<String>,
    pub mcts: MctsPwConfig,
    pub cmaes: CmaEsConfig,
    /// Write per-step belief CSV snapshots during missions.
    pub dump_beliefs: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            planners: vec![
                "rl".into(),
                "random".into(),
                "coverage".into(),
                "mcts_pw".into(),
                "cmaes".into(),
            ],
            mcts: MctsPwConfig::default(),
            cmaes: CmaEsConfig::default(),
            dump_beliefs: false,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CoreError::config("evaluation.seeds", "must be non-empty"));
        }
        self.mcts.validate()?;
        self.cmaes.validate()?;
        Ok(())
    }
}

/// Complete mission configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionConfig {
    pub profile: Profile,
    pub env: TerrainSpec,
    pub sensor: SensorModel,
    pub kinematics: KinematicsModel,
    pub kernel: KernelSpec,
    pub interest: InterestRegionSpec,
    /// Uniform prior map mean.
    pub prior_mean: f64,
    pub search: SearchConfig,
    pub schedules: ScheduleSpec,
    pub net: NetConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
    /// Worker pool size; 0 selects the number of available cores.
    pub workers: usize,
}

impl MissionConfig {
    /// Full defaults for a profile.
    pub fn default_for(profile: Profile) -> Self {
        let mut cfg = Self {
            profile,
            env: TerrainSpec::default(),
            sensor: SensorModel::default(),
            kinematics: KinematicsModel::default(),
            kernel: KernelSpec::default(),
            interest: InterestRegionSpec::default(),
            prior_mean: 0.5,
            search: SearchConfig::default(),
            schedules: ScheduleSpec::default(),
            net: NetConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
            workers: 0,
        };
        match profile {
            Profile::Desk => {
                // 10x10 grid, 200 actions; CPU-sized network.
                cfg.env.side_length = 40.0;
                cfg.env.resolution = 4.0;
                cfg.net.channels = 8;
                cfg.net.value_channels = 8;
                cfg.training.iterations = 10;
                cfg.training.episodes_per_iteration = 20;
                cfg.training.action_radius = None;
            }
            Profile::Paper => {
                // 15x15 grid at 2.5 m resolution, 450 actions, 11 m radius.
                cfg.env.side_length = 37.5;
                cfg.env.resolution = 2.5;
                cfg.net.channels = 32;
                cfg.net.value_channels = 16;
                cfg.training.iterations = 40;
                cfg.training.episodes_per_iteration = 280;
                cfg.training.action_radius = Some(11.0);
            }
        }
        cfg
    }

    pub fn grid_dim(&self) -> usize {
        self.env.grid_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.sensor.validate()?;
        self.kinematics.validate()?;
        self.kernel.validate()?;
        self.interest.validate()?;
        if !(0.0..=1.0).contains(&self.prior_mean) {
            return Err(CoreError::config("prior_mean", "must be in [0, 1]"));
        }
        self.search.validate()?;
        self.schedules.validate()?;
        self.net.validate()?;
        self.training.validate()?;
        self.evaluation.validate()?;
        Ok(())
    }

    /// Serializes the effective configuration (the frozen copy written into
    /// run directories).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| CoreError::config("<serialize>", e.to_string()))
    }
}

/// Loads a config: profile defaults, overlaid with the optional TOML file,
/// with the profile chosen by (in priority order) the explicit flag, the
/// file's `profile` key, or `desk`.
pub fn load_config(path: Option<&Path>, profile_flag: Option<Profile>) -> Result<MissionConfig> {
    let file_value: Option<toml::Value> = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CoreError::config("config", format!("cannot read {}: {e}", p.display()))
            })?;
            Some(
                text.parse::<toml::Value>()
                    .map_err(|e| CoreError::config("config", e.to_string()))?,
            )
        }
        None => None,
    };

    let file_profile = file_value
        .as_ref()
        .and_then(|v| v.get("profile"))
        .and_then(|v| v.as_str())
        .map(Profile::from_str)
        .transpose()?;
    let profile = profile_flag.or(file_profile).unwrap_or(Profile::Desk);

    let base = MissionConfig::default_for(profile);
    let mut merged = toml::Value::try_from(&base)
        .map_err(|e| CoreError::config("<defaults>", e.to_string()))?;
    if let Some(overlay) = file_value {
        merge_values(&mut merged, overlay);
    }
    // The flag always wins over the file's profile key.
    if let Some(table) = merged.as_table_mut() {
        table.insert(
            "profile".into(),
            toml::Value::try_from(profile).expect("profile serializes"),
        );
    }

    let cfg: MissionConfig = merged
        .try_into()
        .map_err(|e| CoreError::config("config", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge_values(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(base_table), toml::Value::Table(overlay_table)) => {
            for (key, value) in overlay_table {
                match base_table.get_mut(&key) {
                    Some(existing) if existing.is_table() && value.is_table() => {
                        merge_values(existing, value);
                    }
                    _ => {
                        base_table.insert(key, value);
                    }
                }
            }
        }
        (base_slot, overlay_value) => *base_slot = overlay_value,
    }
}

/// Ablation variants: exactly one toggle changed from the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    Baseline,
    FixedWindow,
    FixedExploration,
    NoForcedPlayouts,
    NoGlobalPooling,
    Encoder5,
    NoHistory,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 7] = [
        AblationVariant::Baseline,
        AblationVariant::FixedWindow,
        AblationVariant::FixedExploration,
        AblationVariant::NoForcedPlayouts,
        AblationVariant::NoGlobalPooling,
        AblationVariant::Encoder5,
        AblationVariant::NoHistory,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::Baseline => "baseline",
            AblationVariant::FixedWindow => "fixed_window",
            AblationVariant::FixedExploration => "fixed_exploration",
            AblationVariant::NoForcedPlayouts => "no_forced_playouts",
            AblationVariant::NoGlobalPooling => "no_global_pooling",
            AblationVariant::Encoder5 => "encoder5",
            AblationVariant::NoHistory => "no_history",
        }
    }

    /// Applies the variant's single toggle.
    pub fn apply(&self, cfg: &mut MissionConfig) {
        match self {
            AblationVariant::Baseline => {}
            AblationVariant::FixedWindow => {
                // w(i) == w_max for every iteration.
                cfg.schedules.window_start = cfg.schedules.window_max;
            }
            AblationVariant::FixedExploration => {
                cfg.schedules.c1_start = cfg.schedules.c1_min;
                cfg.schedules.delta_start = cfg.schedules.delta_min;
            }
            AblationVariant::NoForcedPlayouts => {
                cfg.search.forced_playout_k = 0.0;
            }
            AblationVariant::NoGlobalPooling => {
                cfg.net.global_pooling = false;
            }
            AblationVariant::Encoder5 => {
                cfg.net.encoder_blocks = 5;
            }
            AblationVariant::NoHistory => {
                cfg.net.history_frames = 0;
            }
        }
    }
}

impl FromStr for AblationVariant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .iter()
            .find(|v| v.name() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = AblationVariant::ALL.iter().map(|v| v.name()).collect();
                CoreError::config(
                    "variant",
                    format!("unknown variant `{s}`; expected one of: {}", names.join(", ")),
                )
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_pin_grid_and_action_counts() {
        let desk = MissionConfig::default_for(Profile::Desk);
        assert_eq!(desk.grid_dim(), 10);
        assert_eq!(desk.env.action_count(), 200);
        desk.validate().unwrap();

        let paper = MissionConfig::default_for(Profile::Paper);
        assert_eq!(paper.grid_dim(), 15);
        assert_eq!(paper.env.action_count(), 450);
        assert_eq!(paper.training.action_radius, Some(11.0));
        paper.validate().unwrap();
    }

    #[test]
    fn file_overrides_profile_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mission.toml");
        std::fs::write(
            &path,
            "profile = \"desk\"\n[training]\niterations = 3\n[search]\nnum_simulations = 7\n",
        )
        .unwrap();
        let cfg = load_config(Some(&path), None).unwrap();
        assert_eq!(cfg.training.iterations, 3);
        assert_eq!(cfg.search.num_simulations, 7);
        // Untouched keys keep profile defaults.
        assert_eq!(cfg.training.episodes_per_iteration, 20);
    }

    #[test]
    fn unknown_keys_are_rejected_with_field_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mission.toml");
        std::fs::write(&path, "[search]\nnum_simulatons = 7\n").unwrap();
        let err = load_config(Some(&path), None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("num_simulatons"), "error was: {msg}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mission.toml");
        std::fs::write(&path, "[kernel]\nlength_scale = -1.0\n").unwrap();
        let err = load_config(Some(&path), None).unwrap_err();
        assert!(err.to_string().contains("kernel.length_scale"));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = MissionConfig::default_for(Profile::Desk);
        let text = cfg.to_toml().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frozen.toml");
        std::fs::write(&path, text).unwrap();
        let reloaded = load_config(Some(&path), None).unwrap();
        assert_eq!(reloaded.to_toml().unwrap(), cfg.to_toml().unwrap());
    }

    #[test]
    fn ablation_variants_flip_exactly_one_toggle() {
        let base = MissionConfig::default_for(Profile::Desk);

        let mut fixed_window = base.clone();
        AblationVariant::FixedWindow.apply(&mut fixed_window);
        for i in 0..100 {
            assert_eq!(
                crate::training::window_size(i, &fixed_window.schedules),
                fixed_window.schedules.window_max
            );
        }

        let mut fixed_expl = base.clone();
        AblationVariant::FixedExploration.apply(&mut fixed_expl);
        for i in 0..50 {
            let (c1, delta) = crate::training::exploration_constants(i, &fixed_expl.schedules);
            assert_eq!(c1, 4.0);
            assert_eq!(delta, 0.3);
        }

        let mut enc5 = base.clone();
        AblationVariant::Encoder5.apply(&mut enc5);
        assert_eq!(enc5.net.encoder_blocks, 5);
        assert_eq!(enc5.schedules.c1_start, base.schedules.c1_start);

        assert!(AblationVariant::from_str("nope").is_err());
        assert_eq!(
            AblationVariant::from_str("no_history").unwrap(),
            AblationVariant::NoHistory
        );
    }
}
