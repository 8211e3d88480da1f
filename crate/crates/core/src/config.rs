//! Hyperparameters and run configuration, loadable from TOML.
//!
//! Every key is optional; missing keys take the defaults below.
//!
//! ```toml
//! episodes = 3000
//! n_warmup = 300
//! segment_steps = 5        # K
//! recursion_depth = 1      # J
//! n_updates = 20
//! batch_size = 64
//! pair_batch_size = 64
//! k_relabel = 4
//! replay_capacity = 5000   # episodes kept
//! lr_anticipation = 2.0
//! anticipation_step = "gradient"   # or "max_normalized"
//! eval_interval = 100
//! eval_tasks = 0           # 0 = every (start, goal) pair
//! hierarchy = true         # false trains the flat baseline
//! early_stop_subgoal = false
//! # horizon = 196         # default: 4 |S|
//! seed = 0
//!
//! [epsilon]
//! initial = 1.0
//! final = 0.1
//! decay_episodes = 1500    # default: half of `episodes`
//!
//! [critic]
//! alpha0 = 0.5
//! lr_decay_visits = 1000.0
//! init_value = 0.0
//!
//! [target]
//! periodic = { every = 100 }   # or: polyak = { rate = 0.05 }
//!
//! [loss]
//! lambda = 1.0
//! c_prog = 1.0
//! c_non_trivial = 1.0
//! ```

use serde::{Deserialize, Serialize};

use crate::anticipation::{LossConfig, StepRule};
use crate::critic::{CriticConfig, TargetMode};
use crate::error::{Error, Result};
use crate::replay::{DEFAULT_CAPACITY, DEFAULT_K_RELABEL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_value: f64,
    /// Linear decay length; `None` means half of the training episodes.
    pub decay_episodes: Option<usize>,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { initial: 1.0, final_value: 0.1, decay_episodes: None }
    }
}

impl EpsilonSchedule {
    /// Exploration rate for 1-based `episode` out of `total`.
    pub fn at(&self, episode: usize, total: usize) -> f64 {
        let span = self.decay_episodes.unwrap_or(total / 2).max(1);
        let frac = (episode.saturating_sub(1) as f64 / span as f64).min(1.0);
        self.initial + (self.final_value - self.initial) * frac
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticParams {
    pub alpha0: f64,
    pub lr_decay_visits: f64,
    pub init_value: f64,
}

impl Default for CriticParams {
    fn default() -> Self {
        let c = CriticConfig::for_horizon(1);
        Self { alpha0: c.alpha0, lr_decay_visits: c.lr_decay_visits, init_value: c.init_value }
    }
}

impl CriticParams {
    /// `init_value` is clamped into `[-horizon, 0]`, so a large negative value
    /// starts every entry at the floor.
    pub fn for_horizon(&self, horizon: usize) -> CriticConfig {
        let floor = -(horizon as f64);
        CriticConfig {
            alpha0: self.alpha0,
            lr_decay_visits: self.lr_decay_visits,
            init_value: self.init_value.clamp(floor, 0.0),
            floor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub episodes: usize,
    pub n_warmup: usize,
    /// K: primitive steps per plan-act segment.
    pub segment_steps: usize,
    /// J: recursive applications of the anticipation model.
    pub recursion_depth: usize,
    /// Update iterations after each episode.
    pub n_updates: usize,
    pub batch_size: usize,
    pub pair_batch_size: usize,
    pub k_relabel: usize,
    pub replay_capacity: usize,
    pub epsilon: EpsilonSchedule,
    pub lr_anticipation: f64,
    pub anticipation_step: StepRule,
    pub critic: CriticParams,
    pub target: TargetMode,
    pub loss: LossConfig<f64>,
    pub eval_interval: usize,
    /// Number of sampled evaluation tasks; 0 evaluates every pair.
    pub eval_tasks: usize,
    pub hierarchy: bool,
    pub early_stop_subgoal: bool,
    /// Horizon override; `None` keeps the map default of `4 |S|`.
    pub horizon: Option<usize>,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            episodes: 3000,
            n_warmup: 300,
            segment_steps: 5,
            recursion_depth: 1,
            n_updates: 20,
            batch_size: 64,
            pair_batch_size: 64,
            k_relabel: DEFAULT_K_RELABEL,
            replay_capacity: DEFAULT_CAPACITY,
            epsilon: EpsilonSchedule::default(),
            lr_anticipation: 2.0,
            anticipation_step: StepRule::Gradient,
            critic: CriticParams::default(),
            target: TargetMode::default(),
            loss: LossConfig::default(),
            eval_interval: 100,
            eval_tasks: 0,
            hierarchy: true,
            early_stop_subgoal: false,
            horizon: None,
            seed: 0,
        }
    }
}

impl Hyperparams {
    /// Preset for corridor comparisons against the flat baseline: a short
    /// warm-up, frequent evaluation, and values starting at the horizon
    /// floor so the planner only anticipates through pairs already seen.
    pub fn corridor_comparison() -> Self {
        Self {
            episodes: 800,
            n_warmup: 10,
            eval_interval: 5,
            critic: CriticParams { init_value: -1.0e9, ..CriticParams::default() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.segment_steps == 0 {
            return fail("segment_steps (K) must be at least 1");
        }
        if self.recursion_depth == 0 {
            return fail("recursion_depth (J) must be at least 1");
        }
        if self.episodes == 0 {
            return fail("episodes must be positive");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return fail("batch_size and replay_capacity must be positive");
        }
        if self.eval_interval == 0 {
            return fail("eval_interval must be positive");
        }
        for (name, v) in [("epsilon.initial", self.epsilon.initial), ("epsilon.final", self.epsilon.final_value)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.critic.init_value.is_nan() {
            return fail("critic.init_value must be a number");
        }
        if !(self.critic.alpha0 > 0.0 && self.critic.alpha0 <= 1.0) {
            return fail("critic.alpha0 must lie in (0, 1]");
        }
        if self.loss.lambda < 0.0 || self.loss.c_prog < 0.0 || self.loss.c_non_trivial < 0.0 {
            return fail("loss weights and margins must be non-negative");
        }
        match self.target {
            TargetMode::Polyak { rate } if !(rate > 0.0 && rate <= 1.0) => fail("target polyak rate must lie in (0, 1]"),
            TargetMode::Periodic { every: 0 } => fail("target period must be positive"),
            _ => Ok(()),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let hp: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        hp.validate()?;
        Ok(hp)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("hyperparameters serialize")
    }
}

/// Environment dynamics selected on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Deterministic,
    Slip(f64),
}

impl EnvKind {
    pub fn slip_prob(self) -> f64 {
        match self {
            EnvKind::Deterministic => 0.0,
            EnvKind::Slip(p) => p,
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    /// `det` or `slip=<p>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "det" {
            return Ok(EnvKind::Deterministic);
        }
        if let Some(p) = s.strip_prefix("slip=") {
            let p: f64 = p.parse().map_err(|_| Error::Config(format!("bad slip probability in {s:?}")))?;
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("slip probability {p} not in [0, 1)")));
            }
            return Ok(if p == 0.0 { EnvKind::Deterministic } else { EnvKind::Slip(p) });
        }
        Err(Error::Config(format!("unknown env kind {s:?}; expected det or slip=<p>")))
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub map_path: String,
    pub env: EnvKind,
    pub hyperparams: Hyperparams,
    pub out_dir: String,
    pub exact_argmin: bool,
    pub oracle_critic: bool,
    pub early_stop_subgoal: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let hp = Hyperparams::default();
        assert_eq!(Hyperparams::from_toml(&hp.to_toml()).unwrap(), hp);
    }

    #[test]
    fn partial_config_overrides_defaults() {
        let hp = Hyperparams::from_toml(
            "episodes = 50\nseed = 9\n[target]\npolyak = { rate = 0.1 }\n[loss]\nlambda = 0.5\n",
        )
        .unwrap();
        assert_eq!(hp.episodes, 50);
        assert_eq!(hp.seed, 9);
        assert_eq!(hp.target, TargetMode::Polyak { rate: 0.1 });
        assert_eq!(hp.loss.lambda, 0.5);
        assert_eq!(hp.loss.c_prog, 1.0);
        assert_eq!(hp.segment_steps, 5);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(Hyperparams::from_toml("segment_steps = 0").is_err());
        assert!(Hyperparams::from_toml("recursion_depth = 0").is_err());
        assert!(Hyperparams::from_toml("unknown_key = 1").is_err());
        assert!(Hyperparams::from_toml("[epsilon]\ninitial = 2.0").is_err());
    }

    #[test]
    fn epsilon_decays_linearly_over_half() {
        let e = EpsilonSchedule::default();
        assert_eq!(e.at(1, 100), 1.0);
        assert!((e.at(26, 100) - 0.55).abs() < 1e-12);
        assert!((e.at(51, 100) - 0.1).abs() < 1e-12);
        assert!((e.at(100, 100) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn comparison_preset_starts_at_the_floor() {
        let hp = Hyperparams::corridor_comparison();
        hp.validate().unwrap();
        assert_eq!(hp.critic.for_horizon(160).init_value, -160.0);
        assert_eq!((hp.episodes, hp.n_warmup, hp.segment_steps), (800, 10, 5));
    }

    #[test]
    fn init_value_is_clamped_to_horizon() {
        let c = CriticParams { init_value: -1e9, ..CriticParams::default() };
        assert_eq!(c.for_horizon(36).init_value, -36.0);
        assert_eq!(CriticParams { init_value: 3.0, ..c }.for_horizon(36).init_value, 0.0);
    }

    #[test]
    fn env_kind_parsing() {
        assert_eq!("det".parse::<EnvKind>().unwrap(), EnvKind::Deterministic);
        assert_eq!("slip=0.2".parse::<EnvKind>().unwrap(), EnvKind::Slip(0.2));
        assert!("slip=1.5".parse::<EnvKind>().is_err());
        assert!("wobbly".parse::<EnvKind>().is_err());
    }
}
