//! Tabular goal-conditioned reinforcement learning with subgoal
//! anticipation.
//!
//! A goal-conditioned critic learns `V(s, g)` with hindsight relabeling. An
//! anticipation model proposes intermediate subgoals that are consistent
//! with the critic's value geometry, `V(s, g) ≈ V(s, ŝ) + V(ŝ, g)`. Exact
//! oracles (BFS distances, expected hitting times) make every learned
//! quantity measurable, and [`verify`] checks the resulting cost bounds.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod agent;
pub mod anticipation;
pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod critic;
pub mod error;
pub mod gmdp;
pub mod oracle;
pub mod replay;
pub mod scalar;
pub mod tables;
pub mod value;
pub mod verify;

pub use agent::{evaluate, run_episode, train, Agent, EpisodeReport, EvalReport, MetricsRecord, Phase, SegmentRule};
pub use anticipation::{AnticipationModel, LossBreakdown, LossConfig, ModelMode};
pub use config::{EnvKind, Hyperparams, RunConfig};
pub use critic::{CriticConfig, QTable, TargetMode, TargetQ};
pub use error::{Error, Result};
pub use gmdp::{parse_grid, ActionId, GridSpec, StateId, Trajectory, Transition};
pub use oracle::{DistTable, Distance, HittingTable, OracleTables};
pub use replay::{HerTuple, ReplayBuffer};
pub use scalar::Scalar;
pub use value::{ValueTable, ValueView};
pub use verify::{ErrorConstants, ErrorReport, VerificationReport};

pub type QTable64 = QTable<f64>;
pub type QTable32 = QTable<f32>;
pub type AnticipationModel64 = AnticipationModel<f64>;
pub type AnticipationModel32 = AnticipationModel<f32>;
pub type OracleTables64 = OracleTables<f64>;
pub type OracleTables32 = OracleTables<f32>;
pub type Agent64 = Agent<f64>;
pub type Agent32 = Agent<f32>;
pub type ValueTable64 = ValueTable<f64>;
