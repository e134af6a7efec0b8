//! Closed-loop evaluation: episodes, scoring and the ablation matrix.

pub mod agent;
pub mod episode;
pub mod matrix;
pub mod score;

pub use agent::{ExpertAgent, GoalTracker, IdleAgent, StudentAgent};
pub use episode::{run_episode, AgentTrace, Decision, EpisodeConfig, EpisodeLog, EpisodeMeta, Infraction, NoisePreset, Policy, Sensors, Termination, TickRecord};
pub use matrix::{map_by_name, run_matrix, AgentKind, AgentSpec, EvalRoute, MatrixConfig, MatrixReport, ReportRow, Stat};
pub use score::{score_route, EpisodeScore, InfractionCounts, Penalties};
