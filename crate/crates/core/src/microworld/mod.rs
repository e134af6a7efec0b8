//! Deterministic 2D driving world, scripted drivers, sensors and dataset recording.

pub mod collect;
pub mod dataset;
pub mod driver;
pub mod ekf;
pub mod expert;
pub mod lidar;
pub mod map;
pub mod recorder;
pub mod route;
pub mod scenarios;
pub mod semantic;
pub mod world;

pub use collect::{collect_episode, CollectConfig, EpisodeSummary};
pub use dataset::{Dataset, FrameSource};
pub use ekf::{ekf_step, EkfConfig, PoseBelief};
pub use expert::{expert_policy, Expert, ExpertOutput, PRIV_FEATURES};
pub use lidar::{lidar_scan, LidarConfig, PointCloud};
pub use map::RoadMap;
pub use recorder::{capture_frame, CaptureConfig, DrivingLog, Frame, Recorder};
pub use route::{sample_route, Goal, Route, RouteConfig};
pub use scenarios::{setup_episode, ScenarioConfig, ScenarioKind};
pub use semantic::{semantic_oracle, NUM_CLASSES};
pub use world::{step_world, ActorClass, ActorState, Control, WorldConfig, WorldState};
