//! Lidar pillar backbone with detection and semantic-map heads.

pub mod augment;
pub mod detect;
pub mod loss;
pub mod model;
pub mod pillars;
pub mod targets;
pub mod train;

pub use augment::{rotate_rasters, rotation_augment};
pub use detect::{decode_detections, DetClass, OrientedBox, DEFAULT_POOL, DEFAULT_THRESHOLD};
pub use loss::{perception_loss, LossBreakdown, LossWeights};
pub use model::{HeadMaps, HeadVars, Perception, PerceptionConfig};
pub use pillars::{paint_flat, pillarize, point_paint, SparsePillars};
pub use targets::{build_targets, frame_pillars, gt_boxes, PerceptionTargets};
pub use train::{train_perception, PerceptionTrainConfig};
