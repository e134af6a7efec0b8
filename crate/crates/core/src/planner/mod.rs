//! Command-conditioned trajectory planning on rotated map-view crops.

pub mod loss;
pub mod model;
pub mod roi;

pub use loss::{loss_cmd, loss_ego, loss_other, loss_refine, motion_loss};
pub use model::{load_planner, plan_sets, refined_plans, save_planner, PlanSet, PlanVars, Planner, PlannerConfig, RefineVars, RefinedPlan};
pub use roi::{roi_warp, GridFrame, RoiTemplate};
