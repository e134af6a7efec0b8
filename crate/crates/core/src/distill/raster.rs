//! Ground-truth map-view input of the privileged planner.

use crate::bev::GridSpec;
use crate::geometry::OrientedRect;
use crate::microworld::recorder::Frame;
use crate::microworld::world::ActorClass;

/// Road, solid, broken, vehicle occupancy, vehicle heading (sin, cos), pedestrian occupancy.
pub const PRIV_CHANNELS: usize = 7;
pub const CH_VEHICLE: usize = 3;
pub const CH_SIN: usize = 4;
pub const CH_COS: usize = 5;
pub const CH_PEDESTRIAN: usize = 6;

/// Channel-major `[7, rows, cols]` raster on the pillar grid.
pub fn rasterize_gt(frame: &Frame, spec: &GridSpec) -> Vec<f32> {
    let (rows, cols) = (spec.rows(), spec.cols());
    let hw = rows * cols;
    let mut out = vec![0.0f32; PRIV_CHANNELS * hw];
    for (ch, r) in frame.sem_rasters.channels().iter().enumerate() {
        out[ch * hw..(ch + 1) * hw].copy_from_slice(&r.to_f32());
    }
    for a in &frame.actors {
        let local = frame.ego_pose.relative(&a.pose);
        let rect = OrientedRect::new(local, a.half_length, a.half_width);
        // Cell-center inclusion over the rectangle's bounding box.
        let corners = rect.corners();
        let (mut lo, mut hi) = (corners[0], corners[0]);
        for c in &corners[1..] {
            lo.x = lo.x.min(c.x);
            lo.y = lo.y.min(c.y);
            hi.x = hi.x.max(c.x);
            hi.y = hi.y.max(c.y);
        }
        let c0 = (((lo.x - spec.x_min) / spec.pillar_size).floor().max(0.0)) as usize;
        let c1 = (((hi.x - spec.x_min) / spec.pillar_size).ceil().max(0.0) as usize).min(cols);
        let r0 = (((lo.y - spec.y_min) / spec.pillar_size).floor().max(0.0)) as usize;
        let r1 = (((hi.y - spec.y_min) / spec.pillar_size).ceil().max(0.0) as usize).min(rows);
        for row in r0..r1 {
            for col in c0..c1 {
                if !rect.contains(spec.cell_center(row, col)) {
                    continue;
                }
                let i = row * cols + col;
                match a.class {
                    ActorClass::Vehicle => {
                        out[CH_VEHICLE * hw + i] = 1.0;
                        out[CH_SIN * hw + i] = local.yaw.sin() as f32;
                        out[CH_COS * hw + i] = local.yaw.cos() as f32;
                    }
                    ActorClass::Pedestrian => out[CH_PEDESTRIAN * hw + i] = 1.0,
                }
            }
        }
    }
    out
}
