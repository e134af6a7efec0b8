//! Oriented boxes, Gaussian target splatting and peak decoding.

use serde::{Deserialize, Serialize};

use super::model::HeadMaps;
use crate::bev::GridSpec;
use crate::geometry::{OrientedRect, Pose2, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetClass {
    Vehicle,
    Pedestrian,
}

impl DetClass {
    pub const ALL: [DetClass; 2] = [DetClass::Vehicle, DetClass::Pedestrian];

    pub fn channel(self) -> usize {
        match self {
            DetClass::Vehicle => 0,
            DetClass::Pedestrian => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    /// Ego-frame center in meters.
    pub center: Vec2,
    pub yaw: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub class: DetClass,
    pub score: f64,
    pub is_ego: bool,
}

impl OrientedBox {
    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.center.x, self.center.y, self.yaw)
    }

    pub fn rect(&self) -> OrientedRect {
        OrientedRect::new(self.pose(), self.half_length, self.half_width)
    }
}

/// CornerNet-style radius (in cells) such that a corner displaced by it keeps
/// an IoU of at least `min_overlap` with the true box of size `h` by `w` cells.
pub fn gaussian_radius(h: f64, w: f64, min_overlap: f64) -> f64 {
    let (a1, b1, c1) = (1.0, h + w, w * h * (1.0 - min_overlap) / (1.0 + min_overlap));
    let r1 = (b1 + (b1 * b1 - 4.0 * a1 * c1).sqrt()) / 2.0;
    let (a2, b2, c2) = (4.0, 2.0 * (h + w), (1.0 - min_overlap) * w * h);
    let r2 = (b2 + (b2 * b2 - 4.0 * a2 * c2).sqrt()) / 2.0;
    let (a3, b3, c3) = (4.0 * min_overlap, -2.0 * min_overlap * (h + w), (min_overlap - 1.0) * w * h);
    let r3 = (b3 + (b3 * b3 - 4.0 * a3 * c3).sqrt()) / 2.0;
    r1.min(r2).min(r3)
}

pub const MIN_OVERLAP: f64 = 0.7;
pub const MIN_RADIUS: usize = 1;

/// Integer splat radius of a box on `spec`.
pub fn splat_radius(b: &OrientedBox, spec: &GridSpec) -> usize {
    let l = 2.0 * b.half_length / spec.pillar_size;
    let w = 2.0 * b.half_width / spec.pillar_size;
    (gaussian_radius(l, w, MIN_OVERLAP).floor() as usize).max(MIN_RADIUS)
}

/// Draws a Gaussian bump centered on `(row, col)` into `map` (`rows x cols`), keeping the max.
pub fn draw_gaussian(map: &mut [f32], rows: usize, cols: usize, row: usize, col: usize, radius: usize) {
    let sigma = (2 * radius + 1) as f64 / 6.0;
    let r = radius as isize;
    for dr in -r..=r {
        for dc in -r..=r {
            let (rr, cc) = (row as isize + dr, col as isize + dc);
            if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                continue;
            }
            let v = (-((dr * dr + dc * dc) as f64) / (2.0 * sigma * sigma)).exp() as f32;
            let i = rr as usize * cols + cc as usize;
            if v > map[i] {
                map[i] = v;
            }
        }
    }
}

/// Centerness targets `[2, rows, cols]` for boxes in the ego frame; also returns the
/// center cell of every box that falls inside the grid (`None` otherwise).
pub fn splat_boxes(boxes: &[OrientedBox], spec: &GridSpec) -> (Vec<f32>, Vec<Option<(usize, usize)>>) {
    let (rows, cols) = (spec.rows(), spec.cols());
    let hw = rows * cols;
    let mut map = vec![0.0f32; 2 * hw];
    let mut cells = Vec::with_capacity(boxes.len());
    for b in boxes {
        let cell = spec.cell_of(b.center);
        if let Some((r, c)) = cell {
            let ch = b.class.channel();
            draw_gaussian(&mut map[ch * hw..(ch + 1) * hw], rows, cols, r, c, splat_radius(b, spec));
        }
        cells.push(cell);
    }
    (map, cells)
}

/// Peaks of one centerness channel: cells at the maximum of their `pool_k` window
/// (ties resolved toward the first cell in row-major order) and above `threshold`.
pub fn find_peaks(map: &[f32], rows: usize, cols: usize, threshold: f32, pool_k: usize) -> Vec<(usize, usize)> {
    let h = (pool_k / 2) as isize;
    let mut out = vec![];
    for r in 0..rows {
        for c in 0..cols {
            let v = map[r * cols + c];
            if v <= threshold {
                continue;
            }
            let mut peak = true;
            'win: for dr in -h..=h {
                for dc in -h..=h {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                        continue;
                    }
                    let u = map[rr as usize * cols + cc as usize];
                    let earlier = (dr, dc) < (0, 0);
                    if u > v || (u == v && earlier) {
                        peak = false;
                        break 'win;
                    }
                }
            }
            if peak {
                out.push((r, c));
            }
        }
    }
    out
}

pub const DEFAULT_THRESHOLD: f32 = 0.3;
pub const DEFAULT_POOL: usize = 3;

/// Boxes at centerness peaks. The highest-scoring vehicle whose footprint covers the
/// ego anchor cell is flagged as the ego.
pub fn decode_detections(maps: &HeadMaps, spec: &GridSpec, threshold: f32, pool_k: usize) -> Vec<OrientedBox> {
    let (rows, cols) = (maps.rows, maps.cols);
    let hw = rows * cols;
    let mut out = vec![];
    for class in DetClass::ALL {
        let ch = class.channel();
        for (r, c) in find_peaks(&maps.center[ch * hw..(ch + 1) * hw], rows, cols, threshold, pool_k) {
            let s = maps.orient[maps.idx(0, r, c)] as f64;
            let co = maps.orient[maps.idx(1, r, c)] as f64;
            let hl = (maps.boxes[maps.idx(0, r, c)] as f64).clamp(-5.0, 5.0).exp();
            let hwid = (maps.boxes[maps.idx(1, r, c)] as f64).clamp(-5.0, 5.0).exp();
            out.push(OrientedBox {
                center: spec.cell_center(r, c),
                yaw: s.atan2(co),
                half_length: hl,
                half_width: hwid,
                class,
                score: maps.center[maps.idx(ch, r, c)] as f64,
                is_ego: false,
            });
        }
    }
    let (er, ec) = spec.ego_cell();
    let anchor = spec.cell_center(er, ec);
    let ego = out
        .iter()
        .enumerate()
        .filter(|(_, b)| b.class == DetClass::Vehicle && b.rect().contains(anchor))
        .max_by(|a, b| a.1.score.total_cmp(&b.1.score).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i);
    if let Some(i) = ego {
        out[i].is_ego = true;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump_maps(spec: &GridSpec, bumps: &[(usize, usize, f32)]) -> HeadMaps {
        let mut m = HeadMaps::zeros(spec.rows(), spec.cols());
        for &(r, c, peak) in bumps {
            let cols = m.cols;
            let rows = m.rows;
            let mut g = vec![0.0; rows * cols];
            draw_gaussian(&mut g, rows, cols, r, c, 2);
            for (i, v) in g.iter().enumerate() {
                m.center[i] = m.center[i].max(v * peak);
            }
        }
        m
    }

    #[test]
    fn radius_matches_reference_values() {
        // Frozen from an independent evaluation of the three quadratic cases.
        let r = gaussian_radius(9.0, 4.0, 0.7);
        assert!((r - 1.5324973548).abs() < 1e-9, "{r}");
        assert!(gaussian_radius(40.0, 40.0, 0.7) > gaussian_radius(10.0, 10.0, 0.7));
    }

    #[test]
    fn single_bump_decodes_one_box() {
        let spec = GridSpec::desk();
        let m = bump_maps(&spec, &[(40, 40, 0.9)]);
        let d = decode_detections(&m, &spec, 0.3, 3);
        assert_eq!(d.len(), 1);
        assert_eq!(spec.cell_of(d[0].center), Some((40, 40)));
        assert!((d[0].score - 0.9).abs() < 1e-6);
    }

    #[test]
    fn adjacent_bumps_are_suppressed() {
        let spec = GridSpec::desk();
        let m = bump_maps(&spec, &[(40, 40, 0.9), (40, 41, 0.9)]);
        assert_eq!(decode_detections(&m, &spec, 0.3, 3).len(), 1);
        let m = bump_maps(&spec, &[(40, 40, 0.9), (40, 41, 0.8)]);
        let d = decode_detections(&m, &spec, 0.3, 3);
        assert_eq!(d.len(), 1);
        assert_eq!(spec.cell_of(d[0].center), Some((40, 40)));
    }

    #[test]
    fn empty_map_decodes_nothing() {
        let spec = GridSpec::desk();
        assert!(decode_detections(&HeadMaps::zeros(160, 160), &spec, 0.3, 3).is_empty());
    }

    #[test]
    fn ego_flag_goes_to_box_over_anchor() {
        let spec = GridSpec::desk();
        let (er, ec) = spec.ego_cell();
        let mut m = bump_maps(&spec, &[(er, ec, 0.8), (er, ec + 20, 0.9)]);
        let hw = m.rows * m.cols;
        for i in 0..hw {
            m.orient[hw + i] = 1.0;
            m.boxes[i] = 2.25f32.ln();
            m.boxes[hw + i] = 0.0;
        }
        let d = decode_detections(&m, &spec, 0.3, 3);
        assert_eq!(d.len(), 2);
        let ego: Vec<_> = d.iter().filter(|b| b.is_ego).collect();
        assert_eq!(ego.len(), 1);
        assert_eq!(spec.cell_of(ego[0].center), Some((er, ec)));
    }
}
