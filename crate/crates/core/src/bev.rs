//! Metric, ego-centered bird's-eye-view grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Pillar grid layout. Rows index `y`, columns index `x`, both increasing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub pillar_size: f64,
    /// Feature map stride relative to the pillar grid.
    pub out_stride: usize,
    /// Feature channels of the backbone output.
    pub channels: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl GridSpec {
    /// Desk-scale grid: 0.5 m pillars over x in [-10, 70], y in [-40, 40].
    pub fn desk() -> Self {
        Self { x_min: -10.0, x_max: 70.0, y_min: -40.0, y_max: 40.0, pillar_size: 0.5, out_stride: 2, channels: 64 }
    }

    /// Full-resolution layout with 0.25 m pillars and 192 channels.
    pub fn full() -> Self {
        Self { pillar_size: 0.25, channels: 192, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |span: f64, what: &str| {
            let n = span / self.pillar_size;
            if span <= 0.0 || (n - n.round()).abs() > 1e-9 {
                Err(Error::InvalidArgument(format!("{what} span {span} is not a multiple of pillar size {}", self.pillar_size)))
            } else {
                Ok(())
            }
        };
        check(self.x_max - self.x_min, "x")?;
        check(self.y_max - self.y_min, "y")?;
        if self.out_stride == 0 || self.rows() % self.out_stride != 0 || self.cols() % self.out_stride != 0 {
            return Err(Error::InvalidArgument("grid is not divisible by the output stride".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        ((self.y_max - self.y_min) / self.pillar_size).round() as usize
    }

    pub fn cols(&self) -> usize {
        ((self.x_max - self.x_min) / self.pillar_size).round() as usize
    }

    pub fn out_rows(&self) -> usize {
        self.rows() / self.out_stride
    }

    pub fn out_cols(&self) -> usize {
        self.cols() / self.out_stride
    }

    pub fn out_cell_size(&self) -> f64 {
        self.pillar_size * self.out_stride as f64
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x_min && p.x < self.x_max && p.y >= self.y_min && p.y < self.y_max
    }

    /// Pillar `(row, col)` holding `p`, if in range.
    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        if !self.contains(p) {
            return None;
        }
        let row = ((p.y - self.y_min) / self.pillar_size).floor() as usize;
        let col = ((p.x - self.x_min) / self.pillar_size).floor() as usize;
        Some((row.min(self.rows() - 1), col.min(self.cols() - 1)))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Vec2 {
        Vec2::new(self.x_min + (col as f64 + 0.5) * self.pillar_size, self.y_min + (row as f64 + 0.5) * self.pillar_size)
    }

    /// Continuous pixel coordinates `(col, row)` on the pillar grid, where
    /// integers are cell centers.
    pub fn to_pixel(&self, p: Vec2) -> (f64, f64) {
        ((p.x - self.x_min) / self.pillar_size - 0.5, (p.y - self.y_min) / self.pillar_size - 0.5)
    }

    /// Same as [`GridSpec::to_pixel`] on the strided feature grid.
    pub fn to_out_pixel(&self, p: Vec2) -> (f64, f64) {
        let s = self.out_cell_size();
        ((p.x - self.x_min) / s - 0.5, (p.y - self.y_min) / s - 0.5)
    }

    pub fn out_cell_center(&self, row: usize, col: usize) -> Vec2 {
        let s = self.out_cell_size();
        Vec2::new(self.x_min + (col as f64 + 0.5) * s, self.y_min + (row as f64 + 0.5) * s)
    }

    /// Pillar holding the ego origin.
    pub fn ego_cell(&self) -> (usize, usize) {
        self.cell_of(Vec2::ZERO).expect("grid must contain the ego origin")
    }
}

/// Bit-packed binary raster on a [`GridSpec`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitRaster {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<u8>,
}

impl BitRaster {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, bits: vec![0; (rows * cols).div_ceil(8)] }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        let i = row * self.cols + col;
        self.bits[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        let i = row * self.cols + col;
        if v {
            self.bits[i / 8] |= 1 << (i % 8);
        } else {
            self.bits[i / 8] &= !(1 << (i % 8));
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        (0..self.rows * self.cols).map(|i| (self.bits[i / 8] >> (i % 8) & 1) as f32).collect()
    }
}

/// Ground-truth semantic map rasters: drivable road, solid and broken lane boundaries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemRasters {
    pub road: BitRaster,
    pub solid: BitRaster,
    pub broken: BitRaster,
    /// Cells whose label is known; cleared where a rotation pulled content from outside the grid.
    pub valid: Option<BitRaster>,
}

impl SemRasters {
    pub fn empty(spec: &GridSpec) -> Self {
        let r = BitRaster::new(spec.rows(), spec.cols());
        Self { road: r.clone(), solid: r.clone(), broken: r, valid: None }
    }

    pub fn channels(&self) -> [&BitRaster; 3] {
        [&self.road, &self.solid, &self.broken]
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid.as_ref().map(|v| v.get(row, col)).unwrap_or(true)
    }
}
