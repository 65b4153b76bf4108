//! Bird's-eye-view occupancy grid and prediction/ground-truth overlays.
//! Row 0 of every grid and image is the far edge (largest z).

use crate::geometry::BevRect;
use crate::image::Raster;
use serde::{Deserialize, Serialize};

pub const PRED_COLOR: [u8; 3] = [0, 0, 255];
pub const GT_COLOR: [u8; 3] = [255, 0, 0];
pub const BACKGROUND: [u8; 3] = [16, 16, 16];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Meters per cell along both axes.
    pub resolution: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: 0.4,
            x_min: -40.0,
            x_max: 40.0,
            z_min: 0.0,
            z_max: 100.0,
        }
    }
}

impl GridConfig {
    pub fn width(&self) -> usize {
        ((self.x_max - self.x_min) / self.resolution).round() as usize
    }

    pub fn height(&self) -> usize {
        ((self.z_max - self.z_min) / self.resolution).round() as usize
    }

    /// Half-open column and row ranges of cells whose centers fall inside
    /// `r`, clipped to the grid.
    fn cell_span(&self, r: &BevRect) -> (usize, usize, usize, usize) {
        let [x1, z1, x2, z2] = r.canonical().to_meters();
        let (w, h) = (self.width() as f64, self.height() as f64);
        let first = |v: f64| v.ceil().clamp(0.0, f64::MAX);
        let col_lo = first((x1 - self.x_min) / self.resolution - 0.5).min(w);
        let col_hi = first((x2 - self.x_min) / self.resolution - 0.5).min(w);
        // rows count downward from z_max
        let row_lo = first((self.z_max - z2) / self.resolution - 0.5).min(h);
        let row_hi = first((self.z_max - z1) / self.resolution - 0.5).min(h);
        (
            col_lo as usize,
            col_hi as usize,
            row_lo as usize,
            row_hi as usize,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    pub width: usize,
    pub height: usize,
    /// Row-major occupancy, 1 = occupied.
    pub cells: Vec<u8>,
}

impl GridMap {
    pub fn empty(cfg: &GridConfig) -> Self {
        let (width, height) = (cfg.width(), cfg.height());
        Self {
            width,
            height,
            cells: vec![0; width * height],
        }
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.cells[row * self.width + col]
    }

    /// Grayscale raster, occupied cells white.
    pub fn to_raster(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self
                .cells
                .iter()
                .map(|&c| if c != 0 { 255 } else { 0 })
                .collect(),
        }
    }
}

/// Marks every cell whose center lies inside any of `rects`.
pub fn rasterize_grid(rects: &[BevRect], cfg: &GridConfig) -> GridMap {
    let mut grid = GridMap::empty(cfg);
    for r in rects {
        let (c0, c1, r0, r1) = cfg.cell_span(r);
        for row in r0..r1 {
            grid.cells[row * grid.width + c0..row * grid.width + c1].fill(1);
        }
    }
    grid
}

fn draw_outline(img: &mut Raster, cfg: &GridConfig, r: &BevRect, color: [u8; 3]) {
    let (c0, c1, r0, r1) = cfg.cell_span(r);
    if c0 >= c1 || r0 >= r1 {
        // smaller than a cell: mark the cell under the center, if any
        let [x1, z1, x2, z2] = r.to_meters();
        let (cx, cz) = (0.5 * (x1 + x2), 0.5 * (z1 + z2));
        let col = ((cx - cfg.x_min) / cfg.resolution).floor();
        let row = ((cfg.z_max - cz) / cfg.resolution).floor();
        if col >= 0.0 && row >= 0.0 && (col as usize) < img.width && (row as usize) < img.height {
            img.put(col as usize, row as usize, &color);
        }
        return;
    }
    for col in c0..c1 {
        img.put(col, r0, &color);
        img.put(col, r1 - 1, &color);
    }
    for row in r0..r1 {
        img.put(c0, row, &color);
        img.put(c1 - 1, row, &color);
    }
}

/// One pixel per grid cell: ground-truth outlines in red, then predicted
/// outlines in blue on top.
pub fn render_overlay(pred: &[BevRect], gt: &[BevRect], cfg: &GridConfig) -> Raster {
    let mut img = Raster::filled(cfg.width(), cfg.height(), &BACKGROUND);
    for r in gt {
        draw_outline(&mut img, cfg, r, GT_COLOR);
    }
    for r in pred {
        draw_outline(&mut img, cfg, r, PRED_COLOR);
    }
    img
}
