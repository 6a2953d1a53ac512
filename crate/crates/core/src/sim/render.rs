use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Scene, TableSpec};
use crate::geometry::{Point2, Point3};

pub const DEPTH_ROWS: usize = 38;
pub const DEPTH_COLS: usize = 64;

/// Overhead range image. Row index grows with table `y`, column index with
/// table `x`; pixel centers sit at the middle of each table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub rows: usize,
    pub cols: usize,
    pub camera_height: f64,
    /// Row-major ranges from the camera, in meters.
    pub values: Vec<f64>,
}

impl DepthImage {
    pub fn background(rows: usize, cols: usize, camera_height: f64) -> Self {
        Self {
            rows,
            cols,
            camera_height,
            values: vec![camera_height; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn is_background(&self, row: usize, col: usize) -> bool {
        self.get(row, col) >= self.camera_height
    }

    /// Every value lies in `(0, H]`.
    pub fn is_valid(&self) -> bool {
        self.values.len() == self.rows * self.cols
            && self.values.iter().all(|&v| v > 0.0 && v <= self.camera_height)
    }

    /// Height map normalized by the camera height: 0 on bare table, growing
    /// with object height. This is the encoder's input representation.
    pub fn normalized_heights(&self) -> Vec<f32> {
        let h = self.camera_height;
        self.values.iter().map(|&v| ((h - v) / h) as f32).collect()
    }
}

/// Table coordinates of the center of pixel `(row, col)`.
pub fn pixel_center(table: &TableSpec, rows: usize, cols: usize, row: usize, col: usize) -> Point2 {
    Point2::new(
        table.x_range.0 + (col as f64 + 0.5) * table.width() / cols as f64,
        table.y_range.0 + (row as f64 + 0.5) * table.depth() / rows as f64,
    )
}

/// Pixel containing table point `p`, if it falls inside the grid.
pub fn pixel_of(table: &TableSpec, rows: usize, cols: usize, p: Point2) -> Option<(usize, usize)> {
    let u = (p.x - table.x_range.0) / table.width() * cols as f64;
    let v = (p.y - table.y_range.0) / table.depth() * rows as f64;
    if u < 0.0 || v < 0.0 || !u.is_finite() || !v.is_finite() {
        return None;
    }
    let (col, row) = (u as usize, v as usize);
    (row < rows && col < cols).then_some((row, col))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Top surface height of the scene geometry covering `p`, if any.
fn top_height(scene: &Scene, p: Point2) -> Option<f64> {
    let mut top: Option<f64> = None;
    for o in &scene.objects {
        let rel = p - o.center;
        let (covers, h) = if o.standing {
            (rel.norm_sq() <= o.radius * o.radius, o.height)
        } else {
            // Lying cylinder: axis along table x, footprint height x diameter.
            (rel.x.abs() <= 0.5 * o.height && rel.y.abs() <= o.radius, 2.0 * o.radius)
        };
        if covers {
            top = Some(top.map_or(h, |t: f64| t.max(h)));
        }
    }
    top
}

/// Orthographic overhead range image of the scene. The gripper is not drawn.
pub fn render_depth(scene: &Scene) -> DepthImage {
    let table = &scene.table;
    let h = table.camera_height;
    let mut img = DepthImage::background(DEPTH_ROWS, DEPTH_COLS, h);
    for row in 0..DEPTH_ROWS {
        for col in 0..DEPTH_COLS {
            let p = pixel_center(table, DEPTH_ROWS, DEPTH_COLS, row, col);
            if let Some(top) = top_height(scene, p) {
                img.values[row * DEPTH_COLS + col] = h - top;
            }
        }
    }
    img
}

/// Back-projects every non-background pixel of `image` to a 3-D point.
pub fn pointcloud_from_depth(table: &TableSpec, image: &DepthImage) -> PointCloud {
    let mut points = Vec::new();
    for row in 0..image.rows {
        for col in 0..image.cols {
            if image.is_background(row, col) {
                continue;
            }
            let p = pixel_center(table, image.rows, image.cols, row, col);
            points.push(Point3::new(p.x, p.y, image.camera_height - image.get(row, col)));
        }
    }
    PointCloud { points }
}

pub fn render_pointcloud(scene: &Scene) -> PointCloud {
    pointcloud_from_depth(&scene.table, &render_depth(scene))
}
