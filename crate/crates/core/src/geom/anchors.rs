use serde::{Deserialize, Serialize};

use super::{BoundingBox, GeomError};
use crate::exec::Exec;

/// Grid layout and shape set for anchor tiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub stride: f64,
    /// Anchor side length (square-root of area) in pixels.
    pub scales: Vec<f64>,
    /// Width / height.
    pub ratios: Vec<f64>,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        Self {
            stride: 16.0,
            scales: vec![128.0, 256.0, 512.0],
            ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub bbox: BoundingBox,
    pub scale_index: usize,
    pub ratio_index: usize,
    pub row: usize,
    pub col: usize,
}

/// Tiles `scales x ratios` anchors over every cell of a `grid_w x grid_h` grid.
///
/// Output order is row-major over cells, then scale, then ratio. Cell
/// `(row, col)` is centered at `((col + 0.5) * stride, (row + 0.5) * stride)`.
pub fn generate_anchors(
    grid_w: usize,
    grid_h: usize,
    stride: f64,
    scales: &[f64],
    ratios: &[f64],
) -> Result<Vec<Anchor>, GeomError> {
    generate_anchors_with(Exec::default(), grid_w, grid_h, stride, scales, ratios)
}

pub fn generate_anchors_with(
    exec: Exec,
    grid_w: usize,
    grid_h: usize,
    stride: f64,
    scales: &[f64],
    ratios: &[f64],
) -> Result<Vec<Anchor>, GeomError> {
    if grid_w == 0 || grid_h == 0 || !(stride > 0.0 && stride.is_finite()) {
        return Err(GeomError::EmptyGrid);
    }
    let positive = |xs: &[f64]| !xs.is_empty() && xs.iter().all(|v| *v > 0.0 && v.is_finite());
    if !positive(scales) {
        return Err(GeomError::InvalidAnchorParams("scale"));
    }
    if !positive(ratios) {
        return Err(GeomError::InvalidAnchorParams("ratio"));
    }

    // Shapes are shared by every cell.
    let shapes: Vec<(usize, usize, f64, f64)> = scales
        .iter()
        .enumerate()
        .flat_map(|(si, &s)| {
            ratios.iter().enumerate().map(move |(ri, &r)| {
                let root = r.sqrt();
                (si, ri, s * root, s / root)
            })
        })
        .collect();

    let anchors = exec.flat_map_range(grid_h, |row| {
        let shapes = &shapes;
        (0..grid_w).flat_map(move |col| {
            let cx = (col as f64 + 0.5) * stride;
            let cy = (row as f64 + 0.5) * stride;
            shapes.iter().map(move |&(scale_index, ratio_index, w, h)| Anchor {
                bbox: BoundingBox::from_center(cx, cy, w, h)
                    .expect("positive finite anchor shape"),
                scale_index,
                ratio_index,
                row,
                col,
            })
        })
    });
    Ok(anchors)
}
