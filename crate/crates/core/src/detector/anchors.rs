use super::DetectorConfig;
use crate::boxes::BBox;

/// Reference boxes for every feature cell, in row-major cell order and then
/// (scale, ratio) order within a cell. Image-pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub height: usize,
    pub width: usize,
    pub per_cell: usize,
    pub anchors: Vec<BBox>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Anchor of scale `s` and ratio `r` has `w = s / sqrt(r)`, `h = s * sqrt(r)`
/// (area `s^2`), centered on the cell center `((j + 0.5) * stride, (i + 0.5) * stride)`.
pub fn make_anchors(height: usize, width: usize, cfg: &DetectorConfig) -> AnchorGrid {
    let stride = f64::from(cfg.feature_stride);
    let shapes: Vec<(f64, f64)> = cfg
        .anchor_scales
        .iter()
        .flat_map(|&s| cfg.anchor_ratios.iter().map(move |&r| (s / r.sqrt(), s * r.sqrt())))
        .collect();
    let mut anchors = Vec::with_capacity(height * width * shapes.len());
    for i in 0..height {
        for j in 0..width {
            let (cx, cy) = ((j as f64 + 0.5) * stride, (i as f64 + 0.5) * stride);
            anchors.extend(shapes.iter().map(|&(w, h)| BBox::from_center(cx, cy, w, h)));
        }
    }
    AnchorGrid { height, width, per_cell: shapes.len(), anchors }
}
