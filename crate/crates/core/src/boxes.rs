//! Axis-aligned box geometry shared by the detector and the evaluator.
//!
//! Boxes are in pixel units with `area = (xmax - xmin) * (ymax - ymin)`.
//! Regression targets use the usual center/log-size parameterization
//! relative to a reference (anchor or proposal) box.

use std::cmp::Ordering;

use thiserror::Error;

/// Largest log-scale a width/height delta may carry when decoding.
pub const MAX_LOG_SCALE: f64 = 6.907_755_278_982_137; // ln(1000)

/// Smallest gt extent used before taking logs during encoding.
const MIN_ENCODE_EXTENT: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum BoxError {
    #[error("reference box has non-positive width or height: {0:?}")]
    DegenerateAnchor(BBox),
}

/// Axis-aligned box, `xmin <= xmax` and `ymin <= ymax`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub const fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self { xmin, ymin, xmax, ymax }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }

    /// True when the box is well ordered and every coordinate is finite.
    pub fn is_valid(&self) -> bool {
        [self.xmin, self.ymin, self.xmax, self.ymax].iter().all(|v| v.is_finite())
            && self.xmin <= self.xmax
            && self.ymin <= self.ymax
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self::new(self.xmin * factor, self.ymin * factor, self.xmax * factor, self.ymax * factor)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Regression offsets of a box relative to a reference box.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxDelta {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxDelta {
    pub const fn new(tx: f64, ty: f64, tw: f64, th: f64) -> Self {
        Self { tx, ty, tw, th }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

/// A box with a confidence, a class and a stable tie-break key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
    pub class_index: usize,
    pub rank: usize,
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn check_reference(anchor: &BBox) -> Result<(), BoxError> {
    if anchor.width() > 0.0 && anchor.height() > 0.0 {
        Ok(())
    } else {
        Err(BoxError::DegenerateAnchor(*anchor))
    }
}

pub fn encode(gt: &BBox, anchor: &BBox) -> Result<BoxDelta, BoxError> {
    check_reference(anchor)?;
    let (xa, ya) = anchor.center();
    let (wa, ha) = (anchor.width(), anchor.height());
    let (xc, yc) = gt.center();
    let w = gt.width().max(MIN_ENCODE_EXTENT);
    let h = gt.height().max(MIN_ENCODE_EXTENT);
    Ok(BoxDelta::new((xc - xa) / wa, (yc - ya) / ha, (w / wa).ln(), (h / ha).ln()))
}

pub fn decode(delta: &BoxDelta, anchor: &BBox) -> Result<BBox, BoxError> {
    check_reference(anchor)?;
    let (xa, ya) = anchor.center();
    let (wa, ha) = (anchor.width(), anchor.height());
    let tw = delta.tw.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE);
    let th = delta.th.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE);
    Ok(BBox::from_center(xa + delta.tx * wa, ya + delta.ty * ha, wa * tw.exp(), ha * th.exp()))
}

/// Clamps every coordinate into `[0, width] x [0, height]`.
pub fn clip(b: &BBox, width: f64, height: f64) -> BBox {
    BBox::new(b.xmin.clamp(0.0, width), b.ymin.clamp(0.0, height), b.xmax.clamp(0.0, width), b.ymax.clamp(0.0, height))
}

/// Orders by descending score, then ascending rank.
pub fn score_order(a: &ScoredBox, b: &ScoredBox) -> Ordering {
    b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then(a.rank.cmp(&b.rank))
}

/// Greedy class-blind non-maximum suppression.
///
/// Boxes are visited by descending score (ties by ascending `rank`); a box is
/// dropped when its IoU with an already kept box exceeds `iou_threshold`.
/// At most `max_keep` boxes are returned, in visiting order.
pub fn nms(input: &[ScoredBox], iou_threshold: f64, max_keep: usize) -> Vec<ScoredBox> {
    let mut order: Vec<ScoredBox> = input.to_vec();
    order.sort_by(score_order);
    let mut kept: Vec<ScoredBox> = Vec::new();
    let mut suppressed = vec![false; order.len()];
    for i in 0..order.len() {
        if kept.len() >= max_keep {
            break;
        }
        if suppressed[i] {
            continue;
        }
        let cur = order[i];
        kept.push(cur);
        for (j, other) in order.iter().enumerate().skip(i + 1) {
            if !suppressed[j] && iou(&cur.bbox, &other.bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}
