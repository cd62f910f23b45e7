//! Training targets for the proposal network and the region classifier.

use rand::seq::index::sample;
use rand::Rng;

use super::DetectorConfig;
use crate::boxes::{clip, encode, iou, BBox, BoxDelta};

/// Anchors whose area outside the image exceeds this fraction are ignored.
pub const MAX_OUTSIDE_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpnTargets {
    pub labels: Vec<AnchorLabel>,
    /// Regression target per anchor; zero unless the anchor is positive.
    pub deltas: Vec<BoxDelta>,
}

impl RpnTargets {
    pub fn count(&self, label: AnchorLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

fn outside_fraction(a: &BBox, width: f64, height: f64) -> f64 {
    let area = a.area();
    if area <= 0.0 {
        return 1.0;
    }
    (area - clip(a, width, height).area()) / area
}

/// Labels before subsampling, plus the best-matching truth of every
/// usable anchor.
///
/// An anchor is positive when its IoU with some truth box reaches
/// `rpn_pos_iou`, or when it attains the (non-zero) best IoU of some truth
/// box among usable anchors (all tied anchors qualify). Otherwise it is
/// negative when its best IoU is below `rpn_neg_iou`. Anchors sticking out
/// of the image by more than [`MAX_OUTSIDE_FRACTION`] of their area are
/// ignored throughout.
pub fn label_anchors(
    anchors: &[BBox],
    truth: &[BBox],
    width: f64,
    height: f64,
    cfg: &DetectorConfig,
) -> (Vec<AnchorLabel>, Vec<Option<usize>>) {
    let usable: Vec<bool> =
        anchors.iter().map(|a| outside_fraction(a, width, height) <= MAX_OUTSIDE_FRACTION).collect();
    let mut best_iou = vec![0.0f64; anchors.len()];
    let mut best_gt: Vec<Option<usize>> = vec![None; anchors.len()];
    let mut gt_best = vec![0.0f64; truth.len()];
    let overlaps: Vec<Vec<f64>> = anchors
        .iter()
        .zip(&usable)
        .map(|(a, &ok)| if ok { truth.iter().map(|t| iou(a, t)).collect() } else { Vec::new() })
        .collect();
    for (ai, row) in overlaps.iter().enumerate() {
        for (ti, &v) in row.iter().enumerate() {
            if best_gt[ai].is_none() || v > best_iou[ai] {
                best_iou[ai] = v;
                best_gt[ai] = Some(ti);
            }
            gt_best[ti] = gt_best[ti].max(v);
        }
    }
    let labels = overlaps
        .iter()
        .enumerate()
        .map(|(ai, row)| {
            if !usable[ai] {
                AnchorLabel::Ignore
            } else if best_iou[ai] >= cfg.rpn_pos_iou || row.iter().zip(&gt_best).any(|(&v, &g)| g > 0.0 && v == g) {
                AnchorLabel::Positive
            } else if best_iou[ai] < cfg.rpn_neg_iou {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();
    (labels, best_gt)
}

/// Keeps at most `budget` of the anchors carrying `label`, chosen uniformly
/// at random; the rest become `Ignore`. Returns the number kept.
fn subsample(labels: &mut [AnchorLabel], label: AnchorLabel, budget: usize, rng: &mut impl Rng) -> usize {
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
    if idx.len() <= budget {
        return idx.len();
    }
    let mut keep = vec![false; idx.len()];
    for k in sample(rng, idx.len(), budget) {
        keep[k] = true;
    }
    for (&i, &k) in idx.iter().zip(&keep) {
        if !k {
            labels[i] = AnchorLabel::Ignore;
        }
    }
    budget
}

/// Labels, subsamples to `rpn_batch` anchors (at most `rpn_pos_frac`
/// positive), and computes regression targets for the positives.
pub fn assign_rpn_targets(
    anchors: &[BBox],
    truth: &[BBox],
    width: f64,
    height: f64,
    cfg: &DetectorConfig,
    rng: &mut impl Rng,
) -> RpnTargets {
    let (mut labels, best_gt) = label_anchors(anchors, truth, width, height, cfg);
    let max_pos = (cfg.rpn_batch as f64 * cfg.rpn_pos_frac).floor() as usize;
    let pos = subsample(&mut labels, AnchorLabel::Positive, max_pos, rng);
    subsample(&mut labels, AnchorLabel::Negative, cfg.rpn_batch - pos, rng);
    let deltas = labels
        .iter()
        .zip(anchors)
        .zip(&best_gt)
        .map(|((&l, a), g)| match (l, g) {
            (AnchorLabel::Positive, Some(t)) => encode(&truth[*t], a).unwrap_or_default(),
            _ => BoxDelta::default(),
        })
        .collect();
    RpnTargets { labels, deltas }
}

/// A sampled region with its classification and regression targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiTarget {
    pub bbox: BBox,
    /// 0 for background.
    pub class_index: usize,
    /// Regression target for foreground regions.
    pub delta: Option<BoxDelta>,
}

/// Candidate class of one region before sampling: `Some(Some(t))` for
/// foreground matched to truth `t`, `Some(None)` for background, `None` when
/// the region is neither.
pub fn classify_roi(roi: &BBox, truth: &[(usize, BBox)], cfg: &DetectorConfig) -> Option<Option<usize>> {
    if truth.is_empty() {
        return Some(None);
    }
    let (best, best_iou) = truth
        .iter()
        .enumerate()
        .map(|(i, (_, t))| (i, iou(roi, t)))
        .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
    if best_iou >= cfg.roi_fg_iou {
        Some(Some(best))
    } else if best_iou >= cfg.roi_bg_iou_lo && best_iou < cfg.roi_bg_iou_hi {
        Some(None)
    } else {
        None
    }
}

/// Appends the truth boxes to the proposals, classifies every candidate and
/// samples at most `roi_batch` of them with at most `roi_pos_frac`
/// foreground. Foreground comes first, each group in candidate order.
pub fn assign_roi_targets(
    proposals: &[BBox],
    truth: &[(usize, BBox)],
    cfg: &DetectorConfig,
    rng: &mut impl Rng,
) -> Vec<RoiTarget> {
    let candidates: Vec<BBox> = proposals.iter().copied().chain(truth.iter().map(|(_, b)| *b)).collect();
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        match classify_roi(c, truth, cfg) {
            Some(Some(t)) => fg.push((i, t)),
            Some(None) => bg.push(i),
            None => {}
        }
    }
    let max_fg = (cfg.roi_batch as f64 * cfg.roi_pos_frac).round() as usize;
    let pick = |n: usize, budget: usize, rng: &mut dyn rand::RngCore| -> Vec<usize> {
        if n <= budget {
            (0..n).collect()
        } else {
            let mut v = sample(rng, n, budget).into_vec();
            v.sort_unstable();
            v
        }
    };
    let fg_keep = pick(fg.len(), max_fg, rng);
    let bg_keep = pick(bg.len(), cfg.roi_batch - fg_keep.len(), rng);
    let mut out = Vec::with_capacity(fg_keep.len() + bg_keep.len());
    for k in fg_keep {
        let (i, t) = fg[k];
        let (class_index, gt) = truth[t];
        out.push(RoiTarget { bbox: candidates[i], class_index, delta: encode(&gt, &candidates[i]).ok() });
    }
    for k in bg_keep {
        out.push(RoiTarget { bbox: candidates[bg[k]], class_index: 0, delta: None });
    }
    out
}
