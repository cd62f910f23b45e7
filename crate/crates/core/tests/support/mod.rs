//! Brute-force references written directly from the textbook definitions.

use symdet::detector::{AnchorLabel, Detection, DetectorConfig};
use symdet::BBox;

/// IoU of integer-coordinate boxes by counting covered unit cells.
pub fn iou_cells(a: [i64; 4], b: [i64; 4]) -> f64 {
    let inside = |r: [i64; 4], x: i64, y: i64| r[0] <= x && x < r[2] && r[1] <= y && y < r[3];
    let (mut ca, mut cb, mut both) = (0i64, 0i64, 0i64);
    for y in a[1].min(b[1])..a[3].max(b[3]) {
        for x in a[0].min(b[0])..a[2].max(b[2]) {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            ca += i64::from(ia);
            cb += i64::from(ib);
            both += i64::from(ia && ib);
        }
    }
    let union = ca + cb - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.xmax.min(b.xmax) - a.xmin.max(b.xmin);
    let ih = a.ymax.min(b.ymax) - a.ymin.max(b.ymin);
    let inter = if iw > 0.0 && ih > 0.0 { iw * ih } else { 0.0 };
    let union = (a.xmax - a.xmin) * (a.ymax - a.ymin) + (b.xmax - b.xmin) * (b.ymax - b.ymin) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Indices by descending score, ties by ascending index (selection sort).
pub fn priority(scores: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..scores.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            if scores[left[k]] > scores[left[best]] {
                best = k;
            }
        }
        out.push(left.remove(best));
    }
    out
}

/// A box survives iff no higher-priority survivor overlaps it beyond the
/// threshold; at most `max_keep` survivors.
pub fn nms(boxes: &[BBox], scores: &[f64], thr: f64, max_keep: usize) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in priority(scores) {
        if kept.len() == max_keep {
            break;
        }
        if kept.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= thr) {
            kept.push(i);
        }
    }
    kept
}

/// At most a quarter of the anchor lies outside the `w` x `h` content.
pub fn usable(a: &BBox, w: f64, h: f64) -> bool {
    let cw = (a.xmax.min(w) - a.xmin.max(0.0)).max(0.0);
    let ch = (a.ymax.min(h) - a.ymin.max(0.0)).max(0.0);
    let area = (a.xmax - a.xmin) * (a.ymax - a.ymin);
    area - cw * ch <= 0.25 * area
}

/// Anchor labels before subsampling, straight from the rule.
pub fn rpn_labels(anchors: &[BBox], truth: &[BBox], w: f64, h: f64, cfg: &DetectorConfig) -> Vec<AnchorLabel> {
    let usable: Vec<bool> = anchors.iter().map(|a| usable(a, w, h)).collect();
    let mut best_for_truth = vec![0.0f64; truth.len()];
    for (t, tb) in truth.iter().enumerate() {
        for (a, ab) in anchors.iter().enumerate() {
            if usable[a] {
                best_for_truth[t] = best_for_truth[t].max(iou(ab, tb));
            }
        }
    }
    anchors
        .iter()
        .enumerate()
        .map(|(a, ab)| {
            if !usable[a] {
                return AnchorLabel::Ignore;
            }
            let ious: Vec<f64> = truth.iter().map(|tb| iou(ab, tb)).collect();
            let max = ious.iter().copied().fold(0.0, f64::max);
            let argmax_of_some = (0..truth.len()).any(|t| best_for_truth[t] > 0.0 && ious[t] == best_for_truth[t]);
            if max >= cfg.rpn_pos_iou || argmax_of_some {
                AnchorLabel::Positive
            } else if max < cfg.rpn_neg_iou {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect()
}

/// Greedy per-class matching; matched truth index per detection.
pub fn match_dets(dets: &[Detection], truth: &[(usize, BBox)], thr: f64) -> Vec<Option<usize>> {
    let mut out = vec![None; dets.len()];
    let classes: std::collections::BTreeSet<usize> = dets.iter().map(|d| d.class_index).collect();
    for c in classes {
        let idx: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].class_index == c).collect();
        let scores: Vec<f64> = idx.iter().map(|&i| dets[i].score).collect();
        let mut used: Vec<usize> = Vec::new();
        for k in priority(&scores) {
            let d = &dets[idx[k]];
            let mut pick: Option<usize> = None;
            for t in 0..truth.len() {
                if truth[t].0 != c || used.contains(&t) {
                    continue;
                }
                let better = match pick {
                    None => true,
                    Some(p) => iou(&d.bbox, &truth[t].1) > iou(&d.bbox, &truth[p].1),
                };
                if better {
                    pick = Some(t);
                }
            }
            if let Some(t) = pick.filter(|&t| iou(&d.bbox, &truth[t].1) >= thr) {
                used.push(t);
                out[idx[k]] = Some(t);
            }
        }
    }
    out
}

/// All-points AP: every true positive contributes `1 / num_truth` recall at
/// the best precision reachable from its rank onwards.
pub fn ap_all_points(flags: &[(f64, bool)], num_truth: usize) -> f64 {
    let order = priority(&flags.iter().map(|f| f.0).collect::<Vec<_>>());
    let hits: Vec<bool> = order.iter().map(|&i| flags[i].1).collect();
    let prec: Vec<f64> =
        (0..hits.len()).map(|k| hits[..=k].iter().filter(|&&h| h).count() as f64 / (k + 1) as f64).collect();
    (0..hits.len()).filter(|&k| hits[k]).map(|k| prec[k..].iter().copied().fold(0.0, f64::max) / num_truth as f64).sum()
}

pub fn ap_eleven(flags: &[(f64, bool)], num_truth: usize) -> f64 {
    let order = priority(&flags.iter().map(|f| f.0).collect::<Vec<_>>());
    let hits: Vec<bool> = order.iter().map(|&i| flags[i].1).collect();
    let points: Vec<(f64, f64)> = (0..hits.len())
        .map(|k| {
            let tp = hits[..=k].iter().filter(|&&h| h).count() as f64;
            (tp / num_truth as f64, tp / (k + 1) as f64)
        })
        .collect();
    (0..=10)
        .map(|t| {
            let t = t as f64 / 10.0;
            points.iter().filter(|p| p.0 >= t).map(|p| p.1).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// Per-class `(ap, num_truth, num_dets)` for classes `1..classes` and mAP.
pub fn evaluate(
    truth: &[Vec<(usize, BBox)>],
    dets: &[Vec<Detection>],
    classes: usize,
    thr: f64,
) -> (Vec<(Option<f64>, usize, usize)>, f64) {
    let mut per = Vec::new();
    for c in 1..classes {
        let mut flags = Vec::new();
        let mut n = 0;
        for (gt, ds) in truth.iter().zip(dets) {
            n += gt.iter().filter(|t| t.0 == c).count();
            let m = match_dets(ds, gt, thr);
            for (d, hit) in ds.iter().zip(m) {
                if d.class_index == c {
                    flags.push((d.score, hit.is_some()));
                }
            }
        }
        let ap = (n > 0).then(|| ap_all_points(&flags, n));
        per.push((ap, n, flags.len()));
    }
    let aps: Vec<f64> = per.iter().filter_map(|p| p.0).collect();
    let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
    (per, map)
}
