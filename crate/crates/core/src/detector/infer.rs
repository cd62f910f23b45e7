use std::collections::BTreeMap;

use super::{preprocess, DetectorConfig, Model, Proposal, Result};
use crate::boxes::{clip, decode, nms, score_order, BBox, BoxDelta, ScoredBox};
use crate::raster::RasterImage;
use crate::tensor::{softmax_rows, Graph, Scalar};

/// A classified box in original image coordinates. `class_index` is never 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_index: usize,
    pub score: f64,
}

/// Full inference pass; also returns the proposals (rescaled-image units).
pub(super) fn run<T: Scalar>(
    model: &Model<T>,
    image: &RasterImage,
    cfg: &DetectorConfig,
) -> Result<(Vec<Detection>, Vec<Proposal>)> {
    let pre = preprocess::<T>(image, &[], cfg);
    let mut g = Graph::new();
    let (features, _, _, proposals) = model.forward_proposals(&mut g, &pre, cfg)?;
    if proposals.is_empty() {
        return Ok((Vec::new(), proposals));
    }
    let rois: Vec<BBox> = proposals.iter().map(|p| p.bbox).collect();
    let head = model.roi_head(&mut g, features, &rois)?;
    let c = model.num_classes();
    let probs = softmax_rows(g.value(head.logits).data(), c);
    let deltas = g.value(head.deltas).data();
    let (cw, ch) = (pre.content_width as f64, pre.content_height as f64);

    let mut by_class: BTreeMap<usize, Vec<ScoredBox>> = BTreeMap::new();
    for (rank, roi) in rois.iter().enumerate() {
        let row = &probs[rank * c..(rank + 1) * c];
        let (class_index, score) =
            (1..c)
                .map(|k| (k, row[k].as_f64()))
                .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        if score < cfg.score_threshold {
            continue;
        }
        let d: Vec<f64> = deltas[rank * 4..rank * 4 + 4].iter().map(|v| v.as_f64()).collect();
        let Ok(refined) = decode(&BoxDelta::from_slice(&d), roi) else { continue };
        let bbox = clip(&refined, cw, ch);
        if bbox.width() > 0.0 && bbox.height() > 0.0 {
            by_class.entry(class_index).or_default().push(ScoredBox { bbox, score, class_index, rank });
        }
    }
    let mut kept: Vec<ScoredBox> =
        by_class.values().flat_map(|boxes| nms(boxes, cfg.final_nms_iou, usize::MAX)).collect();
    kept.sort_by(score_order);
    let (w, h) = (image.width as f64, image.height as f64);
    let detections = kept
        .into_iter()
        .map(|s| Detection {
            bbox: clip(&s.bbox.scale(1.0 / pre.scale), w, h),
            class_index: s.class_index,
            score: s.score,
        })
        .collect();
    Ok((detections, proposals))
}
