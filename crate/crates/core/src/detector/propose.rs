use super::DetectorConfig;
use crate::boxes::{clip, decode, nms, BBox, BoxDelta, ScoredBox};

/// A clipped candidate region with its objectness probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub objectness: f64,
}

/// Decodes every anchor, clips to `width x height`, drops empty boxes,
/// keeps the `rpn_pre_nms_top` most object-like, suppresses at
/// `rpn_nms_iou` and returns at most `num_proposals` by descending score.
/// `deltas` holds four values per anchor.
pub fn propose(
    anchors: &[BBox],
    objectness: &[f64],
    deltas: &[f64],
    width: f64,
    height: f64,
    cfg: &DetectorConfig,
) -> Vec<Proposal> {
    let mut cands: Vec<ScoredBox> = anchors
        .iter()
        .zip(objectness)
        .zip(deltas.chunks_exact(4))
        .enumerate()
        .filter_map(|(rank, ((a, &score), d))| {
            let b = clip(&decode(&BoxDelta::from_slice(d), a).ok()?, width, height);
            (b.width() > 0.0 && b.height() > 0.0 && score.is_finite()).then_some(ScoredBox {
                bbox: b,
                score,
                class_index: 0,
                rank,
            })
        })
        .collect();
    cands.sort_by(crate::boxes::score_order);
    cands.truncate(cfg.rpn_pre_nms_top);
    nms(&cands, cfg.rpn_nms_iou, cfg.num_proposals)
        .into_iter()
        .map(|s| Proposal { bbox: s.bbox, objectness: s.score })
        .collect()
}
