//! PASCAL-style scoring: greedy matching, per-class AP and mAP.

use std::cmp::Ordering;
use std::path::Path;

use thiserror::Error;

use crate::boxes::{iou, BBox};
use crate::detector::Detection;
use crate::ink::ClassVocabulary;
use crate::raster::{write_ppm, PnmError, RasterImage, RgbImage};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("class index {0} is not in the vocabulary")]
    UnknownClass(usize),
    #[error("{detections} detection lists for {images} images")]
    ImageCountMismatch { images: usize, detections: usize },
}

/// Interpolation of the precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApVariant {
    /// Area under the monotone precision envelope.
    #[default]
    AllPoints,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    Eleven,
}

fn by_score_desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Greedy matching within one image. Detections are visited by descending
/// score (ties by input order); each takes the unmatched same-class truth
/// box with the highest IoU if it reaches `iou_threshold`. Returns the
/// matched truth index per detection, in input order.
pub fn match_detections(dets: &[Detection], truth: &[(usize, BBox)], iou_threshold: f64) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| by_score_desc(dets[a].score, dets[b].score));
    let mut taken = vec![false; truth.len()];
    let mut out = vec![None; dets.len()];
    for i in order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (t, (c, b)) in truth.iter().enumerate() {
            if *c != d.class_index || taken[t] {
                continue;
            }
            let v = iou(&d.bbox, b);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((t, v));
            }
        }
        if let Some((t, _)) = best.filter(|&(_, v)| v >= iou_threshold) {
            taken[t] = true;
            out[i] = Some(t);
        }
    }
    out
}

/// AP from `(score, is_true_positive)` pairs; `None` when `num_truth == 0`.
/// Pairs are ranked by descending score, ties kept in input order.
pub fn average_precision(flags: &[(f64, bool)], num_truth: usize, variant: ApVariant) -> Option<f64> {
    if num_truth == 0 {
        return None;
    }
    let mut ranked = flags.to_vec();
    ranked.sort_by(|a, b| by_score_desc(a.0, b.0));
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(ranked.len());
    for (k, &(_, hit)) in ranked.iter().enumerate() {
        tp += usize::from(hit);
        curve.push((tp as f64 / num_truth as f64, tp as f64 / (k + 1) as f64));
    }
    // precision envelope: best precision at any recall to the right
    for k in (0..curve.len().saturating_sub(1)).rev() {
        curve[k].1 = curve[k].1.max(curve[k + 1].1);
    }
    Some(match variant {
        ApVariant::AllPoints => {
            let mut prev = 0.0;
            let mut area = 0.0;
            for &(r, p) in &curve {
                area += (r - prev) * p;
                prev = r;
            }
            area
        }
        ApVariant::Eleven => {
            (0..=10)
                .map(|t| {
                    let t = f64::from(t) / 10.0;
                    curve.iter().find(|&&(r, _)| r >= t).map_or(0.0, |&(_, p)| p)
                })
                .sum::<f64>()
                / 11.0
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub name: String,
    /// `None` when the class has no truth boxes.
    pub ap: Option<f64>,
    pub num_truth: usize,
    pub num_detections: usize,
}

/// A detection paired with the truth box it matched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub image: usize,
    pub detection: usize,
    pub truth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// One entry per non-background class, in vocabulary order.
    pub per_class: Vec<ClassReport>,
    /// Mean AP over classes with truth boxes; 0 when there are none.
    pub map: f64,
    pub matches: Vec<MatchedPair>,
}

impl EvalReport {
    /// `class,AP,num_truth,num_dets` records and a final `mAP,<value>` line.
    /// Classes without truth report an empty AP field.
    pub fn to_records(&self) -> String {
        let mut out = String::from("class,AP,num_truth,num_dets\n");
        for c in &self.per_class {
            let ap = c.ap.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", c.name, ap, c.num_truth, c.num_detections));
        }
        out.push_str(&format!("mAP,{}\n", self.map));
        out
    }

    /// Fixed-width table with AP in percent.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<20} {:>7} {:>8} {:>8}\n", "class", "AP", "truth", "dets");
        for c in &self.per_class {
            let ap = c.ap.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v));
            out.push_str(&format!("{:<20} {:>7} {:>8} {:>8}\n", c.name, ap, c.num_truth, c.num_detections));
        }
        out.push_str(&format!("mAP {:.1}\n", 100.0 * self.map));
        out
    }
}

/// Scores a dataset: `truth[i]` and `detections[i]` belong to image `i`.
pub fn evaluate(
    truth: &[Vec<(usize, BBox)>],
    detections: &[Vec<Detection>],
    vocab: &ClassVocabulary,
    iou_threshold: f64,
    variant: ApVariant,
) -> Result<EvalReport, EvalError> {
    if truth.len() != detections.len() {
        return Err(EvalError::ImageCountMismatch { images: truth.len(), detections: detections.len() });
    }
    let classes = vocab.len();
    let mut indices = detections.iter().flatten().map(|d| d.class_index).chain(truth.iter().flatten().map(|t| t.0));
    if let Some(c) = indices.find(|&c| c == 0 || c >= classes) {
        return Err(EvalError::UnknownClass(c));
    }
    let mut flags: Vec<Vec<(f64, bool)>> = vec![Vec::new(); classes];
    let mut counts = vec![0usize; classes];
    let mut matches = Vec::new();
    for (image, (gt, dets)) in truth.iter().zip(detections).enumerate() {
        for (c, _) in gt {
            counts[*c] += 1;
        }
        for (detection, (d, m)) in dets.iter().zip(match_detections(dets, gt, iou_threshold)).enumerate() {
            flags[d.class_index].push((d.score, m.is_some()));
            if let Some(t) = m {
                matches.push(MatchedPair { image, detection, truth: t });
            }
        }
    }
    let per_class: Vec<ClassReport> = (1..classes)
        .map(|c| ClassReport {
            name: vocab.name(c).unwrap_or_default().to_string(),
            ap: average_precision(&flags[c], counts[c], variant),
            num_truth: counts[c],
            num_detections: flags[c].len(),
        })
        .collect();
    let aps: Vec<f64> = per_class.iter().filter_map(|c| c.ap).collect();
    let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
    Ok(EvalReport { per_class, map, matches })
}

fn outline(img: &mut RgbImage, b: &BBox, rgb: [u8; 3]) {
    if img.width == 0 || img.height == 0 {
        return;
    }
    let (w, h) = (img.width as f64, img.height as f64);
    let x0 = b.xmin.floor().clamp(0.0, w - 1.0) as usize;
    let y0 = b.ymin.floor().clamp(0.0, h - 1.0) as usize;
    let x1 = (b.xmax.ceil() - 1.0).clamp(0.0, w - 1.0) as usize;
    let y1 = (b.ymax.ceil() - 1.0).clamp(0.0, h - 1.0) as usize;
    for x in x0..=x1.max(x0) {
        img.set(x, y0, rgb);
        img.set(x, y1, rgb);
    }
    for y in y0..=y1.max(y0) {
        img.set(x0, y, rgb);
        img.set(x1, y, rgb);
    }
}

/// Grayscale replicated to RGB with 1-px outlines: truth in green, then
/// detections in red on top.
pub fn overlay(image: &RasterImage, detections: &[BBox], truth: &[BBox]) -> RgbImage {
    let mut img = RgbImage::from_gray(image);
    for b in truth {
        outline(&mut img, b, [0, 255, 0]);
    }
    for b in detections {
        outline(&mut img, b, [255, 0, 0]);
    }
    img
}

pub fn render_overlay(
    image: &RasterImage,
    detections: &[BBox],
    truth: &[BBox],
    path: impl AsRef<Path>,
) -> Result<(), PnmError> {
    write_ppm(&overlay(image, detections, truth), path)
}
