//! Seeded synthetic "graphics": rectangles, circles and crosses scattered on
//! a canvas without overlap. A stand-in for real datasets when testing the
//! detector end to end.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{extract_truth_boxes, render_canvas, RasterConfig, RasterError, RasterSample};
use crate::boxes::BBox;
use crate::ink::{ClassVocabulary, InkGraphic, Point, Stroke, SymbolAnnotation};

pub const SYNTHETIC_CLASSES: [&str; 3] = ["box", "cross", "disc"];

const MIN_SYMBOLS: usize = 3;
const MAX_SYMBOLS: usize = 8;
const MIN_SIZE: f64 = 20.0;
const MAX_SIZE: f64 = 120.0;
/// Free space kept between the boxes of two symbols.
const GAP: f64 = 6.0;
const DISC_SEGMENTS: usize = 24;
const MAX_ATTEMPTS: usize = 100_000;

pub fn synthetic_vocabulary() -> ClassVocabulary {
    ClassVocabulary::from_classes(SYNTHETIC_CLASSES)
}

fn polyline(pts: &[(f64, f64)]) -> Vec<Point> {
    pts.iter().map(|&(x, y)| Point::new(x, y)).collect()
}

/// Strokes of one symbol whose point extent is `[x, x + w] x [y, y + h]`.
fn symbol_strokes(class: &str, x: f64, y: f64, w: f64, h: f64) -> Vec<Vec<Point>> {
    match class {
        "box" => vec![polyline(&[(x, y), (x + w, y), (x + w, y + h), (x, y + h), (x, y)])],
        "cross" => vec![polyline(&[(x, y), (x + w, y + h)]), polyline(&[(x + w, y), (x, y + h)])],
        "disc" => {
            let (cx, cy, r) = (x + 0.5 * w, y + 0.5 * h, 0.5 * w);
            vec![(0..=DISC_SEGMENTS)
                .map(|k| {
                    let a = TAU * (k % DISC_SEGMENTS) as f64 / DISC_SEGMENTS as f64;
                    Point::new(cx + r * a.cos(), cy + r * a.sin())
                })
                .collect()]
        }
        _ => unreachable!("unknown synthetic class"),
    }
}

/// Canvas size used by the generator: full width, half height.
pub fn synthetic_canvas(cfg: &RasterConfig) -> (usize, usize) {
    (cfg.max_dim as usize, (cfg.max_dim / 2) as usize)
}

fn one_sample(
    rng: &mut ChaCha8Rng,
    index: usize,
    seed: u64,
    vocab: &ClassVocabulary,
    cfg: &RasterConfig,
) -> Result<RasterSample, RasterError> {
    let (width, height) = synthetic_canvas(cfg);
    let half = f64::from(cfg.stroke_thickness) / 2.0;
    let lo = f64::from(cfg.margin) + half;
    let target = rng.random_range(MIN_SYMBOLS..=MAX_SYMBOLS);

    let mut placed: Vec<BBox> = Vec::new();
    let mut strokes = Vec::new();
    let mut symbols = Vec::new();
    let mut attempts = 0usize;
    while placed.len() < target && attempts < MAX_ATTEMPTS {
        attempts += 1;
        let class = SYNTHETIC_CLASSES[rng.random_range(0..SYNTHETIC_CLASSES.len())];
        let w = rng.random_range(MIN_SIZE..=MAX_SIZE);
        let h = if class == "disc" { w } else { rng.random_range(MIN_SIZE..=MAX_SIZE) };
        let x = rng.random_range(lo..=width as f64 - lo - w);
        let y = rng.random_range(lo..=height as f64 - lo - h);
        let reach = half + GAP / 2.0;
        let footprint = BBox::new(x - reach, y - reach, x + w + reach, y + h + reach);
        if placed.iter().any(|p| p.intersection_area(&footprint) > 0.0) {
            continue;
        }
        placed.push(footprint);
        let mut ids = BTreeSet::new();
        for pts in symbol_strokes(class, x, y, w, h) {
            let id = strokes.len().to_string();
            ids.insert(id.clone());
            strokes.push(Stroke { id, points: pts });
        }
        symbols.push(SymbolAnnotation { label: class.to_string(), stroke_ids: ids });
    }

    let g = InkGraphic { id: format!("synth-{seed}-{index:05}"), strokes, symbols };
    let image = render_canvas(&g, width, height, cfg.stroke_thickness);
    let truth = extract_truth_boxes(&g, &image, vocab, cfg)?;
    Ok(RasterSample { image, truth, source_id: g.id })
}

/// `n` samples of 3 to 8 non-overlapping symbols; deterministic in `seed`.
pub fn generate_synthetic_dataset(n: usize, seed: u64, cfg: &RasterConfig) -> Result<Vec<RasterSample>, RasterError> {
    if n == 0 {
        return Err(RasterError::BadCount);
    }
    cfg.validate()?;
    let (_, height) = synthetic_canvas(cfg);
    if (height as f64) < 2.0 * (f64::from(cfg.margin) + f64::from(cfg.stroke_thickness)) + 2.0 * MAX_SIZE {
        return Err(RasterError::BadConfig("canvas too small for synthetic symbols"));
    }
    let vocab = synthetic_vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| one_sample(&mut rng, i, seed, &vocab, cfg)).collect()
}
