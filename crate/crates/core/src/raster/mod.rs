//! Online-to-offline conversion: scale a graphic so its largest side spans
//! the target size, draw strokes as thick polylines into a grayscale image,
//! and derive one ground-truth box per labeled symbol.

mod pnm;
mod synth;

pub use pnm::{read_pgm, read_ppm, write_pgm, write_ppm, PnmError, RgbImage};
pub use synth::{generate_synthetic_dataset, synthetic_vocabulary, SYNTHETIC_CLASSES};

use thiserror::Error;

use crate::boxes::BBox;
use crate::ink::{ClassVocabulary, InkGraphic, Point};

pub const INK: u8 = 0;
pub const BLANK: u8 = 255;

/// Distance between successive disc stamps along a segment.
const STEP: f64 = 0.5;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("graphic has no points")]
    EmptyGraphic,
    #[error("scaled graphic has a negative coordinate ({0}, {1})")]
    NegativeCoordinate(f64, f64),
    #[error("symbol label {0:?} is not in the vocabulary")]
    UnknownLabel(String),
    #[error("invalid raster config: {0}")]
    BadConfig(&'static str),
    #[error("sample count must be at least 1")]
    BadCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterConfig {
    /// Largest image dimension after scaling (L).
    pub max_dim: u32,
    pub stroke_thickness: u32,
    pub min_box_dim: u32,
    pub margin: u32,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self { max_dim: 768, stroke_thickness: 3, min_box_dim: 3, margin: 4 }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<(), RasterError> {
        if self.max_dim < 16 {
            return Err(RasterError::BadConfig("max_dim must be at least 16"));
        }
        if self.stroke_thickness < 1 {
            return Err(RasterError::BadConfig("stroke_thickness must be at least 1"));
        }
        if self.min_box_dim < 1 {
            return Err(RasterError::BadConfig("min_box_dim must be at least 1"));
        }
        if 2 * self.margin >= self.max_dim {
            return Err(RasterError::BadConfig("margin too large for max_dim"));
        }
        Ok(())
    }
}

/// Row-major grayscale image; 255 is blank, 0 is ink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn blank(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![BLANK; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }
}

/// A rendered image with its labeled boxes. Class indices are never 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterSample {
    pub image: RasterImage,
    pub truth: Vec<(usize, BBox)>,
    pub source_id: String,
}

fn extent<'a>(points: impl Iterator<Item = &'a Point>) -> Option<(f64, f64, f64, f64)> {
    points.fold(None, |acc, p| {
        Some(match acc {
            None => (p.x, p.y, p.x, p.y),
            Some((x0, y0, x1, y1)) => (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
        })
    })
}

/// Translates the graphic's top-left corner to `(margin, margin)` and scales
/// by a single factor so its largest side spans `max_dim - 2 * margin`.
pub fn scale_graphic(g: &InkGraphic, cfg: &RasterConfig) -> Result<InkGraphic, RasterError> {
    let (x0, y0, x1, y1) = extent(g.points()).ok_or(RasterError::EmptyGraphic)?;
    let side = (x1 - x0).max(y1 - y0);
    let s = if side > 0.0 { f64::from(cfg.max_dim - 2 * cfg.margin) / side } else { 1.0 };
    let m = f64::from(cfg.margin);
    Ok(g.map_points(|p| Point::new(m + (p.x - x0) * s, m + (p.y - y0) * s)))
}

/// Calls `stamp` for every pixel covered by the thick polyline through
/// `points`. A pixel is covered when its integer coordinate lies within
/// `thickness / 2` of a sample point; samples are at most 0.5 px apart.
pub fn for_each_stroke_pixel(
    points: &[Point],
    thickness: u32,
    width: usize,
    height: usize,
    mut stamp: impl FnMut(usize, usize),
) {
    let r = f64::from(thickness) / 2.0;
    let r2 = r * r;
    let mut disc = |cx: f64, cy: f64| {
        let xa = (cx - r).ceil().max(0.0) as i64;
        let xb = ((cx + r).floor() as i64).min(width as i64 - 1);
        let ya = (cy - r).ceil().max(0.0) as i64;
        let yb = ((cy + r).floor() as i64).min(height as i64 - 1);
        for y in ya..=yb {
            for x in xa..=xb {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r2 {
                    stamp(x as usize, y as usize);
                }
            }
        }
    };
    if let [only] = points {
        disc(only.x, only.y);
        return;
    }
    for seg in points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let len = (b.x - a.x).hypot(b.y - a.y);
        let n = ((len / STEP).ceil() as usize).max(1);
        for k in 0..=n {
            let t = k as f64 / n as f64;
            disc(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
        }
    }
}

/// Draws every stroke of `g` onto a blank `width x height` canvas.
pub fn render_canvas(g: &InkGraphic, width: usize, height: usize, thickness: u32) -> RasterImage {
    let mut img = RasterImage::blank(width, height);
    for stroke in &g.strokes {
        for_each_stroke_pixel(&stroke.points, thickness, width, height, |x, y| img.set(x, y, INK));
    }
    img
}

/// Renders an already scaled graphic.
pub fn render(g: &InkGraphic, cfg: &RasterConfig) -> Result<RasterImage, RasterError> {
    let (x0, y0, x1, y1) = extent(g.points()).ok_or(RasterError::EmptyGraphic)?;
    if x0 < 0.0 || y0 < 0.0 {
        return Err(RasterError::NegativeCoordinate(x0, y0));
    }
    let dim = |hi: f64| {
        let d = hi.ceil() as u64 + u64::from(cfg.margin) + 1;
        d.clamp(u64::from(cfg.stroke_thickness), u64::from(cfg.max_dim)) as usize
    };
    Ok(render_canvas(g, dim(x1), dim(y1), cfg.stroke_thickness))
}

/// Grows `[lo, hi]` symmetrically to at least `min_len`, clamps it into
/// `[0, limit]`, and re-extends inward if clamping left it shorter than
/// `min(min_len, limit)`.
fn fit_interval(lo: f64, hi: f64, min_len: f64, limit: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (lo, hi);
    if hi - lo < min_len {
        let c = 0.5 * (lo + hi);
        lo = c - 0.5 * min_len;
        hi = c + 0.5 * min_len;
    }
    lo = lo.clamp(0.0, limit);
    hi = hi.clamp(0.0, limit);
    let need = min_len.min(limit);
    if hi - lo < need {
        if lo + need <= limit {
            hi = lo + need;
        } else {
            lo = limit - need;
            hi = limit;
        }
    }
    (lo, hi)
}

/// One box per symbol: point extent grown by half the stroke thickness,
/// widened to the minimum dimension, then clipped to the image.
pub fn extract_truth_boxes(
    g: &InkGraphic,
    image: &RasterImage,
    vocab: &ClassVocabulary,
    cfg: &RasterConfig,
) -> Result<Vec<(usize, BBox)>, RasterError> {
    let half = f64::from(cfg.stroke_thickness) / 2.0;
    let min_len = f64::from(cfg.min_box_dim);
    let mut out = Vec::with_capacity(g.symbols.len());
    for sym in &g.symbols {
        let class =
            vocab.lookup(&sym.label).filter(|&c| c > 0).ok_or_else(|| RasterError::UnknownLabel(sym.label.clone()))?;
        let Some((x0, y0, x1, y1)) = extent(g.symbol_strokes(sym).flat_map(|s| s.points.iter())) else {
            continue;
        };
        let (xa, xb) = fit_interval(x0 - half, x1 + half, min_len, image.width as f64);
        let (ya, yb) = fit_interval(y0 - half, y1 + half, min_len, image.height as f64);
        out.push((class, BBox::new(xa, ya, xb, yb)));
    }
    Ok(out)
}

pub fn make_sample(g: &InkGraphic, vocab: &ClassVocabulary, cfg: &RasterConfig) -> Result<RasterSample, RasterError> {
    cfg.validate()?;
    let scaled = scale_graphic(g, cfg)?;
    let image = render(&scaled, cfg)?;
    let truth = extract_truth_boxes(&scaled, &image, vocab, cfg)?;
    Ok(RasterSample { image, truth, source_id: g.id.clone() })
}
