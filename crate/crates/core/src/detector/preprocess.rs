use super::{DetectorConfig, BACKBONE_STRIDE};
use crate::boxes::BBox;
use crate::raster::{RasterImage, BLANK};
use crate::tensor::{Scalar, Tensor};

/// Network input for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed<T> {
    /// `[1, 1, H, W]`, ink 1.0 and background 0.0, zero-padded to a multiple
    /// of the backbone stride.
    pub input: Tensor<T>,
    /// Rescale factor `r` applied to the original image.
    pub scale: f64,
    /// Truth boxes multiplied by `r`.
    pub truth: Vec<(usize, BBox)>,
    /// Size of the rescaled image before padding.
    pub content_width: usize,
    pub content_height: usize,
}

fn taps(dst: usize, scale: f64, len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) / scale - 0.5).clamp(0.0, (len - 1) as f64);
    let lo = src.floor() as usize;
    (lo, (lo + 1).min(len - 1), src - lo as f64)
}

/// Inverts intensities, rescales so the smaller side equals `cfg.min_dim`
/// (bilinear, aspect preserved) and pads to the backbone stride.
pub fn preprocess<T: Scalar>(image: &RasterImage, truth: &[(usize, BBox)], cfg: &DetectorConfig) -> Preprocessed<T> {
    let (w, h) = (image.width, image.height);
    let scale = f64::from(cfg.min_dim) / w.min(h) as f64;
    let ow = ((w as f64 * scale).round() as usize).max(1);
    let oh = ((h as f64 * scale).round() as usize).max(1);
    let stride = BACKBONE_STRIDE as usize;
    let (pw, ph) = (ow.div_ceil(stride) * stride, oh.div_ceil(stride) * stride);
    let ink: Vec<f64> = image.pixels.iter().map(|&p| 1.0 - f64::from(p) / f64::from(BLANK)).collect();
    let cols: Vec<_> = (0..ow).map(|x| taps(x, scale, w)).collect();
    let mut data = vec![T::zero(); ph * pw];
    for y in 0..oh {
        let (y0, y1, fy) = taps(y, scale, h);
        let (r0, r1) = (&ink[y0 * w..(y0 + 1) * w], &ink[y1 * w..(y1 + 1) * w]);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            data[y * pw + x] = T::from_f64(top + (bottom - top) * fy);
        }
    }
    Preprocessed {
        input: Tensor::new(vec![1, 1, ph, pw], data).expect("padded dims are positive"),
        scale,
        truth: truth.iter().map(|&(c, b)| (c, b.scale(scale))).collect(),
        content_width: ow,
        content_height: oh,
    }
}
