use std::fmt::Write as _;
use std::str::FromStr;

use super::DetectorError;

/// Hyper-parameters of the network, its target assignment and training.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Images are rescaled so their smaller side equals this (M).
    pub min_dim: u32,
    pub feature_stride: u32,
    pub anchor_scales: Vec<f64>,
    pub anchor_ratios: Vec<f64>,
    pub rpn_pre_nms_top: usize,
    pub rpn_nms_iou: f64,
    pub num_proposals: usize,
    pub rpn_batch: usize,
    pub rpn_pos_frac: f64,
    pub rpn_pos_iou: f64,
    pub rpn_neg_iou: f64,
    pub roi_batch: usize,
    pub roi_pos_frac: f64,
    pub roi_fg_iou: f64,
    pub roi_bg_iou_lo: f64,
    pub roi_bg_iou_hi: f64,
    pub crop_size: usize,
    pub score_threshold: f64,
    pub final_nms_iou: f64,
    pub lr: f64,
    pub momentum: f64,
    pub grad_clip_norm: f64,
    pub steps: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            min_dim: 300,
            feature_stride: 8,
            anchor_scales: vec![16.0, 32.0, 64.0, 128.0],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            rpn_pre_nms_top: 2000,
            rpn_nms_iou: 0.7,
            num_proposals: 300,
            rpn_batch: 256,
            rpn_pos_frac: 0.5,
            rpn_pos_iou: 0.7,
            rpn_neg_iou: 0.3,
            roi_batch: 64,
            roi_pos_frac: 0.25,
            roi_fg_iou: 0.5,
            roi_bg_iou_lo: 0.1,
            roi_bg_iou_hi: 0.5,
            crop_size: 7,
            score_threshold: 0.5,
            final_nms_iou: 0.5,
            lr: 1e-3,
            momentum: 0.9,
            grad_clip_norm: 10.0,
            steps: 2000,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

/// Keys in canonical order.
pub const DETECTOR_KEYS: &[&str] = &[
    "min_dim",
    "feature_stride",
    "anchor_scales",
    "anchor_ratios",
    "rpn_pre_nms_top",
    "rpn_nms_iou",
    "num_proposals",
    "rpn_batch",
    "rpn_pos_frac",
    "rpn_pos_iou",
    "rpn_neg_iou",
    "roi_batch",
    "roi_pos_frac",
    "roi_fg_iou",
    "roi_bg_iou_lo",
    "roi_bg_iou_hi",
    "crop_size",
    "score_threshold",
    "final_nms_iou",
    "lr",
    "momentum",
    "grad_clip_norm",
    "steps",
    "checkpoint_every",
    "seed",
];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V, DetectorError> {
    value.trim().parse().map_err(|_| DetectorError::BadConfig(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, DetectorError> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl DetectorConfig {
    /// Sets one key. Returns `Ok(false)` for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, DetectorError> {
        match key {
            "min_dim" => self.min_dim = parse(key, value)?,
            "feature_stride" => self.feature_stride = parse(key, value)?,
            "anchor_scales" => self.anchor_scales = parse_list(key, value)?,
            "anchor_ratios" => self.anchor_ratios = parse_list(key, value)?,
            "rpn_pre_nms_top" => self.rpn_pre_nms_top = parse(key, value)?,
            "rpn_nms_iou" => self.rpn_nms_iou = parse(key, value)?,
            "num_proposals" => self.num_proposals = parse(key, value)?,
            "rpn_batch" => self.rpn_batch = parse(key, value)?,
            "rpn_pos_frac" => self.rpn_pos_frac = parse(key, value)?,
            "rpn_pos_iou" => self.rpn_pos_iou = parse(key, value)?,
            "rpn_neg_iou" => self.rpn_neg_iou = parse(key, value)?,
            "roi_batch" => self.roi_batch = parse(key, value)?,
            "roi_pos_frac" => self.roi_pos_frac = parse(key, value)?,
            "roi_fg_iou" => self.roi_fg_iou = parse(key, value)?,
            "roi_bg_iou_lo" => self.roi_bg_iou_lo = parse(key, value)?,
            "roi_bg_iou_hi" => self.roi_bg_iou_hi = parse(key, value)?,
            "crop_size" => self.crop_size = parse(key, value)?,
            "score_threshold" => self.score_threshold = parse(key, value)?,
            "final_nms_iou" => self.final_nms_iou = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "grad_clip_norm" => self.grad_clip_norm = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "min_dim" => self.min_dim.to_string(),
            "feature_stride" => self.feature_stride.to_string(),
            "anchor_scales" => join(&self.anchor_scales),
            "anchor_ratios" => join(&self.anchor_ratios),
            "rpn_pre_nms_top" => self.rpn_pre_nms_top.to_string(),
            "rpn_nms_iou" => self.rpn_nms_iou.to_string(),
            "num_proposals" => self.num_proposals.to_string(),
            "rpn_batch" => self.rpn_batch.to_string(),
            "rpn_pos_frac" => self.rpn_pos_frac.to_string(),
            "rpn_pos_iou" => self.rpn_pos_iou.to_string(),
            "rpn_neg_iou" => self.rpn_neg_iou.to_string(),
            "roi_batch" => self.roi_batch.to_string(),
            "roi_pos_frac" => self.roi_pos_frac.to_string(),
            "roi_fg_iou" => self.roi_fg_iou.to_string(),
            "roi_bg_iou_lo" => self.roi_bg_iou_lo.to_string(),
            "roi_bg_iou_hi" => self.roi_bg_iou_hi.to_string(),
            "crop_size" => self.crop_size.to_string(),
            "score_threshold" => self.score_threshold.to_string(),
            "final_nms_iou" => self.final_nms_iou.to_string(),
            "lr" => self.lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "grad_clip_norm" => self.grad_clip_norm.to_string(),
            "steps" => self.steps.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// Canonical `key=value` lines in [`DETECTOR_KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in DETECTOR_KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("every listed key has a value"));
        }
        out
    }

    /// Parses `key=value` lines over the defaults; blank lines and `#`
    /// comments are skipped and unknown keys are rejected.
    pub fn from_text(text: &str) -> Result<Self, DetectorError> {
        let mut cfg = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DetectorError::BadConfig(format!("expected key=value, got {line:?}")))?;
            if !cfg.set(k.trim(), v)? {
                return Err(DetectorError::BadConfig(format!("unknown key {:?}", k.trim())));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_scales.len() * self.anchor_ratios.len()
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: &str| Err(DetectorError::BadConfig(m.to_string()));
        let unit = [
            self.rpn_nms_iou,
            self.rpn_pos_frac,
            self.rpn_pos_iou,
            self.rpn_neg_iou,
            self.roi_pos_frac,
            self.roi_fg_iou,
            self.roi_bg_iou_lo,
            self.roi_bg_iou_hi,
            self.score_threshold,
            self.final_nms_iou,
        ];
        if unit.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("thresholds and fractions must lie in [0, 1]");
        }
        if self.rpn_neg_iou >= self.rpn_pos_iou {
            return bad("rpn_neg_iou must be below rpn_pos_iou");
        }
        if self.roi_bg_iou_lo > self.roi_bg_iou_hi {
            return bad("roi_bg_iou_lo must not exceed roi_bg_iou_hi");
        }
        if self.num_proposals == 0 || self.num_proposals > self.rpn_pre_nms_top {
            return bad("num_proposals must be in 1..=rpn_pre_nms_top");
        }
        if self.feature_stride != super::BACKBONE_STRIDE {
            return bad("feature_stride must equal the backbone stride (8)");
        }
        if self.anchor_scales.is_empty() || self.anchor_ratios.is_empty() {
            return bad("anchor scales and ratios must be non-empty");
        }
        if self.anchor_scales.iter().chain(&self.anchor_ratios).any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("anchor scales and ratios must be positive");
        }
        if self.min_dim < self.feature_stride || self.crop_size == 0 || self.rpn_batch == 0 || self.roi_batch == 0 {
            return bad("min_dim, crop_size, rpn_batch and roi_batch must be positive");
        }
        if !(self.lr >= 0.0 && self.momentum >= 0.0 && self.momentum < 1.0) {
            return bad("lr must be non-negative and momentum in [0, 1)");
        }
        Ok(())
    }
}
