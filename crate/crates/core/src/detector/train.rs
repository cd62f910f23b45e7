use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::{preprocess, stream_rng, Detector, DetectorConfig, DetectorError, Preprocessed, Result};
use crate::ink::ClassVocabulary;
use crate::raster::RasterSample;
use crate::tensor::{sgd_step, Graph, SgdConfig, TensorError};

const SHUFFLE_STREAM: u64 = 2;

pub const METRICS_HEADER: &str = "step,total,rpn_cls,rpn_reg,roi_cls,roi_reg";

/// Loss values of one training step (1-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub total: f64,
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub roi_cls: f64,
    pub roi_reg: f64,
}

impl StepMetrics {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{},{}", self.step, self.total, self.rpn_cls, self.rpn_reg, self.roi_cls, self.roi_reg)
    }
}

/// Header line plus one line per step.
pub fn metrics_csv(metrics: &[StepMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in metrics {
        let _ = writeln!(out, "{}", m.csv_line());
    }
    out
}

/// Joint SGD with batch size 1 for `cfg.steps` steps, visiting the samples
/// in a fresh seeded order every epoch. `on_step` runs after each update.
pub fn train(
    samples: &[RasterSample],
    vocab: ClassVocabulary,
    cfg: &DetectorConfig,
    mut on_step: impl FnMut(&StepMetrics, &Detector) -> Result<()>,
) -> Result<(Detector, Vec<StepMetrics>)> {
    if samples.is_empty() {
        return Err(DetectorError::EmptyDataset);
    }
    if let Some(&(c, _)) = samples.iter().flat_map(|s| &s.truth).find(|(c, _)| *c == 0 || *c >= vocab.len()) {
        return Err(DetectorError::BadConfig(format!("class index {c} outside the vocabulary")));
    }
    let mut det = Detector::new(cfg.clone(), vocab)?;
    let inputs: Vec<Preprocessed<f32>> = samples.iter().map(|s| preprocess(&s.image, &s.truth, cfg)).collect();
    let sgd = SgdConfig { lr: cfg.lr, momentum: cfg.momentum, grad_clip_norm: cfg.grad_clip_norm };
    let mut order: Vec<usize> = Vec::new();
    let mut metrics = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let pos = (step - 1) % inputs.len();
        if pos == 0 {
            order = (0..inputs.len()).collect();
            order.shuffle(&mut stream_rng(cfg.seed, ((step - 1) / inputs.len()) as u64, SHUFFLE_STREAM));
        }
        let mut g = Graph::new();
        let parts = det.model.loss(&mut g, &inputs[order[pos]], cfg, step as u64)?;
        let value = |v| f64::from(g.value(v).item());
        let m = StepMetrics {
            step,
            total: value(parts.total),
            rpn_cls: value(parts.rpn_cls),
            rpn_reg: value(parts.rpn_reg),
            roi_cls: value(parts.roi_cls),
            roi_reg: value(parts.roi_reg),
        };
        if !m.total.is_finite() {
            return Err(DetectorError::NonFinite(format!("loss at step {step}")));
        }
        g.backward(parts.total)?;
        det.model.params.accumulate_grads(&g);
        sgd_step(&mut det.model.params, &sgd).map_err(|e| match e {
            TensorError::NonFiniteGradient(param) => DetectorError::NonFiniteGradient { step, param },
            other => other.into(),
        })?;
        log::debug!("step {step} loss {}", m.total);
        on_step(&m, &det)?;
        metrics.push(m);
    }
    Ok((det, metrics))
}
