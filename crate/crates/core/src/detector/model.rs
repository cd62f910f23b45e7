use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    assign_roi_targets, assign_rpn_targets, make_anchors, propose, stream_rng, AnchorLabel, DetectorConfig,
    DetectorError, Preprocessed, Proposal, Result, BACKBONE_STRIDE,
};
use crate::boxes::BBox;
use crate::tensor::{softmax_rows, Graph, ParamStore, Scalar, Tensor, TensorError, Var};

const BACKBONE: [(&str, usize, usize); 4] =
    [("backbone.conv1", 1, 16), ("backbone.conv2", 16, 32), ("backbone.conv3", 32, 64), ("backbone.conv4", 64, 64)];
const FEATURES: usize = 64;
const HIDDEN: usize = 256;

const RPN_SAMPLE_STREAM: u64 = 0;
const ROI_SAMPLE_STREAM: u64 = 1;

/// Per-anchor proposal network outputs, rows in anchor-grid order.
#[derive(Debug, Clone, Copy)]
pub struct RpnOutput {
    /// `[A, 2]`, column 1 is "object".
    pub logits: Var,
    /// `[A, 4]`.
    pub deltas: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct RoiOutput {
    /// `[R, C + 1]`, column 0 is background.
    pub logits: Var,
    /// `[R, 4]`, class-agnostic refinement.
    pub deltas: Var,
}

/// Scalar loss nodes of one training forward pass.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: Var,
    pub rpn_cls: Var,
    pub rpn_reg: Var,
    pub roi_cls: Var,
    pub roi_reg: Var,
    pub proposals: Vec<Proposal>,
}

/// Network parameters. `num_classes` counts the background class.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub params: ParamStore<T>,
    num_classes: usize,
    anchors_per_cell: usize,
    crop_size: usize,
}

fn normal<T: Scalar>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("non-empty shape")
}

impl<T: Scalar> Model<T> {
    /// Convolutions and hidden layers use He-normal weights; the output heads
    /// start small (std 0.01 for scores, 0.001 for deltas). Biases are zero.
    pub fn new(num_classes: usize, cfg: &DetectorConfig, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(DetectorError::BadConfig("need at least one class besides background".into()));
        }
        let k = cfg.anchors_per_cell();
        let flat = FEATURES * cfg.crop_size * cfg.crop_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut conv =
            |params: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, ks: usize, std: Option<f64>| {
                let std = std.unwrap_or_else(|| (2.0 / (cin * ks * ks) as f64).sqrt());
                params.add(&format!("{name}.weight"), normal(&[cout, cin, ks, ks], std, &mut rng))?;
                params.add(&format!("{name}.bias"), Tensor::zeros(&[cout]))
            };
        for (name, cin, cout) in BACKBONE {
            conv(&mut params, name, cin, cout, 3, None)?;
        }
        conv(&mut params, "rpn.conv", FEATURES, FEATURES, 3, None)?;
        conv(&mut params, "rpn.cls", FEATURES, 2 * k, 1, Some(0.01))?;
        conv(&mut params, "rpn.reg", FEATURES, 4 * k, 1, Some(0.001))?;
        let mut dense = |name: &str, din: usize, dout: usize, std: Option<f64>| {
            let std = std.unwrap_or_else(|| (2.0 / din as f64).sqrt());
            params.add(&format!("{name}.weight"), normal(&[din, dout], std, &mut rng))?;
            params.add(&format!("{name}.bias"), Tensor::zeros(&[dout]))
        };
        dense("roi.fc1", flat, HIDDEN, None)?;
        dense("roi.fc2", HIDDEN, HIDDEN, None)?;
        dense("roi.cls", HIDDEN, num_classes, Some(0.01))?;
        dense("roi.reg", HIDDEN, 4, Some(0.001))?;
        Ok(Self { params, num_classes, anchors_per_cell: k, crop_size: cfg.crop_size })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut params = ParamStore::new();
        for (_, p) in self.params.iter() {
            params.add(&p.name, p.value.cast()).expect("names are already unique");
        }
        Model {
            params,
            num_classes: self.num_classes,
            anchors_per_cell: self.anchors_per_cell,
            crop_size: self.crop_size,
        }
    }

    fn layer(&self, g: &mut Graph<T>, name: &str) -> (Var, Var) {
        let w = self.params.id(&format!("{name}.weight")).expect("layer exists");
        let b = self.params.id(&format!("{name}.bias")).expect("layer exists");
        (g.param(&self.params, w), g.param(&self.params, b))
    }

    fn conv(&self, g: &mut Graph<T>, name: &str, x: Var, pad: usize) -> Result<Var> {
        let (w, b) = self.layer(g, name);
        Ok(g.conv2d(x, w, b, 1, pad)?)
    }

    fn dense(&self, g: &mut Graph<T>, name: &str, x: Var) -> Result<Var> {
        let (w, b) = self.layer(g, name);
        Ok(g.linear(x, w, b)?)
    }

    /// `[1, 1, H, W]` to `[1, 64, H/8, W/8]`.
    pub fn backbone(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let stride = BACKBONE_STRIDE as usize;
        if s.len() != 4 || s[0] != 1 || s[1] != 1 || !s[2].is_multiple_of(stride) || !s[3].is_multiple_of(stride) {
            return Err(TensorError::ShapeMismatch(format!("backbone needs [1, 1, 8h, 8w], got {s:?}")).into());
        }
        let mut h = x;
        for (i, (name, _, _)) in BACKBONE.iter().enumerate() {
            h = self.conv(g, name, h, 1)?;
            h = g.relu(h);
            if i < 3 {
                h = g.max_pool2(h)?;
            }
        }
        Ok(h)
    }

    pub fn rpn(&self, g: &mut Graph<T>, features: Var) -> Result<RpnOutput> {
        let h = self.conv(g, "rpn.conv", features, 1)?;
        let h = g.relu(h);
        let cls = self.conv(g, "rpn.cls", h, 0)?;
        let reg = self.conv(g, "rpn.reg", h, 0)?;
        Ok(RpnOutput { logits: g.anchor_rows(cls, 2)?, deltas: g.anchor_rows(reg, 4)? })
    }

    /// Classifies regions given in input-image pixels.
    pub fn roi_head(&self, g: &mut Graph<T>, features: Var, rois: &[BBox]) -> Result<RoiOutput> {
        let stride = f64::from(BACKBONE_STRIDE);
        let cells: Vec<BBox> = rois.iter().map(|b| b.scale(1.0 / stride)).collect();
        let crops = g.crop_resize(features, &cells, self.crop_size)?;
        let flat = g.reshape(crops, &[rois.len(), FEATURES * self.crop_size * self.crop_size])?;
        let h = self.dense(g, "roi.fc1", flat)?;
        let h = g.relu(h);
        let h = self.dense(g, "roi.fc2", h)?;
        let h = g.relu(h);
        Ok(RoiOutput { logits: self.dense(g, "roi.cls", h)?, deltas: self.dense(g, "roi.reg", h)? })
    }

    /// Backbone and proposal network, then the decoded proposals.
    pub fn forward_proposals(
        &self,
        g: &mut Graph<T>,
        pre: &Preprocessed<T>,
        cfg: &DetectorConfig,
    ) -> Result<(Var, RpnOutput, Vec<BBox>, Vec<Proposal>)> {
        let x = g.input(pre.input.clone());
        let features = self.backbone(g, x)?;
        let fs = g.shape(features).to_vec();
        let grid = make_anchors(fs[2], fs[3], cfg);
        let rpn = self.rpn(g, features)?;
        let objectness: Vec<f64> =
            softmax_rows(g.value(rpn.logits).data(), 2).chunks(2).map(|p| p[1].as_f64()).collect();
        let deltas: Vec<f64> = g.value(rpn.deltas).data().iter().map(|v| v.as_f64()).collect();
        let proposals =
            propose(&grid.anchors, &objectness, &deltas, pre.content_width as f64, pre.content_height as f64, cfg);
        Ok((features, rpn, grid.anchors, proposals))
    }

    /// Joint training loss for one image; target sampling is keyed by
    /// `(cfg.seed, step)`. Proposals enter the region head as constants.
    pub fn loss(
        &self,
        g: &mut Graph<T>,
        pre: &Preprocessed<T>,
        cfg: &DetectorConfig,
        step: u64,
    ) -> Result<LossBreakdown> {
        self.loss_with(g, pre, cfg, step, None)
    }

    /// [`Model::loss`] with the proposal set supplied instead of computed.
    pub fn loss_with(
        &self,
        g: &mut Graph<T>,
        pre: &Preprocessed<T>,
        cfg: &DetectorConfig,
        step: u64,
        fixed: Option<&[Proposal]>,
    ) -> Result<LossBreakdown> {
        let (features, rpn, anchors, mut proposals) = self.forward_proposals(g, pre, cfg)?;
        if let Some(p) = fixed {
            proposals = p.to_vec();
        }
        let truth_boxes: Vec<BBox> = pre.truth.iter().map(|&(_, b)| b).collect();
        let mut rng = stream_rng(cfg.seed, step, RPN_SAMPLE_STREAM);
        let targets = assign_rpn_targets(
            &anchors,
            &truth_boxes,
            pre.content_width as f64,
            pre.content_height as f64,
            cfg,
            &mut rng,
        );
        let cls_target: Vec<usize> = targets.labels.iter().map(|&l| usize::from(l == AnchorLabel::Positive)).collect();
        let cls_weight: Vec<f64> =
            targets.labels.iter().map(|&l| f64::from(u8::from(l != AnchorLabel::Ignore))).collect();
        let rpn_cls = g.softmax_cross_entropy(rpn.logits, &cls_target, &cls_weight)?;
        let reg_target: Vec<f64> = targets.deltas.iter().flat_map(|d| d.to_array()).collect();
        let reg_weight: Vec<f64> =
            targets.labels.iter().flat_map(|&l| [f64::from(u8::from(l == AnchorLabel::Positive)); 4]).collect();
        let rpn_reg = g.smooth_l1(rpn.deltas, &Tensor::from_f64(&[anchors.len(), 4], &reg_target)?, &reg_weight)?;

        let boxes: Vec<BBox> = proposals.iter().map(|p| p.bbox).collect();
        let mut rng = stream_rng(cfg.seed, step, ROI_SAMPLE_STREAM);
        let rois = assign_roi_targets(&boxes, &pre.truth, cfg, &mut rng);
        let (roi_cls, roi_reg) = if rois.is_empty() {
            let zero = g.input(Tensor::scalar(T::zero()));
            (zero, zero)
        } else {
            let regions: Vec<BBox> = rois.iter().map(|r| r.bbox).collect();
            let head = self.roi_head(g, features, &regions)?;
            let classes: Vec<usize> = rois.iter().map(|r| r.class_index).collect();
            let roi_cls = g.softmax_cross_entropy(head.logits, &classes, &vec![1.0; rois.len()])?;
            let target: Vec<f64> = rois.iter().flat_map(|r| r.delta.unwrap_or_default().to_array()).collect();
            let weight: Vec<f64> = rois.iter().flat_map(|r| [f64::from(u8::from(r.delta.is_some())); 4]).collect();
            let roi_reg = g.smooth_l1(head.deltas, &Tensor::from_f64(&[rois.len(), 4], &target)?, &weight)?;
            (roi_cls, roi_reg)
        };
        let rpn_total = g.add(rpn_cls, rpn_reg)?;
        let roi_total = g.add(roi_cls, roi_reg)?;
        let total = g.add(rpn_total, roi_total)?;
        Ok(LossBreakdown { total, rpn_cls, rpn_reg, roi_cls, roi_reg, proposals })
    }
}
