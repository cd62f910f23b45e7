use super::*;
use crate::boxes::BBox;
use crate::ink::ClassVocabulary;
use crate::raster::{generate_synthetic_dataset, synthetic_vocabulary, RasterConfig, RasterImage};
use crate::tensor::gradcheck::relative_error;
use crate::tensor::{softmax_rows, Graph, Tensor, TensorError};

fn small_cfg() -> DetectorConfig {
    DetectorConfig { min_dim: 64, ..Default::default() }
}

fn random_input(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    use rand::Rng;
    let mut rng = stream_rng(seed, 0, 9);
    let data = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    Tensor::new(vec![1, 1, h, w], data).unwrap()
}

fn sample_64() -> Preprocessed<f64> {
    let mut img = RasterImage::blank(64, 64);
    for i in 10..30 {
        img.set(i, 10, 0);
        img.set(i, 29, 0);
        img.set(10, i, 0);
        img.set(29, i, 0);
    }
    for i in 36..56 {
        img.set(i, i - 4, 0);
        img.set(i, 87 - i, 0);
    }
    let truth = [(1, BBox::new(9.0, 9.0, 31.0, 31.0)), (2, BBox::new(35.0, 31.0, 57.0, 53.0))];
    preprocess(&img, &truth, &small_cfg())
}

#[test]
fn backbone_shapes_and_zero_input() {
    let cfg = small_cfg();
    let model = Model::<f64>::new(4, &cfg, 1).unwrap();
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[1, 1, 64, 64]));
    let f = model.backbone(&mut g, x).unwrap();
    assert_eq!(g.shape(f), &[1, 64, 8, 8]);
    assert!(g.value(f).data().iter().all(|&v| v == 0.0));
    let bad = g.input(Tensor::zeros(&[1, 1, 60, 64]));
    assert!(matches!(model.backbone(&mut g, bad), Err(DetectorError::Tensor(TensorError::ShapeMismatch(_)))));
}

#[test]
fn head_shapes_and_determinism() {
    let cfg = small_cfg();
    let model = Model::<f64>::new(4, &cfg, 1).unwrap();
    let run = || {
        let mut g = Graph::new();
        let x = g.input(random_input(64, 64, 3));
        let f = model.backbone(&mut g, x).unwrap();
        let rpn = model.rpn(&mut g, f).unwrap();
        let rois = [BBox::new(0.0, 0.0, 20.0, 20.0), BBox::new(10.0, 5.0, 60.0, 30.0), BBox::new(1.0, 1.0, 2.0, 2.0)];
        let roi = model.roi_head(&mut g, f, &rois).unwrap();
        assert_eq!(g.shape(rpn.logits), &[768, 2]);
        assert_eq!(g.shape(rpn.deltas), &[768, 4]);
        assert_eq!(g.shape(roi.logits), &[3, 4]);
        assert_eq!(g.shape(roi.deltas), &[3, 4]);
        for (v, c) in [(rpn.logits, 2), (roi.logits, 4)] {
            for row in softmax_rows(g.value(v).data(), c).chunks(c) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        (g.value(rpn.logits).clone(), g.value(roi.logits).clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn gradient_reaches_first_conv() {
    let cfg = small_cfg();
    let model = Model::<f64>::new(4, &cfg, 2).unwrap();
    let pre = sample_64();
    let mut g = Graph::new();
    let parts = model.loss(&mut g, &pre, &cfg, 1).unwrap();
    g.backward(parts.total).unwrap();
    let mut store = model.params.clone();
    store.accumulate_grads(&g);
    let id = store.id("backbone.conv1.weight").unwrap();
    assert!(store.get(id).grad.data().iter().any(|&v| v != 0.0));

    // the region head alone also reaches the backbone through crop_resize
    let mut g = Graph::new();
    let x = g.input(pre.input.clone());
    let f = model.backbone(&mut g, x).unwrap();
    let roi = model.roi_head(&mut g, f, &[BBox::new(8.0, 8.0, 40.0, 40.0)]).unwrap();
    let s = g.sum(roi.logits);
    g.backward(s).unwrap();
    let mut store = model.params.clone();
    store.accumulate_grads(&g);
    assert!(store.get(id).grad.data().iter().any(|&v| v != 0.0));
}

#[test]
fn loss_without_truth_has_no_regression() {
    let cfg = small_cfg();
    let model = Model::<f64>::new(4, &cfg, 3).unwrap();
    let img = RasterImage::blank(64, 64);
    let pre = preprocess(&img, &[], &cfg);
    let mut g = Graph::new();
    let parts = model.loss(&mut g, &pre, &cfg, 1).unwrap();
    assert_eq!(g.value(parts.rpn_reg).item(), 0.0);
    assert_eq!(g.value(parts.roi_reg).item(), 0.0);
    assert!(g.value(parts.total).item().is_finite());
}

#[test]
fn untrained_roi_loss_near_uniform() {
    let cfg = small_cfg();
    let model = Model::<f64>::new(4, &cfg, 4).unwrap();
    let pre = sample_64();
    let mut g = Graph::new();
    let parts = model.loss(&mut g, &pre, &cfg, 1).unwrap();
    let v = g.value(parts.roi_cls).item();
    assert!((v - 4f64.ln()).abs() < 0.05, "{v}");
    assert!((g.value(parts.rpn_cls).item() - 2f64.ln()).abs() < 0.05);
}

#[test]
fn ignored_anchor_logits_do_not_matter() {
    let cfg = small_cfg();
    let model = Model::<f64>::new(4, &cfg, 5).unwrap();
    let pre = sample_64();
    let mut g = Graph::new();
    let (_, rpn, anchors, _) = model.forward_proposals(&mut g, &pre, &cfg).unwrap();
    let truth: Vec<BBox> = pre.truth.iter().map(|t| t.1).collect();
    let targets = assign_rpn_targets(&anchors, &truth, 64.0, 64.0, &cfg, &mut stream_rng(cfg.seed, 7, 0));
    let ignored: Vec<usize> = (0..anchors.len()).filter(|&i| targets.labels[i] == AnchorLabel::Ignore).collect();
    assert!(!ignored.is_empty());
    let cls: Vec<usize> = targets.labels.iter().map(|&l| usize::from(l == AnchorLabel::Positive)).collect();
    let w: Vec<f64> = targets.labels.iter().map(|&l| f64::from(u8::from(l != AnchorLabel::Ignore))).collect();
    let ce = |logits: Tensor<f64>| {
        let mut g = Graph::new();
        let z = g.variable(logits);
        let l = g.softmax_cross_entropy(z, &cls, &w).unwrap();
        g.value(l).item()
    };
    let mut perturbed = g.value(rpn.logits).clone();
    for &i in &ignored {
        perturbed.data_mut()[2 * i] += 3.5;
        perturbed.data_mut()[2 * i + 1] -= 2.0;
    }
    assert_eq!(ce(g.value(rpn.logits).clone()), ce(perturbed));
}

#[test]
fn end_to_end_directional_derivative() {
    use rand::Rng;
    let cfg = small_cfg();
    let mut model = Model::<f64>::new(4, &cfg, 6).unwrap();
    // zero biases on blank background sit exactly on ReLU kinks
    let mut rng = stream_rng(12, 0, 0);
    let ids: Vec<_> = model.params.iter().filter(|(_, p)| p.name.ends_with(".bias")).map(|(id, _)| id).collect();
    for id in ids {
        for b in model.params.get_mut(id).value.data_mut() {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    let pre = sample_64();
    let mut g = Graph::new();
    let fixed = model.loss(&mut g, &pre, &cfg, 1).unwrap().proposals;
    assert!(!fixed.is_empty());
    let eval = |m: &Model<f64>| {
        let mut g = Graph::new();
        let parts = m.loss_with(&mut g, &pre, &cfg, 1, Some(&fixed)).unwrap();
        (g, parts)
    };
    let (mut g, parts) = eval(&model);
    g.backward(parts.total).unwrap();
    let mut store = model.params.clone();
    store.accumulate_grads(&g);
    let mut rng = stream_rng(11, 0, 0);
    let dirs: Vec<Vec<f64>> =
        store.iter().map(|(_, p)| (0..p.value.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let analytic: f64 =
        store.iter().zip(&dirs).map(|((_, p), d)| p.grad.data().iter().zip(d).map(|(a, b)| a * b).sum::<f64>()).sum();
    let eps = 1e-6;
    let shifted = |sign: f64| {
        let mut m = model.clone();
        let ids: Vec<_> = m.params.iter().map(|(id, _)| id).collect();
        for (id, d) in ids.into_iter().zip(&dirs) {
            for (w, dv) in m.params.get_mut(id).value.data_mut().iter_mut().zip(d) {
                *w += sign * eps * dv;
            }
        }
        let (g, parts) = eval(&m);
        g.value(parts.total).item()
    };
    let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
    let err = relative_error(&[analytic], &[numeric]);
    assert!(err < 1e-3, "analytic {analytic} numeric {numeric} err {err}");
}

#[test]
fn checkpoint_roundtrip_and_guards() {
    let vocab = ClassVocabulary::from_classes(["x", "y"]);
    let det = Detector::new(small_cfg(), vocab.clone()).unwrap();
    let bytes = det.to_bytes();
    assert_eq!(&bytes[..4], b"FRCN");
    let back = Detector::from_bytes(&bytes).unwrap();
    assert_eq!(back.vocab, vocab);
    assert_eq!(back.config, det.config);
    assert_eq!(back.to_bytes(), bytes);
    for (_, p) in det.model.params.iter() {
        let q = back.model.params.get(back.model.params.id(&p.name).unwrap());
        assert!(p.value.data().iter().zip(q.value.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    assert!(matches!(Detector::from_bytes(&bytes[..bytes.len() - 3]), Err(DetectorError::TruncatedFile)));
    assert!(matches!(Detector::from_bytes(&bytes[..2]), Err(DetectorError::TruncatedFile)));
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    assert!(matches!(Detector::from_bytes(&bad), Err(DetectorError::BadMagic(m)) if &m == b"XXXX"));
    let mut bad = bytes.clone();
    bad[4] = 2;
    assert!(matches!(Detector::from_bytes(&bad), Err(DetectorError::VersionMismatch { found: 2, expected: 1 })));

    // duplicate the first tensor record in place of the second
    let header_end = {
        let mut pos = 12;
        for name in vocab.names() {
            pos += 4 + name.len();
        }
        pos + 4 + det.config.to_text().len()
    };
    let first = header_end + 4;
    let p0 = det.model.params.iter().next().unwrap().1;
    let rec0 = 4 + p0.name.len() + 1 + 4 * p0.value.shape().len() + 4 * p0.value.len();
    let mut dup = bytes[..first + rec0].to_vec();
    dup.extend_from_slice(&bytes[first..first + rec0]);
    dup.extend_from_slice(&bytes[first + rec0..]);
    assert!(matches!(Detector::from_bytes(&dup), Err(DetectorError::DuplicateTensorName(n)) if n == p0.name));
}

#[test]
fn detections_respect_contract() {
    let data = generate_synthetic_dataset(1, 5, &RasterConfig::default()).unwrap();
    let cfg = DetectorConfig { score_threshold: 0.0, ..Default::default() };
    let det = Detector::new(cfg.clone(), synthetic_vocabulary()).unwrap();
    let img = &data[0].image;
    let out = det.detect(img).unwrap();
    assert!(!out.is_empty());
    for d in &out {
        assert!(d.class_index >= 1 && d.class_index < 4);
        assert!((cfg.score_threshold..=1.0).contains(&d.score));
        let b = d.bbox;
        assert!(b.xmin >= 0.0 && b.ymin >= 0.0 && b.xmax <= img.width as f64 && b.ymax <= img.height as f64);
    }
    assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(det.proposals(img).unwrap().len() <= cfg.num_proposals);
}

#[test]
fn short_training_is_deterministic() {
    let data = generate_synthetic_dataset(3, 1, &RasterConfig::default()).unwrap();
    let cfg = DetectorConfig { steps: 4, ..Default::default() };
    let run = || {
        let mut seen = 0;
        let (det, m) = train(&data, synthetic_vocabulary(), &cfg, |_, _| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, 4);
        (det.to_bytes(), metrics_csv(&m))
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.1.starts_with("step,total,rpn_cls,rpn_reg,roi_cls,roi_reg\n1,"));
    assert_eq!(a.1.lines().count(), 5);
}

#[test]
fn train_rejects_bad_input() {
    let cfg = DetectorConfig { steps: 1, ..Default::default() };
    assert!(matches!(train(&[], synthetic_vocabulary(), &cfg, |_, _| Ok(())), Err(DetectorError::EmptyDataset)));
    let mut data = generate_synthetic_dataset(1, 1, &RasterConfig::default()).unwrap();
    data[0].truth[0].0 = 9;
    assert!(train(&data, synthetic_vocabulary(), &cfg, |_, _| Ok(())).is_err());
}
