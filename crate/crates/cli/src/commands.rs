use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use symdet::detector::{metrics_csv, train as train_detector};
use symdet::eval::{evaluate, render_overlay, ApVariant};
use symdet::ink::{build_vocabulary, split_train_val};
use symdet::raster::{generate_synthetic_dataset, make_sample, read_pgm, synthetic_vocabulary, write_pgm};
use symdet::{parse_inkml, ClassVocabulary, Detection, Detector, RasterImage, RasterSample};

use crate::annotations::{self, BoxRecord, ImageRecord};
use crate::run_config::RunConfig;
use crate::CliError;

const IMAGE_DIR: &str = "images";

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| data_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    files.sort();
    Ok(files)
}

fn record(image: String, sample: &RasterSample, vocab: &ClassVocabulary) -> ImageRecord {
    ImageRecord {
        image,
        width: sample.image.width,
        height: sample.image.height,
        boxes: sample
            .truth
            .iter()
            .map(|(c, b)| BoxRecord {
                class: vocab.name(*c).unwrap_or_default().to_string(),
                bbox: [b.xmin, b.ymin, b.xmax, b.ymax],
                score: None,
            })
            .collect(),
    }
}

fn stats(samples: &[(String, RasterSample)], vocab: &ClassVocabulary) -> String {
    let mut classes = vec![0usize; vocab.len()];
    let edges = [8.0, 16.0, 32.0, 64.0, 128.0, 256.0];
    let mut dims = vec![0usize; edges.len() + 1];
    for (_, s) in samples {
        for (c, b) in &s.truth {
            classes[*c] += 1;
            let d = b.width().max(b.height());
            dims[edges.iter().take_while(|&&e| d >= e).count()] += 1;
        }
    }
    let mut out = format!("images {}\n", samples.len());
    out.push_str("# class histogram\n");
    for (c, n) in classes.iter().enumerate().skip(1) {
        let _ = writeln!(out, "class {} {n}", vocab.name(c).unwrap_or_default());
    }
    out.push_str("# box max-dimension histogram (px)\n");
    let mut lo = 0.0;
    for (i, n) in dims.iter().enumerate() {
        match edges.get(i) {
            Some(hi) => {
                let _ = writeln!(out, "dim [{lo},{hi}) {n}");
                lo = *hi;
            }
            None => {
                let _ = writeln!(out, "dim [{lo},inf) {n}");
            }
        }
    }
    out
}

/// Images, annotation splits, vocabulary and stats under `out`.
fn write_dataset(
    out: &Path,
    train: &[(String, RasterSample)],
    val: &[(String, RasterSample)],
    vocab: &ClassVocabulary,
) -> Result<(), CliError> {
    let images = out.join(IMAGE_DIR);
    fs::create_dir_all(&images).map_err(|e| data_err(&images, e))?;
    for (split, items) in [("train", train), ("val", val)] {
        let mut records = Vec::with_capacity(items.len());
        for (name, s) in items {
            let file = format!("{name}.pgm");
            write_pgm(&s.image, images.join(&file)).map_err(|e| data_err(&images.join(&file), e))?;
            records.push(record(format!("{IMAGE_DIR}/{file}"), s, vocab));
        }
        annotations::write(&out.join(format!("{split}.jsonl")), &records)?;
    }
    annotations::write_vocab(&out.join("vocab.txt"), vocab)?;
    let all: Vec<_> = train.iter().chain(val).cloned().collect();
    fs::write(out.join("stats.txt"), stats(&all, vocab)).map_err(|e| data_err(out, e))?;
    info!("wrote {} training and {} validation images to {}", train.len(), val.len(), out.display());
    Ok(())
}

pub fn convert(input: &Path, out: &Path, config: Option<&Path>, seed: u64, no_split: bool) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let files = files_with_ext(input, "inkml")?;
    let mut failed = 0;
    let mut parsed = Vec::new();
    for f in &files {
        match fs::read(f).map_err(|e| e.to_string()).and_then(|b| parse_inkml(&b).map_err(|e| e.to_string())) {
            Ok(g) => parsed.push((f.file_stem().unwrap_or_default().to_string_lossy().into_owned(), g)),
            Err(e) => {
                warn!("{}: {e}", f.display());
                failed += 1;
            }
        }
    }
    let graphics: Vec<_> = parsed.iter().map(|(_, g)| g.clone()).collect();
    let vocab = build_vocabulary(&graphics);
    let mut samples = Vec::new();
    for (name, g) in &parsed {
        match make_sample(g, &vocab, &cfg.raster) {
            Ok(s) => samples.push((name.clone(), s)),
            Err(e) => {
                warn!("{name}: {e}");
                failed += 1;
            }
        }
    }
    if samples.is_empty() {
        return Err(CliError::Data(format!("no usable InkML files in {} ({failed} failed)", input.display())));
    }
    if failed > 0 {
        warn!("{failed} of {} files failed", files.len());
    }
    let (train, val) = if no_split {
        (samples, Vec::new())
    } else {
        split_train_val(&samples, cfg.split_fraction, seed).map_err(|e| CliError::Usage(e.to_string()))?
    };
    write_dataset(out, &train, &val, &vocab)
}

pub fn synth(n: usize, seed: u64, out: &Path, val: usize) -> Result<(), CliError> {
    if n == 0 || val >= n {
        return Err(CliError::Usage("need n >= 1 and val < n".into()));
    }
    let samples =
        generate_synthetic_dataset(n, seed, &Default::default()).map_err(|e| CliError::Data(e.to_string()))?;
    let named: Vec<_> = samples.into_iter().map(|s| (s.source_id.clone(), s)).collect();
    let (train, val) = named.split_at(n - val);
    write_dataset(out, train, val, &synthetic_vocabulary())
}

fn load_split(data: &Path, split: &str, vocab: &ClassVocabulary) -> Result<Vec<RasterSample>, CliError> {
    let path = data.join(format!("{split}.jsonl"));
    annotations::read(&path)?
        .into_iter()
        .map(|r| {
            let img_path = data.join(&r.image);
            let image = read_pgm(&img_path).map_err(|e| data_err(&img_path, e))?;
            if (image.width, image.height) != (r.width, r.height) {
                return Err(data_err(&img_path, "dimensions differ from the annotation"));
            }
            Ok(RasterSample { truth: r.truth(vocab)?, image, source_id: r.image })
        })
        .collect()
}

pub fn metrics_path(checkpoint: &Path) -> PathBuf {
    let mut p = checkpoint.as_os_str().to_owned();
    p.push(".metrics.csv");
    PathBuf::from(p)
}

pub fn train(data: &Path, config: Option<&Path>, out: &Path, seed: u64) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config)?.detector;
    cfg.seed = seed;
    let vocab = annotations::read_vocab(&data.join("vocab.txt"))?;
    let samples = load_split(data, "train", &vocab)?;
    if samples.is_empty() {
        return Err(CliError::Data(format!("no training records in {}", data.display())));
    }
    info!("training on {} images for {} steps", samples.len(), cfg.steps);
    let every = cfg.checkpoint_every;
    let (det, metrics) = train_detector(&samples, vocab, &cfg, |m, det| {
        if m.step % 100 == 0 {
            info!("step {} loss {:.4}", m.step, m.total);
        }
        if every > 0 && m.step % every == 0 {
            det.save(out)?;
        }
        Ok(())
    })?;
    det.save(out)?;
    let log = metrics_path(out);
    fs::write(&log, metrics_csv(&metrics)).map_err(|e| data_err(&log, e))?;
    if let Some(m) = metrics.last() {
        println!(
            "step {} total {} rpn_cls {} rpn_reg {} roi_cls {} roi_reg {}",
            m.step, m.total, m.rpn_cls, m.rpn_reg, m.roi_cls, m.roi_reg
        );
    }
    Ok(())
}

fn detection_line(vocab: &ClassVocabulary, d: &Detection) -> String {
    let b = d.bbox;
    format!(
        "{} {:.6} {:.2} {:.2} {:.2} {:.2}",
        vocab.name(d.class_index).unwrap_or_default(),
        d.score,
        b.xmin,
        b.ymin,
        b.xmax,
        b.ymax
    )
}

fn detection_record(name: String, image: &RasterImage, dets: &[Detection], vocab: &ClassVocabulary) -> ImageRecord {
    ImageRecord {
        image: name,
        width: image.width,
        height: image.height,
        boxes: dets
            .iter()
            .map(|d| BoxRecord {
                class: vocab.name(d.class_index).unwrap_or_default().to_string(),
                bbox: [d.bbox.xmin, d.bbox.ymin, d.bbox.xmax, d.bbox.ymax],
                score: Some(d.score),
            })
            .collect(),
    }
}

pub fn detect(image: &Path, checkpoint: &Path, overlay: Option<&Path>, json: Option<&Path>) -> Result<(), CliError> {
    let det = Detector::load(checkpoint)?;
    let single = !image.is_dir();
    let files = if single { vec![image.to_path_buf()] } else { files_with_ext(image, "pgm")? };
    if overlay.is_some() && !single {
        return Err(CliError::Usage("--overlay needs a single --image".into()));
    }
    let mut records = Vec::with_capacity(files.len());
    for f in &files {
        let img = read_pgm(f).map_err(|e| data_err(f, e))?;
        let dets = det.detect(&img)?;
        let name = f.file_name().unwrap_or_default().to_string_lossy().into_owned();
        for d in &dets {
            if single {
                println!("{}", detection_line(&det.vocab, d));
            } else {
                println!("{name} {}", detection_line(&det.vocab, d));
            }
        }
        if let Some(o) = overlay {
            let boxes: Vec<_> = dets.iter().map(|d| d.bbox).collect();
            render_overlay(&img, &boxes, &[], o).map_err(|e| data_err(o, e))?;
        }
        records.push(detection_record(name, &img, &dets, &det.vocab));
    }
    if let Some(j) = json {
        annotations::write(j, &records)?;
    }
    Ok(())
}

fn base_name(image: &str) -> String {
    Path::new(image).file_name().map_or_else(|| image.to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn eval(
    truth: &Path,
    detections: &Path,
    iou: f64,
    report: Option<&Path>,
    eleven_point: bool,
) -> Result<(), CliError> {
    if !(iou > 0.0 && iou <= 1.0) {
        return Err(CliError::Usage("--iou must lie in (0, 1]".into()));
    }
    let truth_records = annotations::read(truth)?;
    let vocab_path = truth.parent().unwrap_or(Path::new(".")).join("vocab.txt");
    let vocab = if vocab_path.exists() {
        annotations::read_vocab(&vocab_path)?
    } else {
        let names: std::collections::BTreeSet<&str> =
            truth_records.iter().flat_map(|r| r.boxes.iter().map(|b| b.class.as_str())).collect();
        ClassVocabulary::from_classes(names)
    };
    let det_files =
        if detections.is_dir() { files_with_ext(detections, "jsonl")? } else { vec![detections.to_path_buf()] };
    let mut by_image: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for f in &det_files {
        for r in annotations::read(f)? {
            by_image.entry(base_name(&r.image)).or_default().extend(r.detections(&vocab)?);
        }
    }
    let mut gt = Vec::with_capacity(truth_records.len());
    let mut dets = Vec::with_capacity(truth_records.len());
    for r in &truth_records {
        gt.push(r.truth(&vocab)?);
        dets.push(by_image.remove(&base_name(&r.image)).unwrap_or_default());
    }
    for name in by_image.keys() {
        warn!("detections for {name} have no truth record");
    }
    let variant = if eleven_point { ApVariant::Eleven } else { ApVariant::AllPoints };
    let rep = evaluate(&gt, &dets, &vocab, iou, variant).map_err(|e| CliError::Data(e.to_string()))?;
    print!("{}", rep.to_table());
    let out = match report {
        Some(p) => p.to_path_buf(),
        None if detections.is_dir() => detections.join("report.csv"),
        None => detections.parent().unwrap_or(Path::new(".")).join("report.csv"),
    };
    fs::write(&out, rep.to_records()).map_err(|e| data_err(&out, e))
}
