use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symdet::boxes::{iou, nms, BBox, ScoredBox};
use symdet::tensor::{Graph, Tensor};

fn random_boxes(n: usize) -> Vec<ScoredBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..n)
        .map(|rank| {
            let (x, y) = (rng.random_range(0.0..700.0), rng.random_range(0.0..300.0));
            let bbox = BBox::new(x, y, x + rng.random_range(4.0..80.0), y + rng.random_range(4.0..80.0));
            ScoredBox { bbox, score: rng.random(), class_index: 0, rank }
        })
        .collect()
}

fn boxes(c: &mut Criterion) {
    let input = random_boxes(2000);
    let (a, b) = (input[0].bbox, input[1].bbox);
    c.bench_function("iou", |bench| bench.iter(|| iou(black_box(&a), black_box(&b))));
    c.bench_function("nms 2000 @0.7", |bench| bench.iter(|| nms(black_box(&input), 0.7, 300)));
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut random = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::<f32>::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let (x, w, b) = (random(&[1, 16, 76, 150]), random(&[32, 16, 3, 3]), random(&[32]));
    c.bench_function("conv2d 16->32 76x150 forward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (x, w, b) = (g.input(x.clone()), g.variable(w.clone()), g.variable(b.clone()));
            black_box(g.conv2d(x, w, b, 1, 1).unwrap());
        })
    });
    c.bench_function("conv2d 16->32 76x150 forward+backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (x, w, b) = (g.variable(x.clone()), g.variable(w.clone()), g.variable(b.clone()));
            let y = g.conv2d(x, w, b, 1, 1).unwrap();
            let s = g.sum(y);
            g.backward(s).unwrap();
        })
    });
}

criterion_group!(benches, boxes, conv);
criterion_main!(benches);
