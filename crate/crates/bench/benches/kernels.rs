use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use distortkd::audio_dsp::{band_reject, image_method_rir, log_mel, pitch_shift, MelConfig, RirParams};
use distortkd::distill::distil_loss_value;
use distortkd::nn::{Graph, ParamStore, Tensor, TransformerBlock};
use distortkd::rng::{substream, Rng};
use distortkd::teacher::{TeacherConfig, TeacherModel};
use distortkd::Waveform;
use rand::Rng as _;

fn uniform(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn noise_wave(secs: f64, rng: &mut Rng) -> Waveform {
    let n = (secs * 8000.0) as usize;
    Waveform::new((0..n).map(|_| rng.random_range(-0.3..0.3)).collect(), 8000).unwrap()
}

fn autodiff(c: &mut Criterion) {
    let mut rng = substream(1, "bench", 0);
    let (a, b) = (uniform(64, 64, &mut rng), uniform(64, 64, &mut rng));
    c.bench_function("matmul 64x64 fwd+bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (x, y) = (g.param(a.clone()), g.param(b.clone()));
            let m = g.matmul(x, y).unwrap();
            let s = g.sum(m);
            g.backward(s).unwrap();
            black_box(g.grad(x).unwrap()[0])
        })
    });

    let mut ps = ParamStore::new();
    let block = TransformerBlock::new(&mut ps, "blk", 64, 4, 128, &mut rng).unwrap();
    let x = uniform(50, 64, &mut rng);
    c.bench_function("transformer block T=50 D=64 fwd+bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let p = ps.bind(&mut g, true);
            let xv = g.constant(x.clone());
            let y = block.forward(&mut g, &p, xv).unwrap();
            let s = g.mean(y);
            g.backward(s).unwrap();
            black_box(g.len())
        })
    });

    let targets: Vec<Tensor> = (0..3).map(|_| uniform(50, 64, &mut rng)).collect();
    let preds: Vec<Tensor> = (0..3).map(|_| uniform(50, 64, &mut rng)).collect();
    c.bench_function("distil loss value 3x50x64", |bench| {
        bench.iter(|| black_box(distil_loss_value(&targets, &preds, 1.0).unwrap()))
    });
}

fn dsp(c: &mut Criterion) {
    let mut rng = substream(2, "bench", 0);
    let wave = noise_wave(1.0, &mut rng);
    let room = RirParams {
        room: [6.0, 5.0, 3.0],
        source: [1.5, 2.0, 1.4],
        mic: [4.2, 3.1, 1.6],
        absorption: 0.4,
        max_order: 3,
    };
    c.bench_function("image-method rir order 3", |bench| {
        bench.iter(|| black_box(image_method_rir(&room, 8000).unwrap().taps.len()))
    });
    c.bench_function("band reject 1 s", |bench| {
        bench.iter(|| black_box(band_reject(&wave, 1000.0, 250.0).unwrap()))
    });
    c.bench_function("pitch shift +300c 1 s", |bench| bench.iter(|| black_box(pitch_shift(&wave, 300.0))));
    c.bench_function("log-mel 1 s", |bench| {
        bench.iter(|| black_box(log_mel(&wave, &MelConfig::default(), 128)))
    });
}

fn model(c: &mut Criterion) {
    let teacher = TeacherModel::new(&TeacherConfig::default(), 3).unwrap();
    let mut rng = substream(3, "bench", 0);
    c.bench_function("teacher hidden states 2 s", |bench| {
        bench.iter_batched(
            || noise_wave(2.0, &mut rng),
            |w| black_box(teacher.hidden(&w).unwrap().len()),
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = autodiff, dsp, model
}
criterion_main!(benches);
