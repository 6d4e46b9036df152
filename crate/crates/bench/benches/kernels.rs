use clefov_core::data::{render_dataset, SynthSpec};
use clefov_core::eval::rank_auc;
use clefov_core::fov::{circular_extrapolate, compute_fov_mask};
use clefov_core::nn::{LayerSpec, Sequential};
use clefov_core::wholeimage::{masked_gap, StemContract, WholeImageModel};
use clefov_core::Tensor;
use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conv_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = Sequential::<f32>::build(&[16, 64, 64], &[LayerSpec::conv(16, 32, 3, 1, 1)], &mut rng).unwrap();
    let x = Tensor::from_fn(&[16, 64, 64], |_| rng.gen_range(-1.0f32..1.0));
    c.bench_function("conv3x3 16->32 at 64x64", |b| b.iter(|| net.infer(black_box(&x)).unwrap()));

    let model = WholeImageModel::<f32>::build(StemContract::default(), &mut rng).unwrap();
    let image = Tensor::from_fn(&[1, 272, 272], |_| rng.gen_range(-1.0f32..1.0));
    c.bench_function("whole-image evaluate 272", |b| {
        b.iter(|| model.evaluate(black_box(&image), 128.0).unwrap())
    });
}

fn pooling(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = Tensor::from_fn(&[64, 17, 17], |_| rng.gen_range(-1.0f32..1.0));
    let mask = compute_fov_mask(17, 17, 8.0).unwrap();
    c.bench_function("masked_gap 64x17x17", |b| b.iter(|| masked_gap(black_box(&u), &mask).unwrap()));
}

fn extrapolation(c: &mut Criterion) {
    let mut spec = SynthSpec::default();
    spec.domains.truncate(1);
    spec.domains[0].patients = 3;
    spec.domains[0].frames_per_patient = 1;
    let frame = render_dataset(&spec).unwrap().remove(0);
    c.bench_function("circular_extrapolate 272 r128", |b| {
        b.iter(|| circular_extrapolate(black_box(&frame), 128.0, None).unwrap())
    });
}

fn auc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scores: Vec<f64> = (0..5000).map(|_| rng.gen()).collect();
    let positives: Vec<bool> = (0..5000).map(|i| i % 3 == 0).collect();
    c.bench_function("rank_auc 5000", |b| b.iter(|| rank_auc(black_box(&scores), &positives).unwrap()));
}

criterion_group!(benches, conv_forward, pooling, extrapolation, auc);
criterion_main!(benches);
