use criterion::{black_box, criterion_group, criterion_main, Criterion};
use kmat_bench::training_fixture;
use kmat_core::objectives::total_loss;
use kmat_core::prompt_space::{encode_prompts, encode_prompts_backward};
use kmat_core::trainer::train;

fn bench_encoder(c: &mut Criterion) {
    let f = training_fixture(3, 32);
    c.bench_function("encode_prompts/3x32", |b| {
        b.iter(|| encode_prompts(black_box(&f.bank), &f.encoder).unwrap())
    });
    let grads = f.embeddings.clone();
    c.bench_function("encode_prompts_backward/3x32", |b| {
        b.iter(|| encode_prompts_backward(black_box(&f.bank), &f.encoder, &grads).unwrap())
    });
}

fn bench_step(c: &mut Criterion) {
    let f = training_fixture(3, 32);
    let x = f.train.matrix();
    let batch = x.slice(ndarray::s![0..4, ..]);
    let labels: Vec<usize> = f.train.labels()[0..4].to_vec();
    c.bench_function("training_step/3x32", |b| {
        b.iter(|| {
            let w = encode_prompts(&f.bank, &f.encoder).unwrap();
            let eval = total_loss(
                batch,
                &labels,
                &w,
                &f.anchors,
                &f.config.loss,
                &f.config.solver,
            )
            .unwrap();
            encode_prompts_backward(&f.bank, &f.encoder, &eval.grads).unwrap()
        })
    });
}

fn bench_train(c: &mut Criterion) {
    let f = training_fixture(3, 32);
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("50_epochs/3x32", |b| {
        b.iter(|| train(black_box(&f.train), &f.anchors, &f.config, 1).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_encoder, bench_step, bench_train);
criterion_main!(benches);
