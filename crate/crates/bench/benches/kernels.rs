use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rfcn::init::normal;
use rfcn::kernels::{conv2d_forward, ConvGeom};
use rfcn::recurrent::{conv_gru_step, gru_step, ConvGruParams, GruParams};
use rfcn::rng::stream;
use rfcn::{Padding, Tensor};

fn conv(c: &mut Criterion) {
    let rng = &mut stream(0, "bench");
    for (name, input, kernel, pad) in [
        ("conv2d 1x28x28 f5 d20", (1, 28, 28), (20, 1, 5, 5), 10),
        ("conv2d 20x17x17 f5 d50", (20, 17, 17), (50, 20, 5, 5), 0),
        ("conv2d 64x30x45 f3 d64", (64, 30, 45), (64, 64, 3, 3), 2),
    ] {
        let g = ConvGeom::new(input, kernel, 1, Padding::total(pad), Padding::total(pad)).unwrap();
        let x = normal::<f64>(&[input.0, input.1, input.2], rng);
        let w = normal::<f64>(&[kernel.0, kernel.1, kernel.2, kernel.3], rng);
        c.bench_function(name, |b| b.iter(|| conv2d_forward(&g, black_box(x.data()), w.data(), None)));
    }
}

fn cells(c: &mut Criterion) {
    let rng = &mut stream(1, "bench");
    let p = GruParams::<f64>::init(784, 784, rng);
    let x = normal::<f64>(&[784], rng);
    let h = Tensor::zeros(&[784]);
    c.bench_function("gru step 784", |b| b.iter(|| gru_step(&p, black_box(&x), &h).unwrap()));

    let p = ConvGruParams::<f64>::init(64, 64, 3, rng);
    let x = normal::<f64>(&[64, 30, 45], rng);
    let h = Tensor::zeros(&[64, 30, 45]);
    c.bench_function("conv-gru step 64x30x45 f3", |b| b.iter(|| conv_gru_step(&p, black_box(&x), &h).unwrap()));
}

criterion_group!(benches, conv, cells);
criterion_main!(benches);
