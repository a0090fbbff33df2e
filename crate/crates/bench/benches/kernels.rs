//! Kernel-level benchmarks: convolution forward/backward, warping, and
//! replay-buffer maintenance.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vio_core::geometry::{se3_exp, warp_image, Twist};
use vio_core::losses::TripletBatchItem;
use vio_core::model::FeatureVector;
use vio_core::replay::Buffer;
use vio_core::{Camera, Graph, Tensor};

fn conv_forward_backward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = Tensor::rand_uniform(&[48, 64, 8], -1.0, 1.0, &mut rng);
    let weight = Tensor::rand_uniform(&[3, 3, 8, 16], -0.3, 0.3, &mut rng);
    c.bench_function("conv2d_48x64_8to16_fwd_bwd", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let x = g.leaf(input.clone(), true);
            let w = g.leaf(weight.clone(), true);
            let y = g.conv2d(x, w, 1).unwrap();
            let loss = g.mean(y).unwrap();
            g.backward(loss).unwrap()
        })
    });
}

fn inverse_warp_bench(c: &mut Criterion) {
    let cam = Camera::default_synthetic();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = Tensor::rand_uniform(&[48, 64, 3], 0.0, 1.0, &mut rng);
    let depth = Tensor::rand_uniform(&[48, 64], 4.0, 12.0, &mut rng);
    let pose = se3_exp(&Twist {
        omega: [0.0, 0.01, 0.0],
        v: [0.3, 0.0, 0.0],
    });
    c.bench_function("inverse_warp_64x48", |b| {
        b.iter(|| warp_image(&img, &depth, &pose, &cam).unwrap())
    });
}

fn buffer_maintenance(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = Tensor::full(&[4, 4, 3], 0.5);
    let item =
        TripletBatchItem::new([img.clone(), img.clone(), img], [1.0, 1.0], [0.1, 0.1]).unwrap();
    let features: Vec<FeatureVector> = (0..512)
        .map(|_| {
            FeatureVector::from_raw(
                Tensor::rand_uniform(&[32], -1.0, 1.0, &mut rng).into_data(),
            )
            .unwrap()
        })
        .collect();
    c.bench_function("buffer_insert_eviction_cap100", |b| {
        b.iter(|| {
            let mut buf = Buffer::new(100, 0.95);
            for f in &features {
                buf.maybe_add(item.clone(), f.clone(), "bench");
            }
            buf.len()
        })
    });
}

criterion_group!(benches, conv_forward_backward, inverse_warp_bench, buffer_maintenance);
criterion_main!(benches);
