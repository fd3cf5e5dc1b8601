//! Throughput probe for the production-size autoencoder (k=3, 128/64
//! widths, 40-frame windows): prints training and inference cost per
//! window on this machine. Run with `cargo run --release --example probe`.

use canids::model::{backward, forward, ModelDims, ModelParams};
use canids::rng::sub_rng;
use ndarray::Array2;
use rand::Rng;
use std::time::Instant;

fn main() {
    let dims = ModelDims::new(3);
    let p = ModelParams::<f32>::init(dims, &mut sub_rng(1, "p", 0, 0));
    let mut rng = sub_rng(2, "w", 0, 0);
    let windows: Vec<Array2<f32>> =
        (0..64).map(|_| Array2::from_shape_fn((40, 3), |_| rng.gen_range(0.0..1.0))).collect();
    let mut drng = sub_rng(3, "d", 0, 0);
    // warmup
    let (_, cache) = forward(&p, &windows, true, 0.2, &mut drng).unwrap();
    let _ = backward(&p, &cache).unwrap();
    let t = Instant::now();
    let iters = 10;
    for _ in 0..iters {
        let (_, cache) = forward(&p, &windows, true, 0.2, &mut drng).unwrap();
        let g = backward(&p, &cache).unwrap();
        std::hint::black_box(g.out_dense.b[0]);
    }
    let per_mb = t.elapsed().as_secs_f64() / iters as f64;
    println!("fwd+bwd minibatch B=64 n=40: {:.1} ms ({:.3} ms/window)", per_mb * 1e3, per_mb * 1e3 / 64.0);
    let one = vec![windows[0].clone()];
    let t = Instant::now();
    for _ in 0..100 {
        let (r, _) = forward(&p, &one, false, 0.0, &mut drng).unwrap();
        std::hint::black_box(r[0][[0, 0]]);
    }
    println!("single-window inference: {:.3} ms ({:.4} ms/packet)", t.elapsed().as_secs_f64() * 10.0, t.elapsed().as_secs_f64() * 10.0 / 40.0);
    let t = Instant::now();
    let (_, _) = forward(&p, &windows, false, 0.0, &mut drng).unwrap();
    println!("batch-64 inference: {:.1} ms ({:.4} ms/packet)", t.elapsed().as_secs_f64() * 1e3, t.elapsed().as_secs_f64() * 1e3 / (64.0 * 40.0));
}
