// Temporary matmul microbenchmark.

use forgeloc_core::rng::Pcg32;
use forgeloc_core::tensor::{matmul, matmul_nt, matmul_tn_acc};
use std::time::Instant;

fn bench(name: &str, m: usize, k: usize, n: usize, iters: usize, which: u8) {
    let mut rng = Pcg32::seeded(1);
    let a: Vec<f32> = (0..m * k).map(|_| rng.range(-1.0, 1.0) as f32).collect();
    let b: Vec<f32> = (0..k * n).map(|_| rng.range(-1.0, 1.0) as f32).collect();
    let bt: Vec<f32> = (0..n * k).map(|_| rng.range(-1.0, 1.0) as f32).collect();
    let at: Vec<f32> = (0..k * m).map(|_| rng.range(-1.0, 1.0) as f32).collect();
    let mut out = vec![0.0f32; m * n];
    let t = Instant::now();
    for _ in 0..iters {
        match which {
            0 => matmul(&a, &b, m, k, n, &mut out),
            1 => matmul_nt(&a, &bt, m, k, n, &mut out),
            _ => {
                out.fill(0.0);
                matmul_tn_acc(&at, &b, m, k, n, &mut out)
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let flops = 2.0 * (m * k * n) as f64 * iters as f64;
    println!(
        "{name}: {m}x{k}x{n} x{iters}: {:.3}s -> {:.2} GFLOP/s (checksum {})",
        secs,
        flops / secs / 1e9,
        out[0]
    );
}

fn main() {
    // attention-like shapes
    bench("nn 256x128x128", 256, 128, 128, 2000, 0);
    bench("nt 256x128x128", 256, 128, 128, 2000, 1);
    bench("tn 256x128x128", 256, 128, 128, 2000, 2);
    bench("nn 256x256x32 (attn ctx)", 256, 256, 32, 2000, 0);
    bench("nt 256x32x256 (scores)", 256, 32, 256, 2000, 1);
    bench("nn 256x128x256 (mlp)", 256, 128, 256, 1000, 0);
    bench("nn 256x48x128 (embed)", 256, 48, 128, 2000, 0);
}
