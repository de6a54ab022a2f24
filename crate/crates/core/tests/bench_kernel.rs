//! Rough single-core throughput probe for the matmul kernel (not a test of
//! correctness; run manually with --ignored --nocapture).

use std::time::Instant;

#[test]
#[ignore]
fn gemm_throughput() {
    for (m, k, n) in [
        (185usize, 128usize, 128usize),
        (185, 128, 512),
        (185, 512, 128),
        (185, 185, 128),
        (185, 128, 268),
        (26, 64, 64),
    ] {
        let a = vec![0.5f64; m * k];
        let b = vec![0.25f64; k * n];
        let mut c = vec![0.0f64; m * n];
        let iters = 1000;
        let t0 = Instant::now();
        for _ in 0..iters {
            dqa_core_bench_gemm(&a, &b, &mut c, m, k, n);
        }
        let dt = t0.elapsed().as_secs_f64();
        let gma = (m * k * n * iters) as f64 / dt / 1e9;
        println!("{m}x{k}x{n}: {gma:.2} G-MA/s ({:.3} ms/call)", dt / iters as f64 * 1e3);
    }
}

fn dqa_core_bench_gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}
