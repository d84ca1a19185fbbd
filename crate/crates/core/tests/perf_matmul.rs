//! Matmul throughput probe (informational; run with --ignored).

use rbdm_core::tensor::{matmul_nn, matmul_nt};

#[test]
#[ignore]
fn matmul_throughput() {
    for (m, k, n) in [
        (16usize, 54usize, 4096usize), // stem conv at 64x64
        (32, 144, 1024),               // enc1 conv at 32x32
        (64, 288, 256),                // mid conv at 16x16
        (16, 432, 4096),               // dec0a at 64x64
        (128, 128, 2048),              // square-ish reference
    ] {
        let a = vec![1.0f32; m * k];
        let b = vec![1.0f32; k * n];
        let mut c = vec![0.0f32; m * n];
        let reps = (2e9 / (2.0 * (m * k * n) as f64)).max(3.0) as usize;
        let start = std::time::Instant::now();
        for _ in 0..reps {
            matmul_nn(m, k, n, &a, &b, &mut c);
        }
        let el = start.elapsed().as_secs_f64();
        let gflops = 2.0 * (m * k * n) as f64 * reps as f64 / el / 1e9;
        println!("nn {m}x{k}x{n}: {gflops:.2} GFLOP/s ({reps} reps)");

        // nt with contraction over n: out[m,k] = a[m,n]·b[k,n]ᵀ
        let a2 = vec![1.0f32; m * n];
        let b2 = vec![1.0f32; k * n];
        let mut c2 = vec![0.0f32; m * k];
        let start = std::time::Instant::now();
        for _ in 0..reps {
            matmul_nt(m, n, k, &a2, &b2, &mut c2);
        }
        let el = start.elapsed().as_secs_f64();
        let gflops = 2.0 * (m * k * n) as f64 * reps as f64 / el / 1e9;
        println!("nt {m}x{n}x{k}: {gflops:.2} GFLOP/s");
    }
}
