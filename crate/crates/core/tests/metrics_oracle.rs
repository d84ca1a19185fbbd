//! Metrics against independently written direct-formula references.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbdm_core::metrics::{ffd_from_features, ms_ssim, ssim, SsimConfig};
use rbdm_core::tensor::{finite_diff_check, Scalar, Tensor, TensorData};

fn correlated_pair(shape: Vec<usize>, seed: u64, noise: f64) -> (TensorData<f64>, TensorData<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = TensorData::<f64>::randn(shape.clone(), &mut rng).map(|v| v.tanh());
    let n = TensorData::<f64>::randn(shape, &mut rng);
    let b_data: Vec<f64> = a
        .data()
        .iter()
        .zip(n.data())
        .map(|(&x, &e)| (x + noise * e).clamp(-1.0, 1.0))
        .collect();
    let b = TensorData::new(a.shape().to_vec(), b_data).unwrap();
    (a, b)
}

#[test]
fn ssim_matches_direct_formula_reference() {
    let cfg = SsimConfig::default();
    for seed in 0..10u64 {
        let (a, b) = correlated_pair(vec![3, 32, 32], seed, 0.2);
        let got = ssim(&Tensor::constant(a.clone()), &Tensor::constant(b.clone()), &cfg)
            .unwrap()
            .item()
            .unwrap();
        let want = rbdm_testkit::naive_ssim(a.data(), b.data(), 3, 32, 32, 2.0, 11, 1.5);
        assert!((got - want).abs() < 1e-4, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn ms_ssim_matches_direct_formula_reference() {
    let cfg = SsimConfig::default();
    for seed in 0..5u64 {
        let (a, b) = correlated_pair(vec![3, 64, 64], seed + 100, 0.3);
        let got = ms_ssim(
            &Tensor::constant(a.clone()),
            &Tensor::constant(b.clone()),
            &cfg,
            3,
        )
        .unwrap()
        .item()
        .unwrap();
        let want = rbdm_testkit::naive_ms_ssim(a.data(), b.data(), 3, 64, 64, 2.0, 3, 11, 1.5);
        assert!((got - want).abs() < 1e-4, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn ms_ssim_decreases_under_increasing_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let base = TensorData::<f64>::randn(vec![3, 64, 64], &mut rng).map(|v| v.tanh());
    let noise = TensorData::<f64>::randn(vec![3, 64, 64], &mut rng);
    let cfg = SsimConfig::default();
    let mut prev = f64::INFINITY;
    for level in 1..=5 {
        let sigma = 0.08 * level as f64;
        let noisy: Vec<f64> = base
            .data()
            .iter()
            .zip(noise.data())
            .map(|(&x, &e)| (x + sigma * e).clamp(-1.0, 1.0))
            .collect();
        let noisy = TensorData::new(vec![3, 64, 64], noisy).unwrap();
        let v = ms_ssim(
            &Tensor::constant(base.clone()),
            &Tensor::constant(noisy),
            &cfg,
            3,
        )
        .unwrap()
        .item()
        .unwrap();
        assert!(v < prev, "level {level}: {v} !< {prev}");
        prev = v;
    }
}

#[test]
fn ms_ssim_gradient_passes_finite_difference() {
    let (a, b) = correlated_pair(vec![3, 16, 16], 42, 0.15);
    let bt = Tensor::constant(b);
    let cfg = SsimConfig::default();
    let err = finite_diff_check(|t| ms_ssim(t, &bt, &cfg, 1), &a, 1e-4).unwrap();
    assert!(err < 1e-3, "single-scale rel err {err}");

    // multi-scale path including pooling and fractional powers
    let (a, b) = correlated_pair(vec![3, 16, 16], 43, 0.15);
    let bt = Tensor::constant(b);
    let small = SsimConfig {
        win: 7,
        ..SsimConfig::default()
    };
    let err = finite_diff_check(|t| ms_ssim(t, &bt, &small, 2), &a, 1e-4).unwrap();
    assert!(err < 1e-3, "multi-scale rel err {err}");
}

#[test]
fn similarity_metrics_peak_only_at_identity() {
    // Best value iff identical, over random pairs.
    let cfg = SsimConfig::default();
    for seed in 0..100u64 {
        let (a, b) = correlated_pair(vec![1, 16, 16], seed + 500, 0.4);
        let at = Tensor::constant(a.clone());
        let bt = Tensor::constant(b.clone());
        let self_sim = ssim(&at, &at, &cfg).unwrap().item().unwrap();
        let cross_sim = ssim(&at, &bt, &cfg).unwrap().item().unwrap();
        assert!((self_sim - 1.0).abs() < 1e-9);
        assert!(cross_sim < self_sim, "seed {seed}");
        assert!((-1.0..=1.0).contains(&cross_sim), "seed {seed}: {cross_sim}");

        let p_self = rbdm_core::metrics::psnr(&a, &a, 2.0).unwrap();
        let p_cross = rbdm_core::metrics::psnr(&a, &b, 2.0).unwrap();
        assert!(p_self.is_infinite() && p_cross.is_finite());
    }
}

#[test]
fn ffd_matches_closed_form_on_rotated_gaussians() {
    // Two diagonal Gaussians with known means/variances, pushed through a
    // shared orthogonal rotation (which leaves the Fréchet distance
    // unchanged) so the estimator sees dense covariance matrices.
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mu_a: Vec<f64> = (0..d).map(|i| 0.1 * i as f64).collect();
    let var_a: Vec<f64> = (0..d).map(|i| 0.5 + 0.1 * i as f64).collect();
    let mu_b: Vec<f64> = (0..d).map(|i| 1.5 + 0.1 * i as f64).collect();
    let var_b: Vec<f64> = (0..d).map(|i| 1.2 - 0.08 * i as f64).collect();
    let want = rbdm_testkit::frechet_diagonal(&mu_a, &var_a, &mu_b, &var_b);

    let q = rbdm_testkit::random_orthogonal(d, &mut rng);
    let mut draw = |mu: &[f64], var: &[f64], n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d)
                    .map(|i| {
                        let e: f64 = Scalar::standard_normal(&mut rng);
                        mu[i] + var[i].sqrt() * e
                    })
                    .collect();
                rbdm_testkit::matvec(&q, &x, d)
            })
            .collect()
    };
    let set_a = draw(&mu_a, &var_a, 500);
    let set_b = draw(&mu_b, &var_b, 500);
    let got = ffd_from_features(&set_a, &set_b).unwrap();
    let rel = (got - want).abs() / want;
    assert!(rel < 0.02, "got {got}, closed form {want}, rel {rel}");
}
