//! Component timing probe (informational; run with --ignored).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbdm_core::bridge::NoiseSchedule;
use rbdm_core::metrics::ms_ssim;
use rbdm_core::model::{loss_l1, loss_route, loss_ssr, Ctx, ModelConfig, Rbdm};
use rbdm_core::tensor::{backward, Graph, Tensor, TensorData};

#[test]
#[ignore]
fn component_timing() {
    let schedule = NoiseSchedule::new(100).unwrap();
    let model: Rbdm<f32> = Rbdm::new(
        ModelConfig {
            base_channels: 16,
            temb_dim: 64,
        },
        1,
    );
    let (mm, st) = rbdm_core::data::generate_synthetic_pair(0, 64, 64).unwrap();
    let loss_cfg = rbdm_core::config::TrainConfig::desk().loss_config();
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let time = |label: &str, f: &mut dyn FnMut()| {
        let n = 10;
        let start = std::time::Instant::now();
        for _ in 0..n {
            f();
        }
        println!("{label}: {:.1} ms", start.elapsed().as_secs_f64() * 1e3 / n as f64);
    };

    let x0 = Tensor::constant(st.clone());
    let y0 = Tensor::constant(mm.clone());

    time("denoiser fwd (eval)", &mut || {
        let ctx = Ctx::eval(&model.params);
        let xt = Tensor::constant(st.clone());
        let yb = Tensor::constant(st.clone());
        model.denoiser.forward(&ctx, &xt, 50, &yb).unwrap();
    });

    time("l1 fwd (train graph)", &mut || {
        let graph = Graph::new();
        let ctx = Ctx::train(&model.params, &graph);
        let t = rng.gen_range(1..=100);
        let eps = TensorData::randn(vec![3, 64, 64], &mut rng);
        loss_l1(&model, &ctx, &x0, &y0, t, eps, &schedule).unwrap();
    });

    time("l1+backward", &mut || {
        let graph = Graph::new();
        let ctx = Ctx::train(&model.params, &graph);
        let t = rng.gen_range(1..=100);
        let eps = TensorData::randn(vec![3, 64, 64], &mut rng);
        let (l1, _) = loss_l1(&model, &ctx, &x0, &y0, t, eps, &schedule).unwrap();
        backward(&l1).unwrap();
    });

    time("l1+l2+backward", &mut || {
        let graph = Graph::new();
        let ctx = Ctx::train(&model.params, &graph);
        let t = rng.gen_range(1..=100);
        let eps = TensorData::randn(vec![3, 64, 64], &mut rng);
        let (l1, cache) = loss_l1(&model, &ctx, &x0, &y0, t, eps, &schedule).unwrap();
        let l2 = loss_ssr(&model, &ctx, &cache, &x0).unwrap();
        backward(&l1.add(&l2).unwrap()).unwrap();
    });

    time("l1+l3+backward", &mut || {
        let graph = Graph::new();
        let ctx = Ctx::train(&model.params, &graph);
        let t = rng.gen_range(1..=100);
        let eps = TensorData::randn(vec![3, 64, 64], &mut rng);
        let (l1, cache) = loss_l1(&model, &ctx, &x0, &y0, t, eps, &schedule).unwrap();
        let l3 = loss_route(&cache, &x0, &schedule, &loss_cfg).unwrap();
        backward(&l1.add(&l3).unwrap()).unwrap();
    });

    time("ms_ssim fwd alone (3 scales)", &mut || {
        let a = Tensor::constant(st.clone());
        let b = Tensor::constant(st.clone());
        ms_ssim(&a, &b, &loss_cfg.ssim, 3).unwrap();
    });
}
