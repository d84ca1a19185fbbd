//! Desk-scale step-time probe (informational; run with --ignored).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbdm_core::bridge::NoiseSchedule;
use rbdm_core::model::{train_step, Adam, AdamConfig, ModelConfig, Rbdm, TrainItem};

#[test]
#[ignore]
fn desk_step_timing() {
    let schedule = NoiseSchedule::new(100).unwrap();
    let mut model: Rbdm<f32> = Rbdm::new(
        ModelConfig {
            base_channels: 16,
            temb_dim: 64,
        },
        1,
    );
    let mut opt = Adam::<f32>::new(AdamConfig::with_lr(1e-4), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch: Vec<TrainItem<f32>> = (0..2)
        .map(|i| {
            let (mm, st) = rbdm_core::data::generate_synthetic_pair(i, 64, 64).unwrap();
            TrainItem { x0: st, y0: mm }
        })
        .collect();
    let cfg = rbdm_core::config::TrainConfig::desk().loss_config();

    // warmup
    for _ in 0..3 {
        train_step(&mut model, &mut opt, &batch, &schedule, &cfg, &mut rng).unwrap();
    }
    let n = 20;
    let start = std::time::Instant::now();
    for _ in 0..n {
        train_step(&mut model, &mut opt, &batch, &schedule, &cfg, &mut rng).unwrap();
    }
    let per_step = start.elapsed().as_secs_f64() / n as f64;
    println!(
        "desk train_step: {:.1} ms/step -> {:.1} min for 2000 steps",
        per_step * 1e3,
        per_step * 2000.0 / 60.0
    );

    // sampling probe
    let start = std::time::Instant::now();
    let out = model
        .sample(&batch[0].y0, &schedule, 5, &mut rng, false)
        .unwrap();
    println!(
        "desk 5-step sample: {:.1} ms, output {:?}",
        start.elapsed().as_secs_f64() * 1e3,
        out.image.shape()
    );
}
