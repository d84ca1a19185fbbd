//! Frozen random-feature extractor.
//!
//! Three conv→relu→pool stages initialized from a fixed literal seed and
//! never trained, so feature statistics are comparable across runs and
//! models. Stands in for a pretrained perceptual backbone, which a
//! self-contained artifact cannot ship.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Conv2dLayer;
use super::params::{Ctx, ParamSet};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor, TensorData};

/// Seed of the frozen extractor; independent of the training seed.
pub const FEATURE_SEED: u64 = 0x52424d5f46454154;

/// Stage widths; the pooled descriptor is their sum (8+16+32 = 56 dims).
pub const FEATURE_CHANNELS: [usize; 3] = [8, 16, 32];

#[derive(Debug, Clone, Copy)]
pub struct FeatureExtractor {
    stage1: Conv2dLayer,
    stage2: Conv2dLayer,
    stage3: Conv2dLayer,
}

impl FeatureExtractor {
    pub fn new<E: Scalar>(params: &mut ParamSet<E>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(FEATURE_SEED);
        let [c1, c2, c3] = FEATURE_CHANNELS;
        FeatureExtractor {
            stage1: Conv2dLayer::new_3x3(params, "features.stage1", 3, c1, false, &mut rng),
            stage2: Conv2dLayer::new_3x3(params, "features.stage2", c1, c2, false, &mut rng),
            stage3: Conv2dLayer::new_3x3(params, "features.stage3", c2, c3, false, &mut rng),
        }
    }

    /// The three stage outputs. Gradients flow into `x` but never into the
    /// stage parameters (they are non-trainable constants on the tape).
    pub fn forward_stages<E: Scalar>(
        &self,
        ctx: &Ctx<'_, E>,
        x: &Tensor<E>,
    ) -> Result<[Tensor<E>; 3]> {
        let s1 = self.stage1.forward(ctx, x)?.relu().avg_pool2()?;
        let s2 = self.stage2.forward(ctx, &s1)?.relu().avg_pool2()?;
        let s3 = self.stage3.forward(ctx, &s2)?.relu().avg_pool2()?;
        Ok([s1, s2, s3])
    }

    /// Global mean per channel of every stage, concatenated: the pooled
    /// descriptor used by the Fréchet feature distance.
    pub fn pooled<E: Scalar>(&self, ctx: &Ctx<'_, E>, x: &TensorData<E>) -> Result<Vec<f64>> {
        let stages = self.forward_stages(ctx, &Tensor::constant(x.clone()))?;
        let mut out = Vec::with_capacity(FEATURE_CHANNELS.iter().sum());
        for stage in stages {
            let (c, hw) = (stage.shape()[0], stage.shape()[1] * stage.shape()[2]);
            for ci in 0..c {
                let mean: f64 = stage.data()[ci * hw..(ci + 1) * hw]
                    .iter()
                    .map(|v| v.as_f64())
                    .sum::<f64>()
                    / hw as f64;
                out.push(mean);
            }
        }
        Ok(out)
    }
}
