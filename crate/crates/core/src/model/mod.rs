//! The regulated bridge diffusion model: polarization encoder, conditional
//! denoiser, frozen feature extractor, losses, optimizer and checkpointing.

mod adam;
pub mod checkpoint;
mod denoiser;
mod encoder;
mod features;
mod layers;
mod loss;
mod params;
mod train;

pub use adam::{Adam, AdamConfig};
pub use denoiser::{time_embedding, Denoiser};
pub use encoder::PolarizationEncoder;
pub use features::{FeatureExtractor, FEATURE_CHANNELS, FEATURE_SEED};
pub use loss::{
    loss_l1, loss_route, loss_ssr, total_loss, LossBreakdown, LossCache, LossConfig, LossToggles,
};
pub use params::{Ctx, ParamEntry, ParamId, ParamSet};
pub use train::{train_step, StepStats, TrainItem};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bridge::{sample, NoiseSchedule, SampleOutput};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor, TensorData};

/// Mueller-matrix channel count (a flattened 4×4 matrix per pixel).
pub const MM_CHANNELS: usize = 16;
/// Stain image channel count.
pub const STAIN_CHANNELS: usize = 3;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Channel width of the first denoiser level (doubles per level);
    /// the encoder's hidden width is twice this.
    pub base_channels: usize,
    /// Sinusoidal time-embedding dimension (even).
    pub temb_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 32,
            temb_dim: 64,
        }
    }
}

/// The assembled model; all tensors live in `params`.
pub struct Rbdm<E: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamSet<E>,
    pub encoder: PolarizationEncoder,
    pub denoiser: Denoiser,
    pub features: FeatureExtractor,
}

impl<E: Scalar> Rbdm<E> {
    /// Fresh model; encoder/denoiser weights derive from `seed`, the feature
    /// extractor from its own fixed seed.
    pub fn new(cfg: ModelConfig, seed: u64) -> Self {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = PolarizationEncoder::new(&mut params, cfg.base_channels * 2, &mut rng);
        let denoiser = Denoiser::new(&mut params, cfg.base_channels, cfg.temb_dim, &mut rng);
        let features = FeatureExtractor::new(&mut params);
        Rbdm {
            cfg,
            params,
            encoder,
            denoiser,
            features,
        }
    }

    /// Same architecture and weights at another precision.
    pub fn convert<F: Scalar>(&self) -> Rbdm<F> {
        Rbdm {
            cfg: self.cfg,
            params: self.params.convert(),
            encoder: self.encoder,
            denoiser: self.denoiser.clone(),
            features: self.features,
        }
    }

    /// Encoded conditioning map `ȳ₀ = E_p(y₀)` outside any graph.
    pub fn encode(&self, y0: &TensorData<E>) -> Result<TensorData<E>> {
        let ctx = Ctx::eval(&self.params);
        Ok(self
            .encoder
            .forward(&ctx, &Tensor::constant(y0.clone()))?
            .detach())
    }

    /// Full reverse process from a Mueller patch to a stain patch.
    pub fn sample<R: rand::Rng + ?Sized>(
        &self,
        y0: &TensorData<E>,
        schedule: &NoiseSchedule,
        n_steps: usize,
        rng: &mut R,
        record_trajectory: bool,
    ) -> Result<SampleOutput<E>> {
        let ctx = Ctx::eval(&self.params);
        let ybar = self
            .encoder
            .forward(&ctx, &Tensor::constant(y0.clone()))?
            .detach();
        let pred = |x_t: &Tensor<E>, t: usize, yb: &Tensor<E>| {
            self.denoiser.forward(&ctx, x_t, t, yb)
        };
        sample(&pred, &ybar, schedule, n_steps, rng, record_trajectory)
    }

    /// Pooled frozen-feature descriptor of an image (for the Fréchet feature
    /// distance).
    pub fn pooled_features(&self, image: &TensorData<E>) -> Result<Vec<f64>> {
        let ctx = Ctx::eval(&self.params);
        self.features.pooled(&ctx, image)
    }
}
