//! Conditional U-shaped denoiser with sinusoidal time embedding.
//!
//! Input is the channel concatenation of the bridge state `x_t` and the
//! encoded conditioning map `ȳ₀` (3 + 3 channels). Three resolution levels
//! with channel widths c/2c/4c; the time embedding passes through a two-layer
//! perceptron and is injected as a per-channel bias at every stage.

use rand::Rng;

use super::layers::{Conv2dLayer, LinearLayer};
use super::params::{Ctx, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, TensorData};

/// Sinusoidal position features for an integer step.
pub fn time_embedding<E: Scalar>(t: usize, dim: usize) -> TensorData<E> {
    assert!(dim >= 2 && dim % 2 == 0, "embedding dim must be even");
    let half = dim / 2;
    let tf = t as f64;
    let mut data = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / (half as f64 - 1.0).max(1.0)).exp();
        data.push(E::from_f64((tf * freq).sin()));
    }
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / (half as f64 - 1.0).max(1.0)).exp();
        data.push(E::from_f64((tf * freq).cos()));
    }
    TensorData::new(vec![dim], data).expect("static shape")
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    temb_dim: usize,
    temb_fc1: LinearLayer,
    temb_fc2: LinearLayer,
    stage_proj: [LinearLayer; 5],
    stem: Conv2dLayer,
    enc0b: Conv2dLayer,
    enc1a: Conv2dLayer,
    enc1b: Conv2dLayer,
    mid_a: Conv2dLayer,
    mid_b: Conv2dLayer,
    dec1a: Conv2dLayer,
    dec1b: Conv2dLayer,
    dec0a: Conv2dLayer,
    dec0b: Conv2dLayer,
    head: Conv2dLayer,
}

impl Denoiser {
    pub fn new<E: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<E>,
        base_channels: usize,
        temb_dim: usize,
        rng: &mut R,
    ) -> Self {
        let c = base_channels;
        let conv = |p: &mut ParamSet<E>, name: &str, ci: usize, co: usize, rng: &mut R| {
            Conv2dLayer::new_3x3(p, &format!("denoiser.{name}"), ci, co, true, rng)
        };
        let stage_channels = [c, 2 * c, 4 * c, 2 * c, c];
        let stage_proj = std::array::from_fn(|i| {
            LinearLayer::new_scaled(
                params,
                &format!("denoiser.temb_proj{i}"),
                temb_dim,
                stage_channels[i],
                true,
                0.1,
                rng,
            )
        });
        Denoiser {
            temb_dim,
            temb_fc1: LinearLayer::new(params, "denoiser.temb_fc1", temb_dim, temb_dim, true, rng),
            temb_fc2: LinearLayer::new(params, "denoiser.temb_fc2", temb_dim, temb_dim, true, rng),
            stage_proj,
            stem: conv(params, "stem", 6, c, rng),
            enc0b: conv(params, "enc0b", c, c, rng),
            enc1a: conv(params, "enc1a", c, 2 * c, rng),
            enc1b: conv(params, "enc1b", 2 * c, 2 * c, rng),
            mid_a: conv(params, "mid_a", 2 * c, 4 * c, rng),
            mid_b: conv(params, "mid_b", 4 * c, 4 * c, rng),
            dec1a: conv(params, "dec1a", 6 * c, 2 * c, rng),
            dec1b: conv(params, "dec1b", 2 * c, 2 * c, rng),
            dec0a: conv(params, "dec0a", 3 * c, c, rng),
            dec0b: conv(params, "dec0b", c, c, rng),
            head: conv(params, "head", c, 3, rng),
        }
    }

    /// Hidden activation: leaky relu (slope 0.1) composed from the relu
    /// primitive. Plain relu lets bottleneck channels die at random init
    /// (their inputs are all-positive pooled activations), which starves
    /// whole parameter blocks of gradient.
    fn act<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
        let slope = E::from_f64(0.1);
        x.relu().sub(&x.scale(-E::one()).relu().scale(slope))
    }

    pub fn forward<E: Scalar>(
        &self,
        ctx: &Ctx<'_, E>,
        x_t: &Tensor<E>,
        t: usize,
        ybar0: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        if x_t.shape().len() != 3 || x_t.shape()[0] != 3 {
            return Err(Error::shape(
                "denoiser",
                format!("x_t must be 3×H×W, got {:?}", x_t.shape()),
            ));
        }
        if x_t.shape() != ybar0.shape() {
            return Err(Error::shape(
                "denoiser",
                format!("x_t {:?} vs ybar0 {:?}", x_t.shape(), ybar0.shape()),
            ));
        }
        let (h, w) = (x_t.shape()[1], x_t.shape()[2]);
        if h % 4 != 0 || w % 4 != 0 || h < 8 || w < 8 {
            return Err(Error::shape(
                "denoiser",
                format!("spatial dims must be multiples of 4 and at least 8, got {h}×{w}"),
            ));
        }

        let temb = Tensor::constant(time_embedding::<E>(t, self.temb_dim));
        let temb = self.temb_fc1.forward(ctx, &temb)?.tanh();
        let temb = self.temb_fc2.forward(ctx, &temb)?;
        let inject = |ctx: &Ctx<'_, E>, stage: usize, x: &Tensor<E>| -> Result<Tensor<E>> {
            x.add_bias2d(&self.stage_proj[stage].forward(ctx, &temb)?)
        };

        let x = x_t.concat_c(ybar0)?;
        let h0 = Self::act(&inject(ctx, 0, &self.stem.forward(ctx, &x)?)?)?;
        let h0 = Self::act(&self.enc0b.forward(ctx, &h0)?)?;

        let h1 = Self::act(&inject(ctx, 1, &self.enc1a.forward(ctx, &h0.avg_pool2()?)?)?)?;
        let h1 = Self::act(&self.enc1b.forward(ctx, &h1)?)?;

        let h2 = Self::act(&inject(ctx, 2, &self.mid_a.forward(ctx, &h1.avg_pool2()?)?)?)?;
        let h2 = Self::act(&self.mid_b.forward(ctx, &h2)?)?;

        let u1 = h2.upsample2()?.concat_c(&h1)?;
        let u1 = Self::act(&inject(ctx, 3, &self.dec1a.forward(ctx, &u1)?)?)?;
        let u1 = Self::act(&self.dec1b.forward(ctx, &u1)?)?;

        let u0 = u1.upsample2()?.concat_c(&h0)?;
        let u0 = Self::act(&inject(ctx, 4, &self.dec0a.forward(ctx, &u0)?)?)?;
        let u0 = Self::act(&self.dec0b.forward(ctx, &u0)?)?;

        self.head.forward(ctx, &u0)
    }
}
