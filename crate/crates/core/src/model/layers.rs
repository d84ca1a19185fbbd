//! Conv/linear building blocks with seeded initialization.

use rand::Rng;

use super::params::{Ctx, ParamId, ParamSet};
use crate::error::Result;
use crate::tensor::{conv2d, linear, Scalar, Tensor, TensorData};

/// Uniform init in ±sqrt(1/fan_in), drawn in f64 so the same seed builds the
/// same weights at either precision.
fn uniform_init<E: Scalar, R: Rng + ?Sized>(
    shape: Vec<usize>,
    fan_in: usize,
    rng: &mut R,
) -> TensorData<E> {
    let bound = (1.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    TensorData::new(shape, data).expect("static shape")
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    /// 3×3, stride 1, padding 1 (shape-preserving) convolution.
    pub fn new_3x3<E: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<E>,
        name: &str,
        c_in: usize,
        c_out: usize,
        trainable: bool,
        rng: &mut R,
    ) -> Self {
        let k = 3;
        let weight = params.add(
            format!("{name}.weight"),
            uniform_init(vec![c_out, c_in, k, k], c_in * k * k, rng),
            trainable,
        );
        let bias = params.add(
            format!("{name}.bias"),
            TensorData::zeros(vec![c_out]),
            trainable,
        );
        Conv2dLayer {
            weight,
            bias,
            stride: 1,
            padding: 1,
        }
    }

    pub fn forward<E: Scalar>(&self, ctx: &Ctx<'_, E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        conv2d(x, &ctx.p(self.weight), self.stride, self.padding)?.add_bias2d(&ctx.p(self.bias))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearLayer {
    pub fn new<E: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<E>,
        name: &str,
        d_in: usize,
        d_out: usize,
        trainable: bool,
        rng: &mut R,
    ) -> Self {
        Self::new_scaled(params, name, d_in, d_out, trainable, 1.0, rng)
    }

    /// `init_scale` shrinks the weight init; the per-stage time-embedding
    /// projections use a small scale so their constant per-channel shift
    /// cannot park relu channels dead at initialization.
    pub fn new_scaled<E: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<E>,
        name: &str,
        d_in: usize,
        d_out: usize,
        trainable: bool,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut init = uniform_init::<E, R>(vec![d_out, d_in], d_in, rng);
        if init_scale != 1.0 {
            let s = E::from_f64(init_scale);
            for v in init.data_mut() {
                *v = *v * s;
            }
        }
        let weight = params.add(format!("{name}.weight"), init, trainable);
        let bias = params.add(
            format!("{name}.bias"),
            TensorData::zeros(vec![d_out]),
            trainable,
        );
        LinearLayer { weight, bias }
    }

    pub fn forward<E: Scalar>(&self, ctx: &Ctx<'_, E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        linear(&ctx.p(self.weight), x, &ctx.p(self.bias))
    }
}
