//! Polarization encoder: 16-channel Mueller input to a 3-channel map.

use rand::Rng;

use super::layers::Conv2dLayer;
use super::params::{Ctx, ParamSet};
use super::MM_CHANNELS;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Two convolutions (16 → mid → 3) with a tanh squashing the output into
/// (−1, 1) so the encoded map lives in the stain-image domain.
#[derive(Debug, Clone, Copy)]
pub struct PolarizationEncoder {
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
}

impl PolarizationEncoder {
    pub fn new<E: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<E>,
        mid_channels: usize,
        rng: &mut R,
    ) -> Self {
        PolarizationEncoder {
            conv1: Conv2dLayer::new_3x3(params, "encoder.conv1", MM_CHANNELS, mid_channels, true, rng),
            conv2: Conv2dLayer::new_3x3(params, "encoder.conv2", mid_channels, 3, true, rng),
        }
    }

    pub fn forward<E: Scalar>(&self, ctx: &Ctx<'_, E>, y0: &Tensor<E>) -> Result<Tensor<E>> {
        if y0.shape().len() != 3 || y0.shape()[0] != MM_CHANNELS {
            return Err(Error::shape(
                "encode_polarization",
                format!(
                    "expected {MM_CHANNELS}×H×W Mueller input, got {:?}",
                    y0.shape()
                ),
            ));
        }
        let h = self.conv1.forward(ctx, y0)?;
        Ok(self.conv2.forward(ctx, &h)?.tanh())
    }
}
