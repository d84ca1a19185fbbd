//! The three training objectives.
//!
//! `L₁` is the bridge noise-matching loss; `L₂` (starting-state regulation)
//! pulls the recovered `x̄₀` toward `x₀` in frozen feature space; `L₃` (route
//! regulation) is a hinge shaping the noiseless path `x̄_t` to stay ȳ₀-like
//! early and x₀-like late. The total is `L₁ + w₂·L₂ + w₃·L₃`.
//!
//! Norms are mean-squared errors, keeping magnitudes independent of image
//! size.

use super::params::Ctx;
use super::Rbdm;
use crate::bridge::{estimate_x0, forward_sample_with_eps, NoiseSchedule};
use crate::error::{Error, Result};
use crate::metrics::{ms_ssim, SsimConfig};
use crate::tensor::{Scalar, Tensor, TensorData};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossToggles {
    pub ssr: bool,
    pub rr: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles { ssr: true, rr: true }
    }
}

/// Loss-shape configuration: toggles, weights, and the similarity window the
/// route regulation differentiates through.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub toggles: LossToggles,
    pub w2: f64,
    pub w3: f64,
    pub ssim: SsimConfig,
    pub ms_ssim_scales: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            toggles: LossToggles::default(),
            w2: 1.0,
            w3: 1.0,
            ssim: SsimConfig::default(),
            ms_ssim_scales: 3,
        }
    }
}

/// Scalar component values of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    pub t: usize,
}

/// Graph tensors cached by `loss_l1` for reuse by the regulation terms.
pub struct LossCache<E: Scalar> {
    pub x_t: Tensor<E>,
    pub target: Tensor<E>,
    pub eps_pred: Tensor<E>,
    pub ybar: Tensor<E>,
    pub epsilon: TensorData<E>,
    pub t: usize,
}

fn mse<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    a.sub(b)?.square()?.mean()
}

/// Bridge noise-matching loss at step `t` with an explicit noise draw.
pub fn loss_l1<E: Scalar>(
    model: &Rbdm<E>,
    ctx: &Ctx<'_, E>,
    x0: &Tensor<E>,
    y0: &Tensor<E>,
    t: usize,
    epsilon: TensorData<E>,
    schedule: &NoiseSchedule,
) -> Result<(Tensor<E>, LossCache<E>)> {
    let ybar = model.encoder.forward(ctx, y0)?;
    let fs = forward_sample_with_eps(x0, &ybar, t, epsilon, schedule)?;
    let eps_pred = model.denoiser.forward(ctx, &fs.x_t, t, &ybar)?;
    let l1 = mse(&eps_pred, &fs.target)?;
    Ok((
        l1,
        LossCache {
            x_t: fs.x_t,
            target: fs.target,
            eps_pred,
            ybar,
            epsilon: fs.epsilon,
            t,
        },
    ))
}

/// Starting-state regulation: mean-squared frozen-feature difference between
/// `x₀` and `x̄₀ = x_t − ε̂`, averaged over the three stages.
pub fn loss_ssr<E: Scalar>(
    model: &Rbdm<E>,
    ctx: &Ctx<'_, E>,
    cache: &LossCache<E>,
    x0: &Tensor<E>,
) -> Result<Tensor<E>> {
    let x0_hat = estimate_x0(&cache.x_t, &cache.eps_pred)?;
    let f_real = model.features.forward_stages(ctx, x0)?;
    let f_est = model.features.forward_stages(ctx, &x0_hat)?;
    let third = E::from_f64(1.0 / 3.0);
    let mut acc: Option<Tensor<E>> = None;
    for (r, e) in f_real.iter().zip(f_est.iter()) {
        let stage = mse(r, e)?;
        acc = Some(match acc {
            None => stage,
            Some(a) => a.add(&stage)?,
        });
    }
    Ok(acc.expect("three stages").scale(third))
}

/// Route regulation: hinge on the similarity ordering of the noiseless
/// intermediate `x̄_t = (1−t/T)·x̄₀ + (t/T)·ȳ₀`.
pub fn loss_route<E: Scalar>(
    cache: &LossCache<E>,
    x0: &Tensor<E>,
    schedule: &NoiseSchedule,
    cfg: &LossConfig,
) -> Result<Tensor<E>> {
    let t = cache.t;
    let t_max = schedule.t_max();
    let m = E::from_f64(schedule.m(t));
    let x0_hat = estimate_x0(&cache.x_t, &cache.eps_pred)?;
    let xbar_t = x0_hat.scale(E::one() - m).add(&cache.ybar.scale(m))?;

    let sim_to_ybar = ms_ssim(&xbar_t, &cache.ybar, &cfg.ssim, cfg.ms_ssim_scales)?;
    let sim_to_x0 = ms_ssim(&xbar_t, x0, &cfg.ssim, cfg.ms_ssim_scales)?;
    let coeff = E::from_f64((t_max as f64 - 2.0 * t as f64) / t_max as f64);
    Ok(sim_to_ybar.sub(&sim_to_x0)?.scale(coeff).relu())
}

/// Full objective at one `(x₀, y₀, t, ε)`: the breakdown reports disabled
/// terms as zero and `total = l1 + w2·l2 + w3·l3` always holds.
pub fn total_loss<E: Scalar>(
    model: &Rbdm<E>,
    ctx: &Ctx<'_, E>,
    x0: &Tensor<E>,
    y0: &Tensor<E>,
    t: usize,
    epsilon: TensorData<E>,
    schedule: &NoiseSchedule,
    cfg: &LossConfig,
) -> Result<(Tensor<E>, LossBreakdown, LossCache<E>)> {
    let (l1, cache) = loss_l1(model, ctx, x0, y0, t, epsilon, schedule)?;
    let mut total = l1.clone();
    let mut l2_value = 0.0;
    let mut l3_value = 0.0;
    if cfg.toggles.ssr {
        let l2 = loss_ssr(model, ctx, &cache, x0)?;
        l2_value = l2.item()?.as_f64();
        total = total.add(&l2.scale(E::from_f64(cfg.w2)))?;
    }
    if cfg.toggles.rr {
        let l3 = loss_route(&cache, x0, schedule, cfg)?;
        l3_value = l3.item()?.as_f64();
        total = total.add(&l3.scale(E::from_f64(cfg.w3)))?;
    }
    let breakdown = LossBreakdown {
        l1: l1.item()?.as_f64(),
        l2: l2_value,
        l3: l3_value,
        total: total.item()?.as_f64(),
        t,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss is not finite at step t={t}: l1={} l2={} l3={}",
            breakdown.l1, breakdown.l2, breakdown.l3
        )));
    }
    Ok((total, breakdown, cache))
}
