//! Deterministic synthetic paired-data generation.
//!
//! Four latent fields (smoothed Gaussian noise, standardized) drive both
//! sides of a pair: the Mueller channels are fixed tanh-squashed linear and
//! quadratic mixtures of the latents, the stain target is the tanh of three
//! fixed linear mixtures. The target is therefore a deterministic, learnable
//! function of the observable channels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::MM_CHANNELS;
use crate::tensor::TensorData;

pub const MIN_PATCH: usize = 32;

/// Binomial row C(8,k)/256; two separable passes make the 9×9 smoothing.
const BINOMIAL9: [f64; 9] = [
    1.0 / 256.0,
    8.0 / 256.0,
    28.0 / 256.0,
    56.0 / 256.0,
    70.0 / 256.0,
    56.0 / 256.0,
    28.0 / 256.0,
    8.0 / 256.0,
    1.0 / 256.0,
];

/// Coefficients of the tanh-linear Mueller channels 1..=7 (full rank in the
/// four latents, so the latents are recoverable away from saturation).
const LINEAR_MIX: [[f64; 4]; 7] = [
    [1.1, -0.3, 0.2, 0.1],
    [-0.4, 1.0, 0.3, -0.2],
    [0.2, -0.5, 1.2, 0.3],
    [0.1, 0.2, -0.4, 1.1],
    [0.7, 0.7, -0.2, -0.5],
    [-0.6, 0.3, 0.8, 0.4],
    [0.3, -0.8, -0.3, 0.7],
];

/// Quadratic channels 8..=15: tanh(a·z_p·z_q + b·z_r² + c·z_s).
const QUAD_MIX: [(usize, usize, usize, usize, f64, f64, f64); 8] = [
    (0, 1, 2, 3, 0.8, 0.4, 0.3),
    (1, 2, 3, 0, 0.7, -0.5, 0.4),
    (2, 3, 0, 1, -0.6, 0.5, 0.3),
    (0, 2, 1, 3, 0.9, 0.3, -0.4),
    (1, 3, 0, 2, -0.7, 0.4, 0.5),
    (0, 3, 2, 1, 0.6, -0.4, 0.6),
    (1, 0, 3, 2, 0.5, 0.6, -0.3),
    (2, 1, 0, 3, -0.8, 0.3, 0.2),
];

/// Stain mixtures: target RGB = tanh(L·z).
const RGB_MIX: [[f64; 4]; 3] = [
    [1.0, 0.5, -0.3, 0.2],
    [-0.6, 1.0, 0.4, -0.2],
    [0.3, -0.5, 1.0, 0.6],
];

fn smooth_binomial9(field: &mut [f64], h: usize, w: usize, tmp: &mut [f64]) {
    // horizontal
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &c) in BINOMIAL9.iter().enumerate() {
                let ix = x as isize + k as isize - 4;
                if ix >= 0 && ix < w as isize {
                    acc += c * field[y * w + ix as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    // vertical
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &c) in BINOMIAL9.iter().enumerate() {
                let iy = y as isize + k as isize - 4;
                if iy >= 0 && iy < h as isize {
                    acc += c * tmp[iy as usize * w + x];
                }
            }
            field[y * w + x] = acc;
        }
    }
}

fn standardize(field: &mut [f64]) {
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_sd = 1.0 / var.sqrt().max(1e-12);
    for v in field.iter_mut() {
        *v = (*v - mean) * inv_sd;
    }
}

/// One deterministic pair: 16×H×W Mueller channels (channel 0 all ones, the
/// m00-normalization convention) and the 3×H×W stain target.
pub fn generate_synthetic_pair(
    seed: u64,
    h: usize,
    w: usize,
) -> Result<(TensorData<f32>, TensorData<f32>)> {
    if h < MIN_PATCH || w < MIN_PATCH {
        return Err(Error::Config(format!(
            "synthetic patches need at least {MIN_PATCH}×{MIN_PATCH} pixels, got {h}×{w}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hw = h * w;
    let mut tmp = vec![0.0f64; hw];
    let mut latents: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            (0..hw)
                .map(|_| {
                    let v: f64 = crate::tensor::Scalar::standard_normal(&mut rng);
                    v
                })
                .collect()
        })
        .collect();
    for z in &mut latents {
        smooth_binomial9(z, h, w, &mut tmp);
        smooth_binomial9(z, h, w, &mut tmp);
        standardize(z);
    }

    let mut mm = vec![0.0f32; MM_CHANNELS * hw];
    mm[..hw].fill(1.0); // channel 0: normalized m00
    for (c, row) in LINEAR_MIX.iter().enumerate() {
        let plane = &mut mm[(c + 1) * hw..(c + 2) * hw];
        for (i, out) in plane.iter_mut().enumerate() {
            let pre: f64 = row
                .iter()
                .enumerate()
                .map(|(j, &a)| a * latents[j][i])
                .sum();
            *out = pre.tanh() as f32;
        }
    }
    for (c, &(p, q, r, s, a, b, g)) in QUAD_MIX.iter().enumerate() {
        let plane = &mut mm[(c + 8) * hw..(c + 9) * hw];
        for (i, out) in plane.iter_mut().enumerate() {
            let pre = a * latents[p][i] * latents[q][i]
                + b * latents[r][i] * latents[r][i]
                + g * latents[s][i];
            *out = pre.tanh() as f32;
        }
    }

    let mut stain = vec![0.0f32; 3 * hw];
    for (c, row) in RGB_MIX.iter().enumerate() {
        let plane = &mut stain[c * hw..(c + 1) * hw];
        for (i, out) in plane.iter_mut().enumerate() {
            let pre: f64 = row
                .iter()
                .enumerate()
                .map(|(j, &a)| a * latents[j][i])
                .sum();
            *out = pre.tanh() as f32;
        }
    }

    Ok((
        TensorData::new(vec![MM_CHANNELS, h, w], mm)?,
        TensorData::new(vec![3, h, w], stain)?,
    ))
}

/// Per-pair seed for indexed generation (splitmix-style mixing).
pub fn pair_seed(base: u64, index: usize) -> u64 {
    let mut z = base ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic() {
        let (a_mm, a_st) = generate_synthetic_pair(7, 32, 32).unwrap();
        let (b_mm, b_st) = generate_synthetic_pair(7, 32, 32).unwrap();
        assert_eq!(a_mm, b_mm);
        assert_eq!(a_st, b_st);
        let (c_mm, _) = generate_synthetic_pair(8, 32, 32).unwrap();
        assert_ne!(a_mm, c_mm);
    }

    #[test]
    fn channel_zero_is_all_ones_and_in_range() {
        let (mm, st) = generate_synthetic_pair(3, 32, 48).unwrap();
        assert_eq!(mm.shape(), &[16, 32, 48]);
        assert_eq!(st.shape(), &[3, 32, 48]);
        assert!(mm.data()[..32 * 48].iter().all(|&v| v == 1.0));
        assert!(mm.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        assert!(st.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(generate_synthetic_pair(1, 16, 64).is_err());
        assert!(generate_synthetic_pair(1, 64, 16).is_err());
    }

    #[test]
    fn latent_fields_vary_spatially() {
        let (_, st) = generate_synthetic_pair(9, 64, 64).unwrap();
        let plane = &st.data()[..64 * 64];
        let mean = plane.iter().sum::<f32>() / plane.len() as f32;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / plane.len() as f32;
        assert!(var > 0.05, "target plane nearly constant: var {var}");
    }
}
