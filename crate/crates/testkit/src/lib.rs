//! Reference implementations used as test oracles.
//!
//! Everything here is written directly from the defining formulas with plain
//! loops over `f64` slices, independent of the production code paths it is
//! used to check. Slow on purpose; clarity over speed.

use rand::Rng;

/// Direct quadruple-loop cross-correlation with zero padding.
///
/// `input` is `c_in×h×w`, `kernel` is `c_out×c_in×k×k`, both row-major.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let out_h = (h + 2 * padding - k) / stride + 1;
    let out_w = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0; c_out * out_h * out_w];
    for co in 0..c_out {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = 0.0;
                for ci in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let iv = input[ci * h * w + iy as usize * w + ix as usize];
                            let kv = kernel[((co * c_in + ci) * k + ky) * k + kx];
                            acc += iv * kv;
                        }
                    }
                }
                out[co * out_h * out_w + oy * out_w + ox] = acc;
            }
        }
    }
    out
}

/// Normalized 2-d Gaussian window, `win×win`, row-major.
pub fn gaussian_window(win: usize, sigma: f64) -> Vec<f64> {
    let half = (win / 2) as isize;
    let mut w = Vec::with_capacity(win * win);
    for y in -half..=half {
        for x in -half..=half {
            w.push((-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Per-window SSIM statistics at one valid window position.
struct WindowMoments {
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov_xy: f64,
}

fn window_moments(
    a: &[f64],
    b: &[f64],
    w: usize,
    window: &[f64],
    win: usize,
    top: usize,
    left: usize,
) -> WindowMoments {
    let mut mu_x = 0.0;
    let mut mu_y = 0.0;
    for wy in 0..win {
        for wx in 0..win {
            let g = window[wy * win + wx];
            mu_x += g * a[(top + wy) * w + left + wx];
            mu_y += g * b[(top + wy) * w + left + wx];
        }
    }
    let (mut var_x, mut var_y, mut cov_xy) = (0.0, 0.0, 0.0);
    for wy in 0..win {
        for wx in 0..win {
            let g = window[wy * win + wx];
            let dx = a[(top + wy) * w + left + wx] - mu_x;
            let dy = b[(top + wy) * w + left + wx] - mu_y;
            var_x += g * dx * dx;
            var_y += g * dy * dy;
            cov_xy += g * dx * dy;
        }
    }
    WindowMoments {
        mu_x,
        mu_y,
        var_x,
        var_y,
        cov_xy,
    }
}

/// Direct-formula SSIM over all valid window positions of a `c×h×w` pair,
/// channel-averaged. Gaussian window, K1 = 0.01, K2 = 0.03.
pub fn naive_ssim(
    a: &[f64],
    b: &[f64],
    c: usize,
    h: usize,
    w: usize,
    data_range: f64,
    win: usize,
    sigma: f64,
) -> f64 {
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let window = gaussian_window(win, sigma);
    let mut total = 0.0;
    for ci in 0..c {
        let pa = &a[ci * h * w..(ci + 1) * h * w];
        let pb = &b[ci * h * w..(ci + 1) * h * w];
        let mut acc = 0.0;
        let mut count = 0usize;
        for top in 0..=(h - win) {
            for left in 0..=(w - win) {
                let m = window_moments(pa, pb, w, &window, win, top, left);
                let num = (2.0 * m.mu_x * m.mu_y + c1) * (2.0 * m.cov_xy + c2);
                let den = (m.mu_x * m.mu_x + m.mu_y * m.mu_y + c1) * (m.var_x + m.var_y + c2);
                acc += num / den;
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / c as f64
}

/// Mean contrast-structure term `(2σ_xy + C2)/(σ_x² + σ_y² + C2)` over valid
/// windows and channels; the luminance-free part of SSIM.
pub fn naive_contrast_structure(
    a: &[f64],
    b: &[f64],
    c: usize,
    h: usize,
    w: usize,
    data_range: f64,
    win: usize,
    sigma: f64,
) -> f64 {
    let c2 = (0.03 * data_range).powi(2);
    let window = gaussian_window(win, sigma);
    let mut total = 0.0;
    for ci in 0..c {
        let pa = &a[ci * h * w..(ci + 1) * h * w];
        let pb = &b[ci * h * w..(ci + 1) * h * w];
        let mut acc = 0.0;
        let mut count = 0usize;
        for top in 0..=(h - win) {
            for left in 0..=(w - win) {
                let m = window_moments(pa, pb, w, &window, win, top, left);
                acc += (2.0 * m.cov_xy + c2) / (m.var_x + m.var_y + c2);
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / c as f64
}

/// 2×2 average-pool downsample with floor semantics, per channel.
pub fn naive_downsample2(a: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += a[ci * h * w + (2 * oy + dy) * w + 2 * ox + dx];
                    }
                }
                out[ci * oh * ow + oy * ow + ox] = acc / 4.0;
            }
        }
    }
    (out, oh, ow)
}

/// The standard five-scale exponents.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Base floor applied to each per-scale term before exponentiation, part of
/// the metric contract (keeps fractional powers of near-zero terms defined).
pub const MS_SSIM_TERM_FLOOR: f64 = 1e-4;

/// Direct-formula multi-scale SSIM: contrast-structure terms at every scale,
/// full SSIM (with luminance) at the coarsest, exponents renormalized to the
/// requested number of scales.
#[allow(clippy::too_many_arguments)]
pub fn naive_ms_ssim(
    a: &[f64],
    b: &[f64],
    c: usize,
    h: usize,
    w: usize,
    data_range: f64,
    n_scales: usize,
    win: usize,
    sigma: f64,
) -> f64 {
    assert!(n_scales >= 1 && n_scales <= 5);
    let weight_sum: f64 = MS_SSIM_WEIGHTS[..n_scales].iter().sum();
    let (mut ca, mut cb) = (a.to_vec(), b.to_vec());
    let (mut ch, mut cw) = (h, w);
    let mut value = 1.0;
    for scale in 0..n_scales {
        let weight = MS_SSIM_WEIGHTS[scale] / weight_sum;
        let term = if scale + 1 == n_scales {
            naive_ssim(&ca, &cb, c, ch, cw, data_range, win, sigma)
        } else {
            naive_contrast_structure(&ca, &cb, c, ch, cw, data_range, win, sigma)
        };
        value *= term.max(MS_SSIM_TERM_FLOOR).powf(weight);
        if scale + 1 < n_scales {
            let (da, nh, nw) = naive_downsample2(&ca, c, ch, cw);
            let (db, _, _) = naive_downsample2(&cb, c, ch, cw);
            ca = da;
            cb = db;
            ch = nh;
            cw = nw;
        }
    }
    value
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Squared Fréchet distance between two axis-aligned (diagonal-covariance)
/// Gaussians: `Σ(μa−μb)² + Σ(√va − √vb)²`.
pub fn frechet_diagonal(mu_a: &[f64], var_a: &[f64], mu_b: &[f64], var_b: &[f64]) -> f64 {
    let mean_term: f64 = mu_a
        .iter()
        .zip(mu_b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    let cov_term: f64 = var_a
        .iter()
        .zip(var_b.iter())
        .map(|(&x, &y)| (x.sqrt() - y.sqrt()) * (x.sqrt() - y.sqrt()))
        .sum();
    mean_term + cov_term
}

/// A deterministic d×d orthogonal matrix (row-major) via Gram–Schmidt on a
/// random matrix. Used to rotate Gaussian samples without changing their
/// Fréchet distance.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u.iter()).map(|(&a, &b)| a * b).sum();
            for (vi, &ui) in v.iter_mut().zip(u.iter()) {
                *vi -= dot * ui;
            }
        }
        let norm: f64 = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for vi in &mut v {
                *vi /= norm;
            }
            q.push(v);
        }
    }
    q.into_iter().flatten().collect()
}

/// `y = M·x` for a row-major d×d matrix.
pub fn matvec(m: &[f64], x: &[f64], d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| m[i * d..(i + 1) * d].iter().zip(x).map(|(&a, &b)| a * b).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_window_sums_to_one() {
        let w = gaussian_window(11, 1.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // symmetric, peaked at center
        assert!(w[5 * 11 + 5] > w[0]);
        assert!((w[0] - w[10 * 11 + 10]).abs() < 1e-15);
    }

    #[test]
    fn ssim_of_identical_is_one() {
        let a: Vec<f64> = (0..3 * 16 * 16).map(|i| ((i * 37) % 100) as f64 / 50.0 - 1.0).collect();
        let s = naive_ssim(&a, &a, 3, 16, 16, 2.0, 11, 1.5);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_matrix_is_orthogonal() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let d = 6;
        let q = random_orthogonal(d, &mut rng);
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = (0..d).map(|k| q[i * d + k] * q[j * d + k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10, "({i},{j}) dot={dot}");
            }
        }
    }
}
