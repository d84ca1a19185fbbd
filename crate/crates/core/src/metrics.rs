//! Evaluation and in-loss similarity measures.
//!
//! PSNR/SSIM/MS-SSIM use the standard published constants (11×11 Gaussian
//! window, σ = 1.5, K1 = 0.01, K2 = 0.03, five-scale exponents). `data_range`
//! is 2 throughout for images normalized to [−1, 1]. SSIM and MS-SSIM are
//! built on the substrate so the route-regulation loss can differentiate
//! through them.
//!
//! The Fréchet feature distance is the two-Gaussian 2-Wasserstein statistic
//! computed over frozen random-feature pools; it is deliberately not called
//! FID because no pretrained Inception network is involved.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, Scalar, Tensor, TensorData};

/// Window parameters shared by SSIM and MS-SSIM.
#[derive(Debug, Clone, Copy)]
pub struct SsimConfig {
    pub data_range: f64,
    pub win: usize,
    pub sigma: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            data_range: 2.0,
            win: 11,
            sigma: 1.5,
        }
    }
}

/// The standard five-scale MS-SSIM exponents.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Floor applied to per-scale terms before fractional exponentiation; keeps
/// the value and its gradient defined when a term dips to zero or below.
pub const MS_SSIM_TERM_FLOOR: f64 = 1e-4;

/// Peak signal-to-noise ratio in dB. Identical inputs yield `f64::INFINITY`;
/// aggregation caps the sentinel at 100 dB.
pub fn psnr(a: &TensorData<f64>, b: &TensorData<f64>, data_range: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "psnr",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

/// Cap used when folding the identical-image PSNR sentinel into statistics.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Block-diagonal Gaussian filter: applies the window to each channel
/// independently through the ordinary conv2d primitive.
fn gaussian_kernel<E: Scalar>(channels: usize, win: usize, sigma: f64) -> TensorData<E> {
    let half = (win / 2) as isize;
    let mut plane = Vec::with_capacity(win * win);
    for y in -half..=half {
        for x in -half..=half {
            plane.push((-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = plane.iter().sum();
    let mut data = vec![E::zero(); channels * channels * win * win];
    for c in 0..channels {
        for (i, &v) in plane.iter().enumerate() {
            data[(c * channels + c) * win * win + i] = E::from_f64(v / total);
        }
    }
    TensorData::new(vec![channels, channels, win, win], data).expect("static shape")
}

struct SsimTerms<E: Scalar> {
    /// Mean luminance·contrast-structure map value (the SSIM index).
    full: Tensor<E>,
    /// Mean contrast-structure term only.
    cs: Tensor<E>,
}

fn ssim_terms<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, cfg: &SsimConfig) -> Result<SsimTerms<E>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "ssim",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    if a.shape().len() != 3 {
        return Err(Error::shape(
            "ssim",
            format!("expected C×H×W, got {:?}", a.shape()),
        ));
    }
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    if h < cfg.win || w < cfg.win {
        return Err(Error::shape(
            "ssim",
            format!(
                "image {h}×{w} smaller than the {0}×{0} window; reduce the window or image scale",
                cfg.win
            ),
        ));
    }
    let c1 = E::from_f64((0.01 * cfg.data_range).powi(2));
    let c2 = E::from_f64((0.03 * cfg.data_range).powi(2));
    let g = Tensor::constant(gaussian_kernel::<E>(c, cfg.win, cfg.sigma));
    let two = E::from_f64(2.0);

    let mu_x = conv2d(a, &g, 1, 0)?;
    let mu_y = conv2d(b, &g, 1, 0)?;
    let xx = conv2d(&a.square()?, &g, 1, 0)?;
    let yy = conv2d(&b.square()?, &g, 1, 0)?;
    let xy = conv2d(&a.mul(b)?, &g, 1, 0)?;

    let mu_xx = mu_x.square()?;
    let mu_yy = mu_y.square()?;
    let mu_xy = mu_x.mul(&mu_y)?;
    let var_x = xx.sub(&mu_xx)?;
    let var_y = yy.sub(&mu_yy)?;
    let cov = xy.sub(&mu_xy)?;

    let cs_num = cov.scale(two).add_scalar(c2);
    let cs_den = var_x.add(&var_y)?.add_scalar(c2);
    let cs_map = cs_num.div(&cs_den)?;
    let lum_num = mu_xy.scale(two).add_scalar(c1);
    let lum_den = mu_xx.add(&mu_yy)?.add_scalar(c1);
    let full_map = lum_num.div(&lum_den)?.mul(&cs_map)?;

    Ok(SsimTerms {
        full: full_map.mean()?,
        cs: cs_map.mean()?,
    })
}

/// Mean structural similarity over all valid window positions,
/// channel-averaged. Differentiable; lives in [−1, 1].
pub fn ssim<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, cfg: &SsimConfig) -> Result<Tensor<E>> {
    Ok(ssim_terms(a, b, cfg)?.full)
}

/// Largest usable scale count (≤ 5) for the image size and window.
pub fn default_n_scales(min_dim: usize, win: usize) -> usize {
    let mut n = 0;
    let mut dim = min_dim;
    while n < 5 && dim >= win {
        n += 1;
        dim /= 2;
    }
    n.max(1)
}

/// Multi-scale SSIM: the product over scales of floored contrast-structure
/// terms raised to the (renormalized) standard exponents, with luminance
/// applied at the coarsest scale. Differentiable.
pub fn ms_ssim<E: Scalar>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    cfg: &SsimConfig,
    n_scales: usize,
) -> Result<Tensor<E>> {
    if n_scales == 0 || n_scales > 5 {
        return Err(Error::Config(format!(
            "ms_ssim supports 1..=5 scales, got {n_scales}"
        )));
    }
    if a.shape().len() != 3 {
        return Err(Error::shape(
            "ms_ssim",
            format!("expected C×H×W, got {:?}", a.shape()),
        ));
    }
    let min_dim = a.shape()[1].min(a.shape()[2]);
    let supported = default_n_scales(min_dim, cfg.win);
    if n_scales > supported {
        return Err(Error::shape(
            "ms_ssim",
            format!(
                "image min dimension {min_dim} supports at most n_scales = {supported} \
                 with window {}, got {n_scales}",
                cfg.win
            ),
        ));
    }
    let weight_sum: f64 = MS_SSIM_WEIGHTS[..n_scales].iter().sum();
    let floor = E::from_f64(MS_SSIM_TERM_FLOOR);

    let mut ca = a.clone();
    let mut cb = b.clone();
    let mut value: Option<Tensor<E>> = None;
    for scale in 0..n_scales {
        let weight = E::from_f64(MS_SSIM_WEIGHTS[scale] / weight_sum);
        let terms = ssim_terms(&ca, &cb, cfg)?;
        let term = if scale + 1 == n_scales {
            terms.full
        } else {
            terms.cs
        };
        let powered = term.pow_floor(weight, floor);
        value = Some(match value {
            None => powered,
            Some(v) => v.mul(&powered)?,
        });
        if scale + 1 < n_scales {
            ca = ca.avg_pool2()?;
            cb = cb.avg_pool2()?;
        }
    }
    Ok(value.expect("n_scales >= 1"))
}

/// Squared Fréchet (2-Wasserstein) distance between the Gaussian fits of two
/// feature sets: `‖μa−μb‖² + Tr(Σa + Σb − 2(Σa Σb)^{1/2})`.
///
/// The matrix square roots use symmetric eigendecomposition with negative
/// eigenvalues clamped to zero.
pub fn ffd_from_features(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    let d = set_a
        .first()
        .or_else(|| set_b.first())
        .map(|v| v.len())
        .ok_or_else(|| Error::Data("ffd: empty feature sets".to_string()))?;
    for (name, set) in [("a", set_a), ("b", set_b)] {
        if set.len() < d + 1 {
            return Err(Error::Data(format!(
                "ffd: set {name} has {} samples; needs at least d+1 = {} for a {d}-dim covariance",
                set.len(),
                d + 1
            )));
        }
        if set.iter().any(|v| v.len() != d) {
            return Err(Error::Data(format!(
                "ffd: inconsistent feature dimension in set {name}"
            )));
        }
    }

    let stats = |set: &[Vec<f64>]| {
        let n = set.len();
        let mut mu = DVector::zeros(d);
        for v in set {
            mu += DVector::from_column_slice(v);
        }
        mu /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for v in set {
            let c = DVector::from_column_slice(v) - &mu;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
        (mu, cov)
    };
    let (mu_a, cov_a) = stats(set_a);
    let (mu_b, cov_b) = stats(set_b);

    let sqrt_sym = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let sym = (m + m.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let sqrt_vals =
            DVector::from_iterator(d, eig.eigenvalues.iter().map(|&l: &f64| l.max(0.0).sqrt()));
        &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
    };

    let sqrt_a = sqrt_sym(&cov_a);
    let inner = &sqrt_a * &cov_b * &sqrt_a;
    let sqrt_inner = sqrt_sym(&inner);

    let mean_term = (&mu_a - &mu_b).norm_squared();
    let value = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * sqrt_inner.trace();
    Ok(value.max(0.0))
}

/// Fréchet feature distance between two image sets under a pooled feature
/// map (the frozen extractor, global-averaged per stage).
pub fn frechet_feature_distance<F>(
    set_a: &[TensorData<f32>],
    set_b: &[TensorData<f32>],
    features: F,
) -> Result<f64>
where
    F: Fn(&TensorData<f32>) -> Result<Vec<f64>>,
{
    let fa = set_a.iter().map(&features).collect::<Result<Vec<_>>>()?;
    let fb = set_b.iter().map(&features).collect::<Result<Vec<_>>>()?;
    ffd_from_features(&fa, &fb)
}

/// Per-sample metric row.
#[derive(Debug, Clone)]
pub struct SampleMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
}

/// Mean ± sample-std pair, displayed `"20.93±3.25"`-style.
#[derive(Debug, Clone, Copy)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn over(values: impl Iterator<Item = f64>) -> MeanStd {
        let vs: Vec<f64> = values.collect();
        let n = vs.len() as f64;
        let mean = vs.iter().sum::<f64>() / n;
        let std = if vs.len() > 1 {
            (vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2}±{:.2}", self.mean, self.std)
    }
}

/// Evaluation report over a sample set.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub samples: Vec<SampleMetrics>,
    pub ffd: Option<f64>,
}

impl MetricReport {
    pub fn psnr_stats(&self) -> MeanStd {
        MeanStd::over(self.samples.iter().map(|s| s.psnr.min(PSNR_CAP_DB)))
    }

    pub fn ssim_stats(&self) -> MeanStd {
        MeanStd::over(self.samples.iter().map(|s| s.ssim))
    }

    pub fn ms_ssim_stats(&self) -> MeanStd {
        MeanStd::over(self.samples.iter().map(|s| s.ms_ssim))
    }

    /// CSV with one row per sample and a final aggregate row; the aggregate
    /// row carries the set-level ffd when present.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,psnr,ssim,ms_ssim\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                s.id, s.psnr, s.ssim, s.ms_ssim
            ));
        }
        if !self.samples.is_empty() {
            out.push_str(&format!(
                "aggregate,{},{},{}",
                self.psnr_stats(),
                self.ssim_stats(),
                self.ms_ssim_stats()
            ));
            if let Some(ffd) = self.ffd {
                out.push_str(&format!(",{ffd:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_basics() {
        let a = TensorData::new(vec![2, 2], vec![0.1, -0.2, 0.5, 0.9]).unwrap();
        assert!(psnr(&a, &a, 2.0).unwrap().is_infinite());

        // MSE equal to data_range² gives exactly 0 dB
        let zero = TensorData::zeros(vec![4]);
        let two = TensorData::full(vec![4], 2.0);
        assert!((psnr(&zero, &two, 2.0).unwrap()).abs() < 1e-12);

        // constant offset 0.2 on range 2: 10·log10(4/0.04) = 20 dB
        let b = TensorData::full(vec![4], 0.2);
        let got = psnr(&zero, &b, 2.0).unwrap();
        assert!((got - 20.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn psnr_is_shift_covariant() {
        let a = TensorData::new(vec![4], vec![0.1, -0.3, 0.2, 0.0]).unwrap();
        let b = TensorData::new(vec![4], vec![0.0, 0.1, -0.1, 0.4]).unwrap();
        let p0 = psnr(&a, &b, 2.0).unwrap();
        let c = 0.17;
        let p1 = psnr(&a.map(|v| v + c), &b.map(|v| v + c), 2.0).unwrap();
        assert!((p0 - p1).abs() < 1e-9);
    }

    #[test]
    fn psnr_shape_mismatch() {
        let a = TensorData::<f64>::zeros(vec![4]);
        let b = TensorData::<f64>::zeros(vec![5]);
        assert!(psnr(&a, &b, 2.0).is_err());
    }

    #[test]
    fn ssim_self_is_one_and_window_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = TensorData::<f64>::randn(vec![3, 16, 16], &mut rng).map(|v| v.tanh());
        let t = Tensor::constant(a.clone());
        let s = ssim(&t, &t, &SsimConfig::default())
            .unwrap()
            .item()
            .unwrap();
        assert!((s - 1.0).abs() < 1e-9);

        let neg = Tensor::constant(a.map(|v| -v));
        let s_neg = ssim(&t, &neg, &SsimConfig::default())
            .unwrap()
            .item()
            .unwrap();
        assert!(s_neg < s);

        let small = Tensor::constant(TensorData::<f64>::zeros(vec![1, 8, 8]));
        assert!(ssim(&small, &small, &SsimConfig::default()).is_err());
    }

    #[test]
    fn default_scale_arithmetic() {
        assert_eq!(default_n_scales(256, 11), 5);
        assert_eq!(default_n_scales(64, 11), 3);
        assert_eq!(default_n_scales(16, 11), 1);
        assert_eq!(default_n_scales(8, 11), 1); // floor; ssim itself errors there
        assert_eq!(default_n_scales(8, 5), 1);
        assert_eq!(default_n_scales(20, 5), 3);
    }

    #[test]
    fn ms_ssim_self_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = TensorData::<f64>::randn(vec![3, 64, 64], &mut rng).map(|v| v.tanh());
        let t = Tensor::constant(a);
        let v = ms_ssim(&t, &t, &SsimConfig::default(), 3)
            .unwrap()
            .item()
            .unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn ms_ssim_rejects_oversized_scale_request() {
        let t = Tensor::constant(TensorData::<f64>::zeros(vec![3, 64, 64]));
        let err = ms_ssim(&t, &t, &SsimConfig::default(), 5).unwrap_err();
        assert!(err.to_string().contains("n_scales = 3"), "{err}");
    }

    #[test]
    fn ffd_identical_sets_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let set: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..4).map(|_| Scalar::standard_normal(&mut rng)).collect())
            .collect();
        let v = ffd_from_features(&set, &set).unwrap();
        assert!(v < 1e-6, "{v}");
    }

    #[test]
    fn ffd_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut draw = |shift: f64| -> Vec<Vec<f64>> {
            (0..24)
                .map(|_| {
                    (0..4)
                        .map(|_| {
                            let x: f64 = Scalar::standard_normal(&mut rng);
                            x + shift
                        })
                        .collect()
                })
                .collect()
        };
        let a = draw(0.0);
        let b = draw(0.8);
        let ab = ffd_from_features(&a, &b).unwrap();
        let ba = ffd_from_features(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-6);
        assert!(ab > 0.1);
    }

    #[test]
    fn ffd_rejects_small_sets() {
        let set: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64; 4]).collect();
        let err = ffd_from_features(&set, &set).unwrap_err();
        assert!(err.to_string().contains("at least d+1 = 5"), "{err}");
    }

    #[test]
    fn report_csv_shape() {
        let report = MetricReport {
            samples: vec![
                SampleMetrics {
                    id: "s0".into(),
                    psnr: f64::INFINITY,
                    ssim: 1.0,
                    ms_ssim: 1.0,
                },
                SampleMetrics {
                    id: "s1".into(),
                    psnr: 21.5,
                    ssim: 0.5,
                    ms_ssim: 0.6,
                },
            ],
            ffd: Some(3.25),
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "sample_id,psnr,ssim,ms_ssim");
        assert!(lines[1].starts_with("s0,inf,"));
        let agg = lines[3];
        assert!(agg.starts_with("aggregate,"));
        // sentinel capped at 100 dB in the aggregate
        assert!(agg.contains("60.75±"), "{agg}");
        assert!(agg.ends_with(",3.250000"), "{agg}");
    }
}
