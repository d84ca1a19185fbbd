//! Brownian-bridge diffusion machinery.
//!
//! The forward process pins a Gaussian bridge between a stain patch `x₀` and
//! the encoded polarization patch `ȳ₀`:
//!
//! ```text
//! x_t = (1 − t/T)·x₀ + (t/T)·ȳ₀ + sqrt(δ_t)·ε,   δ_t = 2t(T−t)/T²
//! ```
//!
//! The network is trained to predict the drift-plus-noise residual
//! `target = (t/T)(ȳ₀ − x₀) + sqrt(δ_t)·ε`, so that `x̂₀ = x_t − ε̂`.
//! The reverse sampler draws from the exact Gaussian bridge posterior
//! `q(x_s | x_t, x̂₀, ȳ₀)`, which supports skipping steps.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, TensorData};

/// Per-step interpolation and variance coefficients.
///
/// `m_t = t/T` runs 0→1 and `δ_t = 2t(T−t)/T²` vanishes at both endpoints
/// with maximum 1/2 at `t = T/2`; these correspond to a Brownian bridge with
/// diffusion scale `σ² = 2/T`, whose cross-covariance `Cov(x_s, x_t) =
/// 2s(T−t)/T²` (for `s ≤ t`) the posterior below relies on.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    t_max: usize,
    m: Vec<f64>,
    delta: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(t_max: usize) -> Result<Self> {
        if t_max < 2 {
            return Err(Error::Config(format!(
                "schedule needs at least 2 steps, got T={t_max}"
            )));
        }
        let tf = t_max as f64;
        let m = (0..=t_max).map(|t| t as f64 / tf).collect();
        let delta = (0..=t_max)
            .map(|t| 2.0 * t as f64 * (t_max - t) as f64 / (tf * tf))
            .collect();
        Ok(NoiseSchedule { t_max, m, delta })
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn m(&self, t: usize) -> f64 {
        self.m[t]
    }

    pub fn delta(&self, t: usize) -> f64 {
        self.delta[t]
    }

    /// Cross-covariance `c_{s,t} = 2s(T−t)/T²` of bridge states at `s ≤ t`.
    pub fn cross_cov(&self, s: usize, t: usize) -> f64 {
        let tf = self.t_max as f64;
        2.0 * s as f64 * (self.t_max - t) as f64 / (tf * tf)
    }

    fn check_t(&self, t: usize, op: &'static str) -> Result<()> {
        if t > self.t_max {
            return Err(Error::Config(format!(
                "{op}: step {t} out of range 0..={}",
                self.t_max
            )));
        }
        Ok(())
    }
}

/// One draw of the forward process at step `t`.
pub struct ForwardSample<E: Scalar> {
    /// Bridge state `x_t`.
    pub x_t: Tensor<E>,
    /// The residual the denoiser is trained to predict.
    pub target: Tensor<E>,
    /// The standard-normal draw used.
    pub epsilon: TensorData<E>,
    pub t: usize,
}

fn check_pair<E: Scalar>(op: &'static str, x0: &Tensor<E>, ybar0: &Tensor<E>) -> Result<()> {
    if x0.shape() != ybar0.shape() {
        return Err(Error::shape(
            op,
            format!("x0 {:?} vs ybar0 {:?}", x0.shape(), ybar0.shape()),
        ));
    }
    let lim = E::from_f64(1.0 + 1e-6);
    for (name, t) in [("x0", x0), ("ybar0", ybar0)] {
        if t.data().iter().any(|&v| v.abs() > lim || !v.is_finite()) {
            return Err(Error::Data(format!(
                "{op}: {name} has values outside [-1, 1]"
            )));
        }
    }
    Ok(())
}

/// Forward draw with an explicit noise tensor.
///
/// Built from tensor ops so that gradients flow into a graph-attached `ȳ₀`
/// (the encoder is trained through both the state and the target).
pub fn forward_sample_with_eps<E: Scalar>(
    x0: &Tensor<E>,
    ybar0: &Tensor<E>,
    t: usize,
    epsilon: TensorData<E>,
    schedule: &NoiseSchedule,
) -> Result<ForwardSample<E>> {
    check_pair("forward_sample", x0, ybar0)?;
    schedule.check_t(t, "forward_sample")?;
    if epsilon.shape() != x0.shape() {
        return Err(Error::shape(
            "forward_sample",
            format!("epsilon {:?} vs x0 {:?}", epsilon.shape(), x0.shape()),
        ));
    }
    let m = E::from_f64(schedule.m(t));
    let sd = E::from_f64(schedule.delta(t).sqrt());
    let noise = Tensor::constant(epsilon.clone());

    // x_t = (1−m)·x₀ + m·ȳ₀ + √δ·ε
    let x_t = x0
        .scale(E::one() - m)
        .add(&ybar0.scale(m))?
        .add(&noise.scale(sd))?;
    // target = m·(ȳ₀ − x₀) + √δ·ε
    let target = ybar0.sub(x0)?.scale(m).add(&noise.scale(sd))?;
    Ok(ForwardSample {
        x_t,
        target,
        epsilon,
        t,
    })
}

/// Forward draw with noise taken from `rng`.
pub fn forward_sample<E: Scalar, R: Rng + ?Sized>(
    x0: &Tensor<E>,
    ybar0: &Tensor<E>,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<ForwardSample<E>> {
    let epsilon = TensorData::randn(x0.shape().to_vec(), rng);
    forward_sample_with_eps(x0, ybar0, t, epsilon, schedule)
}

/// Reconstructs the starting state from a predicted residual: `x̂₀ = x_t − ε̂`.
/// No clamping; only the final sampler output is clamped.
pub fn estimate_x0<E: Scalar>(x_t: &Tensor<E>, eps_pred: &Tensor<E>) -> Result<Tensor<E>> {
    x_t.sub(eps_pred)
}

/// Mean/variance coefficients of the bridge posterior `q(x_s | x_t, x̂₀, ȳ₀)`:
///
/// ```text
/// mean = (1−m_s)·x̂₀ + m_s·ȳ₀ + ratio·(x_t − [(1−m_t)·x̂₀ + m_t·ȳ₀])
/// ratio = c_{s,t}/δ_t          variance = δ_s − c²_{s,t}/δ_t
/// ```
///
/// At `t = T` both `c` and `δ_t` vanish; the ratio is replaced by its limit
/// `s/T` and the variance by `δ_s`. At `s = 0` the posterior is the point
/// mass at `x̂₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoeffs {
    pub ratio: f64,
    pub variance: f64,
}

pub fn posterior_coeffs(schedule: &NoiseSchedule, t: usize, s: usize) -> Result<PosteriorCoeffs> {
    schedule.check_t(t, "posterior_step")?;
    if s >= t {
        return Err(Error::Config(format!(
            "posterior_step: target step {s} must precede source step {t}"
        )));
    }
    if t == schedule.t_max() {
        return Ok(PosteriorCoeffs {
            ratio: s as f64 / schedule.t_max() as f64,
            variance: schedule.delta(s),
        });
    }
    let c = schedule.cross_cov(s, t);
    let ratio = c / schedule.delta(t);
    let mut variance = schedule.delta(s) - c * c / schedule.delta(t);
    if variance < 0.0 {
        // Analytically ≥ 0 for s < t; only float rounding lands here.
        log::warn!(
            "posterior variance {variance:.3e} clamped to 0 at t={t}, s={s}"
        );
        variance = 0.0;
    }
    Ok(PosteriorCoeffs { ratio, variance })
}

/// Posterior mean for given states; exposed separately for deterministic tests.
pub fn posterior_mean<E: Scalar>(
    x_t: &Tensor<E>,
    x0_hat: &Tensor<E>,
    ybar0: &Tensor<E>,
    t: usize,
    s: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor<E>> {
    let coeffs = posterior_coeffs(schedule, t, s)?;
    let (m_s, m_t) = (
        E::from_f64(schedule.m(s)),
        E::from_f64(schedule.m(t)),
    );
    let ratio = E::from_f64(coeffs.ratio);
    let anchor_s = x0_hat.scale(E::one() - m_s).add(&ybar0.scale(m_s))?;
    let anchor_t = x0_hat.scale(E::one() - m_t).add(&ybar0.scale(m_t))?;
    anchor_s.add(&x_t.sub(&anchor_t)?.scale(ratio))
}

/// One reverse step: a draw from `q(x_s | x_t, x̂₀, ȳ₀)`.
pub fn posterior_step<E: Scalar, R: Rng + ?Sized>(
    x_t: &Tensor<E>,
    x0_hat: &Tensor<E>,
    ybar0: &Tensor<E>,
    t: usize,
    s: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor<E>> {
    if x_t.shape() != x0_hat.shape() || x_t.shape() != ybar0.shape() {
        return Err(Error::shape(
            "posterior_step",
            format!(
                "x_t {:?}, x0_hat {:?}, ybar0 {:?}",
                x_t.shape(),
                x0_hat.shape(),
                ybar0.shape()
            ),
        ));
    }
    let coeffs = posterior_coeffs(schedule, t, s)?;
    let mean = posterior_mean(x_t, x0_hat, ybar0, t, s, schedule)?;
    if coeffs.variance == 0.0 {
        return Ok(mean);
    }
    let sd = E::from_f64(coeffs.variance.sqrt());
    let noise = Tensor::constant(TensorData::randn(x_t.shape().to_vec(), rng));
    mean.add(&noise.scale(sd))
}

/// Anything that can predict the forward residual at a step: the trained
/// denoiser, or a test oracle.
pub trait NoisePredictor<E: Scalar> {
    fn predict(&self, x_t: &Tensor<E>, t: usize, ybar0: &Tensor<E>) -> Result<Tensor<E>>;
}

impl<E: Scalar, F> NoisePredictor<E> for F
where
    F: Fn(&Tensor<E>, usize, &Tensor<E>) -> Result<Tensor<E>>,
{
    fn predict(&self, x_t: &Tensor<E>, t: usize, ybar0: &Tensor<E>) -> Result<Tensor<E>> {
        self(x_t, t, ybar0)
    }
}

pub struct SampleOutput<E: Scalar> {
    /// Final state, clamped to [−1, 1].
    pub image: TensorData<E>,
    /// The visited states `x_T ... x_0` (n_steps + 1 frames) when requested.
    pub trajectory: Option<Vec<TensorData<E>>>,
}

/// Runs the skip-step reverse process from `x_T = ȳ₀` down to `x_0`.
///
/// `n_steps` must divide `T`; the visited steps are `T, T−T/n, …, 0`.
pub fn sample<E: Scalar, R: Rng + ?Sized>(
    predictor: &dyn NoisePredictor<E>,
    ybar0: &TensorData<E>,
    schedule: &NoiseSchedule,
    n_steps: usize,
    rng: &mut R,
    record_trajectory: bool,
) -> Result<SampleOutput<E>> {
    let t_max = schedule.t_max();
    if n_steps == 0 || t_max % n_steps != 0 {
        return Err(Error::Config(format!(
            "sample steps {n_steps} must evenly divide T={t_max}"
        )));
    }
    let stride = t_max / n_steps;
    let ybar = Tensor::constant(ybar0.clone());
    let mut x = ybar.clone();
    let mut trajectory = record_trajectory.then(|| vec![x.detach()]);

    let mut t = t_max;
    while t > 0 {
        let s = t - stride;
        let eps_pred = predictor.predict(&x, t, &ybar)?;
        let x0_hat = estimate_x0(&x, &eps_pred)?;
        x = posterior_step(&x, &x0_hat, &ybar, t, s, schedule, rng)?;
        if let Some(frames) = &mut trajectory {
            frames.push(x.detach());
        }
        t = s;
    }

    let one = E::one();
    let image = x.value().map(|v| v.min(one).max(-one));
    if !image.all_finite() {
        return Err(Error::NonFinite(
            "sample produced non-finite values".to_string(),
        ));
    }
    Ok(SampleOutput { image, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_endpoints_and_symmetry() {
        for t_max in [4usize, 100, 500] {
            let s = NoiseSchedule::new(t_max).unwrap();
            assert_eq!(s.delta(0), 0.0);
            assert_eq!(s.delta(t_max), 0.0);
            assert_eq!(s.m(0), 0.0);
            assert_eq!(s.m(t_max), 1.0);
            assert!((s.delta(t_max / 2) - 0.5).abs() < 1e-15);
            for t in 0..=t_max {
                assert!((s.delta(t) - s.delta(t_max - t)).abs() < 1e-12);
                if t > 0 {
                    assert!(s.m(t) > s.m(t - 1));
                    if t < t_max {
                        assert!(s.delta(t) > 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn schedule_t4_values() {
        let s = NoiseSchedule::new(4).unwrap();
        let expect = [0.0, 0.375, 0.5, 0.375, 0.0];
        for (t, &e) in expect.iter().enumerate() {
            assert!((s.delta(t) - e).abs() < 1e-15, "delta({t})");
        }
    }

    #[test]
    fn schedule_rejects_tiny_t() {
        assert!(matches!(NoiseSchedule::new(1), Err(Error::Config(_))));
        assert!(matches!(NoiseSchedule::new(0), Err(Error::Config(_))));
    }

    #[test]
    fn forward_scalar_hand_values() {
        let s = NoiseSchedule::new(4).unwrap();
        let x0 = Tensor::<f64>::scalar_value(1.0);
        let ybar = Tensor::scalar_value(-1.0);
        let eps = TensorData::scalar(0.5);
        let fs = forward_sample_with_eps(&x0, &ybar, 2, eps, &s).unwrap();
        let sqrt_half = 0.5f64.sqrt();
        assert!((fs.x_t.item().unwrap() - sqrt_half * 0.5).abs() < 1e-12);
        assert!((fs.target.item().unwrap() - (-1.0 + sqrt_half * 0.5)).abs() < 1e-12);
        // estimate_x0 inverts the draw exactly
        let rec = estimate_x0(&fs.x_t, &fs.target).unwrap();
        assert!((rec.item().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_endpoints() {
        let s = NoiseSchedule::new(4).unwrap();
        let x0 = Tensor::<f64>::from_vec(vec![2, 2], vec![0.1, -0.4, 0.9, 0.0]).unwrap();
        let ybar = Tensor::from_vec(vec![2, 2], vec![-0.5, 0.5, 0.25, -1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // t = T: x_T = ȳ₀ exactly (δ_T = 0 kills the drawn noise)
        let fs = forward_sample(&x0, &ybar, 4, &s, &mut rng).unwrap();
        assert_eq!(fs.x_t.data(), ybar.data());
        // t = 0: x_0 = x₀ unchanged
        let fs = forward_sample(&x0, &ybar, 0, &s, &mut rng).unwrap();
        assert_eq!(fs.x_t.data(), x0.data());
        // out of range
        assert!(forward_sample(&x0, &ybar, 5, &s, &mut rng).is_err());
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let s = NoiseSchedule::new(4).unwrap();
        let x0 = Tensor::<f64>::from_vec(vec![2], vec![0.0, 0.0]).unwrap();
        let wrong = Tensor::from_vec(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(forward_sample(&x0, &wrong, 1, &s, &mut rng).is_err());
        let oob = Tensor::from_vec(vec![2], vec![0.0, 1.5]).unwrap();
        assert!(forward_sample(&x0, &oob, 1, &s, &mut rng).is_err());
    }

    #[test]
    fn estimate_x0_zero_prediction_returns_x_t() {
        let x_t = Tensor::<f64>::from_vec(vec![3], vec![0.3, -0.2, 0.8]).unwrap();
        let zero = Tensor::constant(TensorData::zeros(vec![3]));
        let got = estimate_x0(&x_t, &zero).unwrap();
        assert_eq!(got.data(), x_t.data());
    }

    #[test]
    fn posterior_scalar_hand_values() {
        // T=4, t=3, s=2, x̂₀=1, ȳ₀=−1, x_t=0.
        // c = 2·2·1/16 = 0.25, δ₃ = 0.375, δ₂ = 0.5;
        // anchor at t is (1−0.75)·1 + 0.75·(−1) = −0.5, so the mean is
        // 0 + (0.25/0.375)·(0 − (−0.5)) = 1/3; variance 0.5 − 0.0625/0.375 = 1/3.
        // (Verified against the Monte-Carlo Gaussian-conditioning oracle in
        // the integration suite.)
        let s = NoiseSchedule::new(4).unwrap();
        let coeffs = posterior_coeffs(&s, 3, 2).unwrap();
        assert!((coeffs.ratio - 0.25 / 0.375).abs() < 1e-15);
        assert!((coeffs.variance - 1.0 / 3.0).abs() < 1e-12);
        let mean = posterior_mean(
            &Tensor::<f64>::scalar_value(0.0),
            &Tensor::scalar_value(1.0),
            &Tensor::scalar_value(-1.0),
            3,
            2,
            &s,
        )
        .unwrap();
        assert!((mean.item().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_s0_is_deterministic_x0_hat() {
        let s = NoiseSchedule::new(4).unwrap();
        let x_t = Tensor::<f64>::from_vec(vec![2], vec![0.4, -0.1]).unwrap();
        let x0_hat = Tensor::from_vec(vec![2], vec![0.9, -0.7]).unwrap();
        let ybar = Tensor::from_vec(vec![2], vec![-0.3, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 1..=4 {
            let out = posterior_step(&x_t, &x0_hat, &ybar, t, 0, &s, &mut rng).unwrap();
            assert_eq!(out.data(), x0_hat.data(), "t={t}");
        }
    }

    #[test]
    fn posterior_t_equals_t_max_uses_limit() {
        let s = NoiseSchedule::new(4).unwrap();
        let c = posterior_coeffs(&s, 4, 2).unwrap();
        assert!((c.ratio - 0.5).abs() < 1e-15);
        assert!((c.variance - s.delta(2)).abs() < 1e-15);
    }

    #[test]
    fn posterior_rejects_bad_order() {
        let s = NoiseSchedule::new(4).unwrap();
        assert!(posterior_coeffs(&s, 2, 2).is_err());
        assert!(posterior_coeffs(&s, 2, 3).is_err());
        assert!(posterior_coeffs(&s, 5, 1).is_err());
    }

    #[test]
    fn sampler_visits_expected_steps() {
        let schedule = NoiseSchedule::new(500).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ybar = TensorData::<f64>::zeros(vec![1, 4, 4]);
        let mut visited = std::cell::RefCell::new(Vec::new());
        let pred = |x_t: &Tensor<f64>, t: usize, _y: &Tensor<f64>| {
            visited.borrow_mut().push(t);
            Ok(x_t.scale(0.0))
        };
        sample(&pred, &ybar, &schedule, 5, &mut rng, false).unwrap();
        assert_eq!(*visited.get_mut(), vec![500, 400, 300, 200, 100]);
    }

    #[test]
    fn sampler_rejects_nondivisible_steps() {
        let schedule = NoiseSchedule::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ybar = TensorData::<f64>::zeros(vec![1, 2, 2]);
        let pred = |x_t: &Tensor<f64>, _t: usize, _y: &Tensor<f64>| Ok(x_t.clone());
        assert!(sample(&pred, &ybar, &schedule, 3, &mut rng, false).is_err());
    }

    #[test]
    fn oracle_predictor_reconstructs_x0() {
        // With ε̂ equal to the true residual, x̂₀ = x₀ at every step and the
        // s = 0 step returns it deterministically.
        let schedule = NoiseSchedule::new(100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = TensorData::<f64>::randn(vec![3, 8, 8], &mut rng).map(|v| 0.9 * v.tanh());
        let ybar = TensorData::<f64>::randn(vec![3, 8, 8], &mut rng).map(|v| 0.9 * v.tanh());
        let x0_t = Tensor::constant(x0.clone());
        let pred = |x_t: &Tensor<f64>, _t: usize, _y: &Tensor<f64>| x_t.sub(&x0_t);
        let out = sample(&pred, &ybar, &schedule, 5, &mut rng, true).unwrap();
        let mse: f64 = out
            .image
            .data()
            .iter()
            .zip(x0.data().iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            / x0.numel() as f64;
        assert!(mse < 1e-6, "mse={mse}");
        assert_eq!(out.trajectory.unwrap().len(), 6);
    }

    #[test]
    fn untrained_predictor_output_is_bounded() {
        let schedule = NoiseSchedule::new(20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise_src = TensorData::<f64>::randn(vec![3, 8, 8], &mut rng);
        let pred = move |x_t: &Tensor<f64>, _t: usize, _y: &Tensor<f64>| {
            x_t.scale(0.1).add(&Tensor::constant(noise_src.clone()))
        };
        let ybar = TensorData::<f64>::zeros(vec![3, 8, 8]);
        let out = sample(&pred, &ybar, &schedule, 4, &mut rng, false).unwrap();
        assert!(out.image.data().iter().all(|v| v.abs() <= 1.0));
    }
}
