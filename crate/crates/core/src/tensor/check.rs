//! Finite-difference gradient verification.

use super::{backward, Graph, Scalar, Tensor, TensorData};
use crate::error::{Error, Result};

/// Compares the recorded gradient of `f` at `x` against central differences.
///
/// Returns the worst relative error over all coordinates,
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
/// Non-finite values anywhere in the evaluation are an error, never a silent
/// pass.
pub fn finite_diff_check<E, F>(f: F, x: &TensorData<E>, eps: f64) -> Result<f64>
where
    E: Scalar,
    F: Fn(&Tensor<E>) -> Result<Tensor<E>>,
{
    let graph = Graph::new();
    let leaf = graph.leaf(x.clone());
    let loss = f(&leaf)?;
    if loss.numel() != 1 {
        return Err(Error::shape(
            "finite_diff_check",
            format!("f must be scalar-valued, got {:?}", loss.shape()),
        ));
    }
    if !loss.value().all_finite() {
        return Err(Error::NonFinite(
            "finite_diff_check: f(x) is not finite".to_string(),
        ));
    }
    let grads = backward(&loss)?;
    let analytic = grads
        .wrt(&leaf)
        .ok_or_else(|| Error::NonFinite("finite_diff_check: no gradient reached x".to_string()))?
        .to_vec();
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(
            "finite_diff_check: analytic gradient is not finite".to_string(),
        ));
    }

    let eval = |data: &TensorData<E>| -> Result<f64> {
        let v = f(&Tensor::constant(data.clone()))?.item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite(
                "finite_diff_check: perturbed evaluation is not finite".to_string(),
            ));
        }
        Ok(v.as_f64())
    };

    let mut probe = x.clone();
    let mut max_rel = 0.0f64;
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + E::from_f64(eps);
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - E::from_f64(eps);
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i].as_f64();
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
