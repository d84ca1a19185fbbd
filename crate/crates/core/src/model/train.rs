//! One optimization step over a batch.

use rand::Rng;

use super::adam::Adam;
use super::loss::{total_loss, LossConfig};
use super::params::Ctx;
use super::Rbdm;
use crate::bridge::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tensor::{backward, Graph, Scalar, Tensor, TensorData};

/// One paired sample.
#[derive(Debug, Clone)]
pub struct TrainItem<E> {
    pub x0: TensorData<E>,
    pub y0: TensorData<E>,
}

/// Batch-mean loss components of one step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
}

/// Builds the batch loss graph (one uniformly drawn `t` and noise draw per
/// sample), backpropagates, and applies one Adam update.
pub fn train_step<E: Scalar, R: Rng + ?Sized>(
    model: &mut Rbdm<E>,
    opt: &mut Adam<E>,
    batch: &[TrainItem<E>],
    schedule: &NoiseSchedule,
    loss_cfg: &LossConfig,
    rng: &mut R,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::Config("train_step: empty batch".to_string()));
    }
    let mut stats = StepStats::default();
    let grads = {
        let graph = Graph::new();
        let ctx = Ctx::train(&model.params, &graph);
        let mut batch_total: Option<Tensor<E>> = None;
        for item in batch {
            let t = rng.gen_range(1..=schedule.t_max());
            let epsilon = TensorData::randn(item.x0.shape().to_vec(), rng);
            let x0 = Tensor::constant(item.x0.clone());
            let y0 = Tensor::constant(item.y0.clone());
            let (loss, breakdown, _cache) =
                total_loss(model, &ctx, &x0, &y0, t, epsilon, schedule, loss_cfg)?;
            stats.l1 += breakdown.l1;
            stats.l2 += breakdown.l2;
            stats.l3 += breakdown.l3;
            stats.total += breakdown.total;
            batch_total = Some(match batch_total {
                None => loss,
                Some(acc) => acc.add(&loss)?,
            });
        }
        let n = batch.len() as f64;
        stats.l1 /= n;
        stats.l2 /= n;
        stats.l3 /= n;
        stats.total /= n;

        let mean_loss = batch_total.expect("non-empty batch").scale(E::from_f64(1.0 / n));
        let grads = backward(&mean_loss)?;
        model
            .params
            .trainable_ids()
            .map(|id| Ok((id, ctx.grad_required(&grads, id)?)))
            .collect::<Result<Vec<_>>>()?
    };
    opt.apply(&mut model.params, &grads)?;
    Ok(stats)
}
