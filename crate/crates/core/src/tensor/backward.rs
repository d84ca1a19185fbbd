//! Reverse sweep over the tape.

use super::conv::conv2d_backward;
use super::{Op, Scalar, Tensor};
use crate::error::{Error, Result};

/// Gradient buffers produced by [`backward`], indexed by tape position.
pub struct Gradients<E> {
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Scalar> Gradients<E> {
    /// Gradient of the loss w.r.t. `t`, if `t` participated in the graph.
    pub fn wrt(&self, t: &Tensor<E>) -> Option<&[E]> {
        let id = t.node_id()?;
        self.grads.get(id)?.as_deref()
    }
}

/// Computes `∂loss/∂leaf` for every differentiable leaf reachable from
/// `loss`. The loss must be a scalar recorded on a graph.
pub fn backward<E: Scalar>(loss: &Tensor<E>) -> Result<Gradients<E>> {
    let (graph, loss_id) = match (loss.graph(), loss.node_id()) {
        (Some(g), Some(id)) => (g.clone(), id),
        _ => {
            return Err(Error::shape(
                "backward",
                "loss is not recorded on a graph (no differentiable inputs)".to_string(),
            ))
        }
    };
    if loss.numel() != 1 {
        return Err(Error::shape(
            "backward",
            format!("loss must be scalar, got shape {:?}", loss.shape()),
        ));
    }

    graph.with_nodes(|nodes| {
        let mut grads: Vec<Option<Vec<E>>> = vec![None; nodes.len()];
        grads[loss_id] = Some(vec![E::one()]);

        // Nodes were appended in topological order; one reverse sweep visits
        // every contributing node exactly once.
        for id in (0..=loss_id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];

            let accum = |grads: &mut Vec<Option<Vec<E>>>, input: usize, contrib: Vec<E>| {
                if !nodes[input].needs_grad {
                    return;
                }
                match &mut grads[input] {
                    Some(buf) => {
                        for (b, c) in buf.iter_mut().zip(contrib.iter()) {
                            *b = *b + *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            };

            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g); // keep leaf gradients for retrieval
                    continue;
                }
                Op::Add(a, b) => {
                    accum(&mut grads, *a, g.clone());
                    accum(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accum(&mut grads, *a, g.clone());
                    accum(&mut grads, *b, g.iter().map(|&v| -v).collect());
                }
                Op::Mul(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    accum(
                        &mut grads,
                        *a,
                        g.iter().zip(bv.iter()).map(|(&gv, &y)| gv * y).collect(),
                    );
                    accum(
                        &mut grads,
                        *b,
                        g.iter().zip(av.iter()).map(|(&gv, &x)| gv * x).collect(),
                    );
                }
                Op::Div(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    accum(
                        &mut grads,
                        *a,
                        g.iter().zip(bv.iter()).map(|(&gv, &y)| gv / y).collect(),
                    );
                    accum(
                        &mut grads,
                        *b,
                        g.iter()
                            .zip(av.iter().zip(bv.iter()))
                            .map(|(&gv, (&x, &y))| -gv * x / (y * y))
                            .collect(),
                    );
                }
                Op::Scale(a, c) => {
                    accum(&mut grads, *a, g.iter().map(|&v| v * *c).collect());
                }
                Op::AddScalar(a, _) => {
                    accum(&mut grads, *a, g.clone());
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    accum(
                        &mut grads,
                        *a,
                        g.iter()
                            .zip(y.iter())
                            .map(|(&gv, &yv)| gv * (E::one() - yv * yv))
                            .collect(),
                    );
                }
                Op::Relu(a) => {
                    let x = nodes[*a].value.data();
                    accum(
                        &mut grads,
                        *a,
                        g.iter()
                            .zip(x.iter())
                            .map(|(&gv, &xv)| if xv > E::zero() { gv } else { E::zero() })
                            .collect(),
                    );
                }
                Op::PowFloor { input, exp, floor } => {
                    let x = nodes[*input].value.data();
                    accum(
                        &mut grads,
                        *input,
                        g.iter()
                            .zip(x.iter())
                            .map(|(&gv, &xv)| {
                                if xv > *floor {
                                    gv * *exp * xv.powf(*exp - E::one())
                                } else {
                                    E::zero()
                                }
                            })
                            .collect(),
                    );
                }
                Op::Mean(a) => {
                    let n = nodes[*a].value.numel();
                    let s = g[0] / E::from_f64(n as f64);
                    accum(&mut grads, *a, vec![s; n]);
                }
                Op::Sum(a) => {
                    let n = nodes[*a].value.numel();
                    accum(&mut grads, *a, vec![g[0]; n]);
                }
                Op::L2Norm(a) => {
                    let x = nodes[*a].value.data();
                    let y = node.value.data()[0];
                    let contrib = if y == E::zero() {
                        vec![E::zero(); x.len()]
                    } else {
                        x.iter().map(|&xv| g[0] * xv / y).collect()
                    };
                    accum(&mut grads, *a, contrib);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (d_input, d_kernel) = conv2d_backward(
                        &nodes[*input].value,
                        &nodes[*kernel].value,
                        &g,
                        *stride,
                        *padding,
                    );
                    accum(&mut grads, *input, d_input);
                    accum(&mut grads, *kernel, d_kernel);
                }
                Op::AddBias2d { map, bias } => {
                    let shape = nodes[*map].value.shape();
                    let (c, hw) = (shape[0], shape[1] * shape[2]);
                    let d_bias: Vec<E> = (0..c)
                        .map(|ci| g[ci * hw..(ci + 1) * hw].iter().copied().sum())
                        .collect();
                    accum(&mut grads, *map, g.clone());
                    accum(&mut grads, *bias, d_bias);
                }
                Op::Linear {
                    weight,
                    input,
                    bias,
                } => {
                    let w = nodes[*weight].value.data();
                    let x = nodes[*input].value.data();
                    let (o, i) = (nodes[*weight].value.shape()[0], x.len());
                    let mut d_w = vec![E::zero(); o * i];
                    for oi in 0..o {
                        for ii in 0..i {
                            d_w[oi * i + ii] = g[oi] * x[ii];
                        }
                    }
                    let d_x: Vec<E> = (0..i)
                        .map(|ii| (0..o).map(|oi| g[oi] * w[oi * i + ii]).sum())
                        .collect();
                    accum(&mut grads, *weight, d_w);
                    accum(&mut grads, *input, d_x);
                    accum(&mut grads, *bias, g.clone());
                }
                Op::ConcatC(a, b) => {
                    let na = nodes[*a].value.numel();
                    accum(&mut grads, *a, g[..na].to_vec());
                    accum(&mut grads, *b, g[na..].to_vec());
                }
                Op::AvgPool2(a) => {
                    let shape = nodes[*a].value.shape();
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let (oh, ow) = (h / 2, w / 2);
                    let quarter = E::from_f64(0.25);
                    let mut d_in = vec![E::zero(); c * h * w];
                    for ci in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = g[ci * oh * ow + oy * ow + ox] * quarter;
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        d_in[ci * h * w + (2 * oy + dy) * w + 2 * ox + dx] = gv;
                                    }
                                }
                            }
                        }
                    }
                    accum(&mut grads, *a, d_in);
                }
                Op::Upsample2(a) => {
                    let shape = nodes[*a].value.shape();
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut d_in = vec![E::zero(); c * h * w];
                    for ci in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let idx = ci * h * w + (oy / 2) * w + ox / 2;
                                d_in[idx] = d_in[idx] + g[ci * oh * ow + oy * ow + ox];
                            }
                        }
                    }
                    accum(&mut grads, *a, d_in);
                }
            }
        }

        Ok(Gradients { grads })
    })
}
